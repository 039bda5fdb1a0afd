//! Dataset directories.
//!
//! ```text
//! root/violent/<name>.vclip        root/violent/<name>/frame_0000.png ...
//! root/nonviolent/<name>.vclip     root/nonviolent/<name>/frame_0000.png ...
//! root/manifest.csv                (written by write_dataset_dir)
//! ```

use std::path::{Path, PathBuf};

use super::frames::{resize_letterbox, sample_frames};
use super::vclip::{read_clip, write_clip};
use super::{Frame, Label, VideoClip};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

/// How raw clips are brought to the model's input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub frame_count: usize,
    /// Square letterbox side; `None` keeps the native resolution.
    pub frame_size: Option<usize>,
    /// 1 reads images as luma, 3 as RGB.
    pub channels: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            frame_count: super::DEFAULT_FRAME_COUNT,
            frame_size: Some(super::DEFAULT_FRAME_SIZE),
            channels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: Label,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn read_image(path: &Path, channels: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (data, w, h) = match channels {
        1 => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            (g.into_raw(), w, h)
        }
        3 => {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            (rgb.into_raw(), w, h)
        }
        other => return Err(Error::InvalidArgument(format!("unsupported channel count {other}"))),
    };
    Frame::new(
        h as usize,
        w as usize,
        channels,
        data.into_iter().map(|v| v as f32 / 255.0).collect(),
    )
}

/// Resamples to `frame_count` frames and letterboxes to `frame_size`.
pub(crate) fn preprocess(mut clip: VideoClip, opts: &IngestOptions) -> Result<VideoClip> {
    if clip.frames.len() != opts.frame_count {
        clip.frames = sample_frames(&clip.frames, opts.frame_count)?;
    }
    if let Some(size) = opts.frame_size {
        let (_, h, w, _) = clip.shape();
        if (h, w) != (size, size) {
            clip.frames = clip
                .frames
                .iter()
                .map(|f| resize_letterbox(f, size))
                .collect::<Result<_>>()?;
        }
    }
    Ok(clip)
}

/// Reads a directory of frame images in lexicographic order and
/// preprocesses it.
pub fn read_frame_dir(dir: &Path, opts: &IngestOptions, label: Option<Label>) -> Result<VideoClip> {
    let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
    if files.is_empty() {
        return Err(Error::Empty("frame directory"));
    }
    let frames = files
        .iter()
        .map(|p| read_image(p, opts.channels))
        .collect::<Result<Vec<_>>>()?;
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    preprocess(VideoClip::new(frames, label, id)?, opts)
}

/// Saves a frame as an 8-bit PNG (luma for one channel, RGB for three).
pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let color = match frame.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        other => {
            return Err(Error::InvalidArgument(format!(
                "cannot save a {other}-channel frame as PNG"
            )))
        }
    };
    image::save_buffer(path, &bytes, w, h, color).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes every frame as `dir/frame_%04d.png`; returns the frame count.
pub fn write_frame_dir(clip: &VideoClip, dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in clip.frames.iter().enumerate() {
        write_frame_png(f, &dir.join(format!("frame_{i:04}.png")))?;
    }
    Ok(clip.frames.len())
}

/// Loads every clip under `root/{violent,nonviolent}`, violent first, each
/// class in lexicographic order.
pub fn load_dataset_dir(root: &Path, opts: &IngestOptions) -> Result<Vec<VideoClip>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory does not exist"),
        ));
    }
    let mut clips = Vec::new();
    for label in Label::ALL {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            continue;
        }
        for path in sorted_entries(&dir)? {
            let mut clip = if path.is_dir() {
                read_frame_dir(&path, opts, Some(label))?
            } else if path.extension().is_some_and(|e| e == "vclip") {
                let mut c = preprocess(read_clip(&path)?, opts)?;
                c.label = Some(label);
                c
            } else {
                continue;
            };
            clip.source_id = format!("{}/{}", label.dir_name(), clip.source_id);
            clips.push(clip);
        }
    }
    if clips.is_empty() {
        return Err(Error::format(
            Some(root),
            "no clips found under violent/ or nonviolent/",
        ));
    }
    Ok(clips)
}

/// Writes labeled clips as `root/<label>/<source_id>.vclip` plus a
/// `manifest.csv` of `path,label` rows.
pub fn write_dataset_dir(root: &Path, clips: &[VideoClip]) -> Result<Vec<DatasetEntry>> {
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        let label = clip
            .label
            .ok_or_else(|| Error::InvalidArgument(format!("clip {} is unlabeled", clip.source_id)))?;
        let dir = root.join(label.dir_name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = clip.source_id.rsplit('/').next().unwrap_or(&clip.source_id);
        let file = format!("{stem}.vclip");
        write_clip(clip, &dir.join(&file))?;
        entries.push(DatasetEntry {
            path: format!("{}/{file}", label.dir_name()),
            label,
        });
    }
    let mut manifest = String::from("path,label\n");
    for e in &entries {
        manifest.push_str(&format!("{},{}\n", e.path, e.label));
    }
    let mpath = root.join(MANIFEST_FILE);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(entries)
}
