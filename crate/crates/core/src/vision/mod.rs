//! Frame preprocessing, augmentation, synthetic data and clip storage.

mod augment;
mod dataset;
mod frames;
mod synthetic;
mod vclip;

pub use augment::{augment_clip, flip, gaussian_blur, gaussian_kernel, perturb_uniform, rotate, AugmentSpec, FlipAxis};
pub use dataset::{
    load_dataset_dir, read_frame_dir, write_dataset_dir, write_frame_dir, write_frame_png, DatasetEntry, IngestOptions,
    MANIFEST_FILE,
};
pub use frames::{letterbox_geometry, resize_letterbox, sample_frames, sample_indices, Letterbox};
pub use synthetic::{
    class_motion_statistics, generate_synthetic, inter_frame_difference, MotionStatistics, SyntheticSpec,
};
pub use vclip::{read_clip, write_clip, VCLIP_MAGIC, VCLIP_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames the model consumes per clip by default.
pub const DEFAULT_FRAME_COUNT: usize = 56;
/// Default square frame side after letterboxing.
pub const DEFAULT_FRAME_SIZE: usize = 64;

/// Clip class. The model's output index for each class is [`Label::index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Violent,
    NonViolent,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Violent, Label::NonViolent];

    /// Class index in model outputs and reports: violent = 0.
    pub fn index(self) -> usize {
        match self {
            Label::Violent => 0,
            Label::NonViolent => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Dataset directory name.
    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Violent => "violent",
            Label::NonViolent => "nonviolent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "violent" | "violence" => Some(Label::Violent),
            "nonviolent" | "non-violent" | "non-violence" => Some(Label::NonViolent),
            _ => None,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// One H×W×C image, row-major, channels interleaved, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape("Frame::new", &[height, width, channels], &[data.len()]));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// A T×H×W×C stack of frames with an optional class label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub label: Option<Label>,
    pub source_id: String,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, label: Option<Label>, source_id: impl Into<String>) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("clip"))?;
        let dims = (first.height, first.width, first.channels);
        if frames.iter().any(|f| (f.height, f.width, f.channels) != dims) {
            return Err(Error::InvalidArgument("clip frames differ in size".into()));
        }
        Ok(Self {
            frames,
            label,
            source_id: source_id.into(),
        })
    }

    /// `(T, H, W, C)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let f = &self.frames[0];
        (self.frames.len(), f.height, f.width, f.channels)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn in_unit_range(&self) -> bool {
        self.frames.iter().all(Frame::in_unit_range)
    }

    /// Flat T·H·W·C buffer in row-major order.
    pub fn to_flat(&self) -> Vec<f32> {
        self.frames.iter().flat_map(|f| f.data.iter().copied()).collect()
    }
}
