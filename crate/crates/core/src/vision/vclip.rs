//! `.vclip` container.
//!
//! ```text
//! "VCLP" | version: u32 | label: u8 (0 non-violent, 1 violent, 255 unlabeled)
//! T: u32 | H: u32 | W: u32 | C: u32 | T·H·W·C × f32, row-major
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{Frame, Label, VideoClip};
use crate::bytes::{checked_volume, put_f32s, Reader};
use crate::error::{Error, Result};

pub const VCLIP_MAGIC: &[u8; 4] = b"VCLP";
pub const VCLIP_VERSION: u32 = 1;

fn label_byte(label: Option<Label>) -> u8 {
    match label {
        Some(Label::NonViolent) => 0,
        Some(Label::Violent) => 1,
        None => 255,
    }
}

pub(crate) fn encode(clip: &VideoClip) -> Vec<u8> {
    let (t, h, w, c) = clip.shape();
    let mut out = Vec::with_capacity(25 + 4 * t * h * w * c);
    out.extend_from_slice(VCLIP_MAGIC);
    out.extend_from_slice(&VCLIP_VERSION.to_le_bytes());
    out.push(label_byte(clip.label));
    for d in [t, h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for f in &clip.frames {
        put_f32s(&mut out, f.data().iter().copied());
    }
    out
}

pub(crate) fn decode(buf: &[u8], path: Option<&Path>, source_id: String) -> Result<VideoClip> {
    let mut r = Reader::new(buf, path);
    if r.take(4, "magic")? != VCLIP_MAGIC {
        return Err(r.err("bad magic, expected VCLP"));
    }
    let version = r.u32("version")?;
    if version != VCLIP_VERSION {
        return Err(r.err(format!("unsupported vclip version {version}")));
    }
    let label = match r.u8("label")? {
        0 => Some(Label::NonViolent),
        1 => Some(Label::Violent),
        255 => None,
        other => return Err(r.err(format!("unknown label byte {other}"))),
    };
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = r.u32("dimensions")? as usize;
    }
    if dims.contains(&0) {
        return Err(r.err(format!("zero dimension in {dims:?}")));
    }
    let [t, h, w, c] = dims;
    let frame_len = checked_volume(&[h, w, c]).ok_or_else(|| r.err("dimension overflow"))?;
    checked_volume(&dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| r.err("dimension overflow"))?;
    let mut frames = Vec::with_capacity(t);
    for _ in 0..t {
        let data = r.f32s(frame_len, "pixel data")?;
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(r.err("pixel value outside [0, 1]"));
        }
        frames.push(Frame::new(h, w, c, data)?);
    }
    if r.remaining() != 0 {
        return Err(r.err(format!("{} trailing bytes", r.remaining())));
    }
    Ok(VideoClip {
        frames,
        label,
        source_id,
    })
}

pub fn write_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    std::fs::write(path, encode(clip)).map_err(|e| Error::io(path, e))
}

/// Reads a clip; its `source_id` is the file stem.
pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(&buf, Some(path), id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(t: usize, h: usize, w: usize, c: usize, label: Option<Label>, vals: &[f32]) -> VideoClip {
        let n = h * w * c;
        let frames = (0..t)
            .map(|i| Frame::new(h, w, c, (0..n).map(|j| vals[(i * n + j) % vals.len()]).collect()).unwrap())
            .collect();
        VideoClip::new(frames, label, "x").unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            t in 1usize..4, h in 1usize..6, w in 1usize..6, c in 1usize..4,
            vals in proptest::collection::vec(0.0f32..=1.0, 1..64),
            label in prop_oneof![Just(None), Just(Some(Label::Violent)), Just(Some(Label::NonViolent))],
        ) {
            let original = clip(t, h, w, c, label, &vals);
            let back = decode(&encode(&original), None, "x".into()).unwrap();
            prop_assert_eq!(back.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            original.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, original);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&clip(2, 3, 4, 1, Some(Label::Violent), &[0.5]));
        assert_eq!(&bytes[..4], b"VCLP");
        assert_eq!(bytes[8], 1);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 25 + 4 * 24);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&clip(1, 2, 2, 1, None, &[0.1]));
        bytes[1] = b'X';
        assert!(decode(&bytes, None, "x".into())
            .unwrap_err()
            .to_string()
            .contains("magic"));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&clip(2, 2, 2, 1, None, &[0.1]));
        assert!(decode(&bytes[..bytes.len() - 1], None, "x".into())
            .unwrap_err()
            .to_string()
            .contains("truncated"));
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"VCLP");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(0);
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(decode(&bytes, None, "x".into()).is_err());
    }
}
