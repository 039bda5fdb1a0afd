use super::Frame;
use crate::error::{Error, Result};

/// Indices of the frames kept when resampling `available` frames to
/// `target`: `floor(i·F/target)` when there are enough frames, otherwise all
/// frames followed by repeats of the last one.
pub fn sample_indices(available: usize, target: usize) -> Result<Vec<usize>> {
    if available == 0 {
        return Err(Error::Empty("frame sequence"));
    }
    if target == 0 {
        return Err(Error::InvalidArgument("target frame count must be positive".into()));
    }
    if available >= target {
        Ok((0..target).map(|i| i * available / target).collect())
    } else {
        Ok((0..target).map(|i| i.min(available - 1)).collect())
    }
}

pub fn sample_frames(raw: &[Frame], target: usize) -> Result<Vec<Frame>> {
    Ok(sample_indices(raw.len(), target)?
        .into_iter()
        .map(|i| raw[i].clone())
        .collect())
}

/// Placement of scaled content on the square canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Letterbox {
    pub content_height: usize,
    pub content_width: usize,
    pub top: usize,
    pub left: usize,
}

pub fn letterbox_geometry(height: usize, width: usize, size: usize) -> Letterbox {
    let scale = (size as f64 / height as f64).min(size as f64 / width as f64);
    let ch = ((height as f64 * scale).round() as usize).clamp(1, size);
    let cw = ((width as f64 * scale).round() as usize).clamp(1, size);
    Letterbox {
        content_height: ch,
        content_width: cw,
        top: (size - ch) / 2,
        left: (size - cw) / 2,
    }
}

/// Scales by `min(S/H, S/W)` with bilinear sampling (half-pixel centers) and
/// centers the result on a black `S×S` canvas.
pub fn resize_letterbox(frame: &Frame, size: usize) -> Result<Frame> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!(
            "letterbox size must be at least 8, got {size}"
        )));
    }
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    let lb = letterbox_geometry(h, w, size);
    let sy = h as f64 / lb.content_height as f64;
    let sx = w as f64 / lb.content_width as f64;
    let mut out = Frame::filled(size, size, c, 0.0);
    for y in 0..lb.content_height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = (fy - y0 as f64) as f32;
        for x in 0..lb.content_width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = (fx - x0 as f64) as f32;
            for ch in 0..c {
                let top = frame.at(y0, x0, ch) * (1.0 - tx) + frame.at(y0, x1, ch) * tx;
                let bottom = frame.at(y1, x0, ch) * (1.0 - tx) + frame.at(y1, x1, ch) * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                out.set(lb.top + y, lb.left + x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(h: usize, w: usize) -> Frame {
        let data = (0..h * w).map(|i| (i % 97) as f32 / 96.0).collect();
        Frame::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn identity_selection() {
        assert_eq!(sample_indices(56, 56).unwrap(), (0..56).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_stride() {
        assert_eq!(
            sample_indices(112, 56).unwrap(),
            (0..56).map(|i| 2 * i).collect::<Vec<_>>()
        );
    }

    #[test]
    fn short_input_pads_with_last_frame() {
        let idx = sample_indices(30, 56).unwrap();
        let mut want: Vec<usize> = (0..30).collect();
        want.extend(std::iter::repeat_n(29, 26));
        assert_eq!(idx, want);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(sample_indices(0, 56).is_err());
        assert!(sample_frames(&[], 4).is_err());
    }

    #[test]
    fn square_frame_at_native_size_is_unchanged() {
        let f = gradient_frame(64, 64);
        assert_eq!(resize_letterbox(&f, 64).unwrap(), f);
    }

    #[test]
    fn hockey_resolution_bars() {
        // 360 rows by 288 columns: content 64×51 with 6 and 7 column bars.
        let lb = letterbox_geometry(360, 288, 64);
        assert_eq!((lb.content_height, lb.content_width), (64, 51));
        assert_eq!((lb.top, lb.left), (0, 6));
        assert_eq!(64 - lb.left - lb.content_width, 7);

        let f = Frame::filled(360, 288, 3, 0.75);
        let out = resize_letterbox(&f, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let inside = (6..57).contains(&c);
                let want = if inside { 0.75 } else { 0.0 };
                assert!((out.at(r, c, 0) - want).abs() < 1e-6, "({r},{c})");
            }
        }
    }

    #[test]
    fn small_target_rejected() {
        assert!(resize_letterbox(&gradient_frame(10, 10), 4).is_err());
    }
}
