use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Frame, VideoClip};
use crate::error::{Error, Result};
use crate::rng::{clip_seed, rng_from_seed};

/// Ranges and probabilities for per-clip augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Gaussian blur sigma in pixels; a sampled sigma of 0 skips the blur.
    pub blur_sigma_range: [f32; 2],
    pub rotation_range_deg: [f32; 2],
    pub h_flip_prob: f32,
    pub v_flip_prob: f32,
    /// Half-width of the uniform per-pixel noise.
    pub perturb_amplitude: f32,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            blur_sigma_range: [0.5, 1.5],
            rotation_range_deg: [-15.0, 15.0],
            h_flip_prob: 0.5,
            v_flip_prob: 0.0,
            perturb_amplitude: 0.05,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Spec whose every draw is a no-op.
    pub fn identity() -> Self {
        Self {
            blur_sigma_range: [0.0, 0.0],
            rotation_range_deg: [0.0, 0.0],
            h_flip_prob: 0.0,
            v_flip_prob: 0.0,
            perturb_amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let [slo, shi] = self.blur_sigma_range;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return bad(format!("blur sigma range {slo}..{shi} is invalid"));
        }
        let [rlo, rhi] = self.rotation_range_deg;
        if !(rlo >= -180.0 && rlo <= rhi && rhi <= 180.0) {
            return bad(format!("rotation range {rlo}..{rhi} is invalid"));
        }
        for (name, p) in [("h_flip_prob", self.h_flip_prob), ("v_flip_prob", self.v_flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..=0.5).contains(&self.perturb_amplitude) {
            return bad(format!("perturb amplitude {} outside [0, 0.5]", self.perturb_amplitude));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let two_var = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / two_var).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with clamp-to-border edges. `sigma <= 0` returns
/// the frame unchanged.
pub fn gaussian_blur(frame: &Frame, sigma: f32) -> Frame {
    if !(sigma > 0.0) {
        return frame.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    let mut horiz = Frame::filled(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (k, &wgt) in kernel.iter().enumerate() {
                    acc += wgt * frame.at(y, clamp(x as i64 + k as i64 - r, w), ch);
                }
                horiz.set(y, x, ch, acc);
            }
        }
    }
    let mut out = Frame::filled(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (k, &wgt) in kernel.iter().enumerate() {
                    acc += wgt * horiz.at(clamp(y as i64 + k as i64 - r, h), x, ch);
                }
                out.set(y, x, ch, acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Rotation about the frame center with bilinear sampling; samples falling
/// outside the frame read as 0. Positive angles turn the picture
/// counter-clockwise as displayed (90° equals transpose-then-reverse-rows).
pub fn rotate(frame: &Frame, angle_deg: f32) -> Frame {
    if angle_deg == 0.0 {
        return frame.clone();
    }
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    let theta = (angle_deg as f64).to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let pixel = |row: i64, col: i64, ch: usize| -> f64 {
        if row < 0 || col < 0 || row >= h as i64 || col >= w as i64 {
            0.0
        } else {
            frame.at(row as usize, col as usize, ch) as f64
        }
    };
    let mut out = Frame::filled(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let tx = sx - x0;
            let ty = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..c {
                let v = pixel(y0, x0, ch) * (1.0 - tx) * (1.0 - ty)
                    + pixel(y0, x0 + 1, ch) * tx * (1.0 - ty)
                    + pixel(y0 + 1, x0, ch) * (1.0 - tx) * ty
                    + pixel(y0 + 1, x0 + 1, ch) * tx * ty;
                out.set(y, x, ch, (v as f32).clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipAxis {
    /// Mirror left-right: `(r, c) → (r, W−1−c)`.
    Horizontal,
    /// Mirror top-bottom: `(r, c) → (H−1−r, c)`.
    Vertical,
}

pub fn flip(frame: &Frame, axis: FlipAxis) -> Frame {
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    let mut out = Frame::filled(h, w, c, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = match axis {
                FlipAxis::Horizontal => (y, w - 1 - x),
                FlipAxis::Vertical => (h - 1 - y, x),
            };
            for ch in 0..c {
                out.set(y, x, ch, frame.at(sy, sx, ch));
            }
        }
    }
    out
}

/// Adds i.i.d. `U(−amplitude, amplitude)` noise and clamps to `[0, 1]`.
pub fn perturb_uniform<R: Rng + ?Sized>(frame: &Frame, amplitude: f32, rng: &mut R) -> Frame {
    let mut out = frame.clone();
    if amplitude <= 0.0 {
        return out;
    }
    for v in out.data_mut() {
        let noise = (rng.random::<f32>() * 2.0 - 1.0) * amplitude;
        *v = (*v + noise).clamp(0.0, 1.0);
    }
    out
}

/// Applies one randomly drawn blur/rotation/flip/noise setting to every
/// frame of the clip.
///
/// Parameters are drawn from a generator seeded with
/// `spec.seed ⊕ fnv1a(source_id)`, so the result is a pure function of the
/// clip and `spec`.
pub fn augment_clip(clip: &VideoClip, spec: &AugmentSpec) -> Result<VideoClip> {
    spec.validate()?;
    let mut rng = rng_from_seed(clip_seed(spec.seed, &clip.source_id));
    let lerp = |[lo, hi]: [f32; 2], u: f32| lo + (hi - lo) * u;
    let sigma = lerp(spec.blur_sigma_range, rng.random());
    let angle = lerp(spec.rotation_range_deg, rng.random());
    let h_flip = rng.random::<f32>() < spec.h_flip_prob;
    let v_flip = rng.random::<f32>() < spec.v_flip_prob;
    let mut noise = rng_from_seed(rng.next_u64());

    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let mut f = gaussian_blur(f, sigma);
            f = rotate(&f, angle);
            if h_flip {
                f = flip(&f, FlipAxis::Horizontal);
            }
            if v_flip {
                f = flip(&f, FlipAxis::Vertical);
            }
            perturb_uniform(&f, spec.perturb_amplitude, &mut noise)
        })
        .collect();
    Ok(VideoClip {
        frames,
        label: clip.label,
        source_id: clip.source_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::Label;

    fn random_frame(h: usize, w: usize, c: usize, seed: u64) -> Frame {
        let mut rng = rng_from_seed(seed);
        Frame::new(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
    }

    fn random_clip(seed: u64) -> VideoClip {
        let frames = (0..4).map(|i| random_frame(12, 12, 3, seed * 10 + i)).collect();
        VideoClip::new(frames, Some(Label::Violent), format!("clip{seed}")).unwrap()
    }

    #[test]
    fn blur_keeps_constant_frames() {
        let f = Frame::filled(9, 7, 2, 0.3);
        let out = gaussian_blur(&f, 1.2);
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn blur_center_weight_is_kernel_center_squared() {
        let mut f = Frame::filled(15, 15, 1, 0.0);
        f.set(7, 7, 0, 1.0);
        let out = gaussian_blur(&f, 1.0);
        // oracle: 1-D kernel at radius 3, evaluated directly
        let raw: Vec<f64> = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
        let center = raw[3] / raw.iter().sum::<f64>();
        assert!((out.at(7, 7, 0) as f64 - center * center).abs() < 1e-6);
    }

    #[test]
    fn tiny_sigma_is_near_identity() {
        let f = random_frame(10, 10, 1, 3);
        let out = gaussian_blur(&f, 0.01);
        for (a, b) in f.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let f = random_frame(10, 8, 3, 4);
        assert_eq!(rotate(&f, 0.0), f);
    }

    #[test]
    fn quarter_turn_matches_transpose_reverse_rows() {
        let f = random_frame(9, 9, 1, 5);
        let out = rotate(&f, 90.0);
        for i in 0..9 {
            for j in 0..9 {
                // transpose then reverse rows: out[i][j] = in[j][n-1-i]
                assert!((out.at(i, j, 0) - f.at(j, 8 - i, 0)).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn rotation_round_trip_away_from_borders() {
        let smooth = gaussian_blur(&random_frame(32, 32, 1, 6), 2.0);
        let back = rotate(&rotate(&smooth, 15.0), -15.0);
        let mut total = 0.0;
        let mut n = 0;
        for y in 8..24 {
            for x in 8..24 {
                total += (back.at(y, x, 0) - smooth.at(y, x, 0)).abs();
                n += 1;
            }
        }
        assert!(total / (n as f32) < 0.05);
    }

    #[test]
    fn flip_is_an_involution_and_maps_pixels() {
        let f = random_frame(5, 7, 2, 7);
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            assert_eq!(flip(&flip(&f, axis), axis), f);
        }
        let h = flip(&f, FlipAxis::Horizontal);
        assert_eq!(h.at(1, 2, 1), f.at(1, 7 - 1 - 2, 1));
    }

    #[test]
    fn horizontally_symmetric_frame_is_fixed() {
        let mut f = Frame::filled(4, 6, 1, 0.0);
        for y in 0..4 {
            for x in 0..3 {
                let v = (y * 3 + x) as f32 / 12.0;
                f.set(y, x, 0, v);
                f.set(y, 5 - x, 0, v);
            }
        }
        assert_eq!(flip(&f, FlipAxis::Horizontal), f);
    }

    #[test]
    fn perturbation_bounds_and_determinism() {
        let f = random_frame(8, 8, 1, 8);
        assert_eq!(perturb_uniform(&f, 0.0, &mut rng_from_seed(1)), f);
        let a = perturb_uniform(&f, 0.1, &mut rng_from_seed(2));
        let b = perturb_uniform(&f, 0.1, &mut rng_from_seed(2));
        assert_eq!(a, b);
        for (x, y) in f.data().iter().zip(a.data()) {
            assert!((x - y).abs() <= 0.1 + 1e-7);
        }
    }

    #[test]
    fn identity_spec_is_bitwise_identity() {
        let clip = random_clip(1);
        assert_eq!(augment_clip(&clip, &AugmentSpec::identity()).unwrap(), clip);
    }

    #[test]
    fn augmentation_is_deterministic() {
        let clip = random_clip(2);
        let spec = AugmentSpec {
            seed: 99,
            ..Default::default()
        };
        assert_eq!(augment_clip(&clip, &spec).unwrap(), augment_clip(&clip, &spec).unwrap());
    }

    #[test]
    fn drawn_flip_applies_to_every_frame() {
        let clip = random_clip(3);
        let spec = AugmentSpec {
            h_flip_prob: 1.0,
            ..AugmentSpec::identity()
        };
        let out = augment_clip(&clip, &spec).unwrap();
        for (a, b) in clip.frames.iter().zip(&out.frames) {
            assert_eq!(&flip(a, FlipAxis::Horizontal), b);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        for bad in [
            AugmentSpec {
                h_flip_prob: 1.5,
                ..AugmentSpec::default()
            },
            AugmentSpec {
                rotation_range_deg: [10.0, -10.0],
                ..AugmentSpec::default()
            },
            AugmentSpec {
                perturb_amplitude: 0.6,
                ..AugmentSpec::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
