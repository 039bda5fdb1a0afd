use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tubelet extent in frames, rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tubelet {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Tubelet {
    pub const fn cube(n: usize) -> Self {
        Self { t: n, h: n, w: n }
    }
}

/// Clip shape `(T, H, W, C)` the model accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn as_tuple(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// One dense layer `D → classes`.
    Linear,
    /// `D → D`, tanh, `D → classes`.
    TanhHidden,
}

/// Denominator inside the attention softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `√(D / heads)`.
    PerHeadDim,
    /// `√D`, the full embedding width.
    FullDim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputShape,
    pub tubelet: Tubelet,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub head: HeadVariant,
    pub attention_scale: AttentionScale,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    /// 56×64×64×3 input, (8,8,8) tubelets, D = 128, 8 heads, 8 layers.
    fn default() -> Self {
        Self {
            input: InputShape::new(56, 64, 64, 3),
            tubelet: Tubelet::cube(8),
            embed_dim: 128,
            heads: 8,
            layers: 8,
            mlp_ratio: 4,
            classes: 2,
            head: HeadVariant::Linear,
            attention_scale: AttentionScale::PerHeadDim,
            ln_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration used for whole-model gradient checks.
    pub fn tiny() -> Self {
        Self {
            input: InputShape::new(8, 16, 16, 1),
            tubelet: Tubelet { t: 4, h: 8, w: 8 },
            embed_dim: 16,
            heads: 2,
            layers: 2,
            ..Self::default()
        }
    }

    /// Desk-scale configuration for the synthetic dataset.
    pub fn reduced() -> Self {
        Self {
            input: InputShape::new(16, 32, 32, 1),
            tubelet: Tubelet { t: 4, h: 8, w: 8 },
            embed_dim: 64,
            heads: 4,
            layers: 4,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    pub fn tubelet_volume(&self) -> usize {
        self.tubelet.t * self.tubelet.h * self.tubelet.w * self.input.channels
    }

    pub fn grid(&self) -> Result<TubeletGrid> {
        tubelet_grid(self.input, self.tubelet)
    }

    /// Tokens per clip including CLS.
    pub fn sequence_len(&self) -> Result<usize> {
        Ok(self.grid()?.tokens() + 1)
    }

    /// `1 / √s` with `s` chosen by [`AttentionScale`].
    pub fn attention_factor(&self) -> f64 {
        let s = match self.attention_scale {
            AttentionScale::PerHeadDim => self.head_dim(),
            AttentionScale::FullDim => self.embed_dim,
        };
        1.0 / (s as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if self.input.channels == 0 {
            return bad("input must have at least one channel".into());
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        self.grid()?;
        Ok(())
    }

    pub fn to_manifest(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::format(None, format!("model manifest: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Number of tubelets along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TubeletGrid {
    pub n_t: usize,
    pub n_h: usize,
    pub n_w: usize,
}

impl TubeletGrid {
    pub fn tokens(&self) -> usize {
        self.n_t * self.n_h * self.n_w
    }
}

/// `n_t = ⌊T/t⌋`, `n_h = ⌊H/h⌋`, `n_w = ⌊W/w⌋`; remainder voxels are dropped.
pub fn tubelet_grid(input: InputShape, tubelet: Tubelet) -> Result<TubeletGrid> {
    if tubelet.t == 0 || tubelet.h == 0 || tubelet.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "tubelet dimensions must be positive: {tubelet:?}"
        )));
    }
    if tubelet.t > input.frames || tubelet.h > input.height || tubelet.w > input.width {
        return Err(Error::InvalidArgument(format!(
            "tubelet {}x{}x{} exceeds input {}x{}x{}",
            tubelet.t, tubelet.h, tubelet.w, input.frames, input.height, input.width
        )));
    }
    Ok(TubeletGrid {
        n_t: input.frames / tubelet.t,
        n_h: input.height / tubelet.h,
        n_w: input.width / tubelet.w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_448_tokens() {
        let g = ModelConfig::default().grid().unwrap();
        assert_eq!((g.n_t, g.n_h, g.n_w), (7, 8, 8));
        assert_eq!(g.tokens(), 448);
        assert_eq!(ModelConfig::default().sequence_len().unwrap(), 449);
    }

    #[test]
    fn single_tubelet_input() {
        let g = tubelet_grid(InputShape::new(8, 8, 8, 3), Tubelet::cube(8)).unwrap();
        assert_eq!((g.n_t, g.n_h, g.n_w), (1, 1, 1));
    }

    #[test]
    fn remainder_frame_dropped() {
        let g = tubelet_grid(InputShape::new(57, 64, 64, 3), Tubelet::cube(8)).unwrap();
        assert_eq!(g.n_t, 7);
    }

    #[test]
    fn oversized_tubelet_rejected() {
        assert!(tubelet_grid(InputShape::new(4, 64, 64, 3), Tubelet::cube(8)).is_err());
        assert!(tubelet_grid(InputShape::new(8, 8, 8, 3), Tubelet { t: 0, h: 1, w: 1 }).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let cfg = ModelConfig {
            head: HeadVariant::TanhHidden,
            attention_scale: AttentionScale::FullDim,
            ..ModelConfig::tiny()
        };
        assert_eq!(ModelConfig::from_manifest(&cfg.to_manifest()).unwrap(), cfg);
    }
}
