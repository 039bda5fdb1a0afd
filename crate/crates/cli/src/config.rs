//! Layered run configuration.
//!
//! Values resolve as built-in default < config file < command-line flag.
//! The config file is flat TOML: one `key = value` per line, keys named
//! after the long flags with `-` replaced by `_`, for example
//!
//! ```toml
//! preset = "reduced"
//! batch_size = 8
//! learning_rate = 1e-4
//! augment = false
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use vividet::model::{AttentionScale, HeadVariant, InputShape, Tubelet};
use vividet::{AugmentSpec, ModelConfig, TrainConfig};

use crate::UsageError;

pub const SEED_ENV: &str = "VIVIDET_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 56×64×64×3, tubelet (8,8,8), D 128, 8 heads, 8 layers
    Default,
    /// 16×32×32×1, tubelet (4,8,8), D 64, 4 heads, 4 layers
    Reduced,
    /// 8×16×16×1, tubelet (4,8,8), D 16, 2 heads, 2 layers
    Tiny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadArg {
    Linear,
    TanhHidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleArg {
    PerHeadDim,
    FullDim,
}

/// Everything a config file may set. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub frames: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: Option<usize>,
    pub tubelet_t: Option<usize>,
    pub tubelet_h: Option<usize>,
    pub tubelet_w: Option<usize>,
    pub embed_dim: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub head: Option<HeadArg>,
    pub attention_scale: Option<ScaleArg>,

    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub split_fraction: Option<f64>,
    pub workers: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub log_every: Option<usize>,
    pub augment: Option<bool>,

    pub blur_sigma_min: Option<f32>,
    pub blur_sigma_max: Option<f32>,
    pub rotation_min: Option<f32>,
    pub rotation_max: Option<f32>,
    pub h_flip_prob: Option<f32>,
    pub v_flip_prob: Option<f32>,
    pub perturb_amplitude: Option<f32>,

    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )+
    };
}

/// Model shape flags.
#[derive(Args, Clone, Debug, Default)]
pub struct ModelArgs {
    /// Base model configuration [default: default]
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Frames per clip (T) [default: 56]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame height (H) [default: 64]
    #[arg(long)]
    pub height: Option<usize>,
    /// Frame width (W) [default: 64]
    #[arg(long)]
    pub width: Option<usize>,
    /// Channels (C) [default: 3]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Tubelet depth in frames [default: 8]
    #[arg(long)]
    pub tubelet_t: Option<usize>,
    /// Tubelet height [default: 8]
    #[arg(long)]
    pub tubelet_h: Option<usize>,
    /// Tubelet width [default: 8]
    #[arg(long)]
    pub tubelet_w: Option<usize>,
    /// Token width D [default: 128]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Attention heads [default: 8]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Encoder layers [default: 8]
    #[arg(long)]
    pub layers: Option<usize>,
    /// MLP hidden width as a multiple of D [default: 4]
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
    /// Classification head [default: linear]
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    /// Attention softmax scale [default: per-head-dim]
    #[arg(long, value_enum)]
    pub attention_scale: Option<ScaleArg>,
}

/// Optimization flags.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// Clips per optimizer step [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Passes over the training split [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate [default: 0.0001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Decoupled weight decay [default: 0.00001]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Training share of each class [default: 0.6]
    #[arg(long)]
    pub split_fraction: Option<f64>,
    /// Write a checkpoint every N epochs, 0 for none [default: 0]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Log a progress line every N batches, 0 for none [default: 0]
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Augment training clips online [default: true]
    #[arg(long)]
    pub augment: Option<bool>,
}

/// Augmentation flags.
#[derive(Args, Clone, Debug, Default)]
pub struct AugArgs {
    /// Smallest blur sigma in pixels [default: 0.5]
    #[arg(long)]
    pub blur_sigma_min: Option<f32>,
    /// Largest blur sigma in pixels [default: 1.5]
    #[arg(long)]
    pub blur_sigma_max: Option<f32>,
    /// Smallest rotation in degrees, counter-clockwise positive [default: -15]
    #[arg(long, allow_negative_numbers = true)]
    pub rotation_min: Option<f32>,
    /// Largest rotation in degrees [default: 15]
    #[arg(long, allow_negative_numbers = true)]
    pub rotation_max: Option<f32>,
    /// Horizontal flip probability [default: 0.5]
    #[arg(long)]
    pub h_flip_prob: Option<f32>,
    /// Vertical flip probability [default: 0]
    #[arg(long)]
    pub v_flip_prob: Option<f32>,
    /// Half-width of uniform pixel noise [default: 0.05]
    #[arg(long)]
    pub perturb_amplitude: Option<f32>,
}

/// Flags shared by every command that runs the pipeline.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Flat TOML config file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base seed; falls back to $VIVIDET_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct WorkerArgs {
    /// Worker threads, 0 for one per core; results do not depend on it [default: 0]
    #[arg(long)]
    pub workers: Option<usize>,
}

impl WorkerArgs {
    pub fn overlay(&self, f: &mut FileConfig) {
        overlay!(f, self, workers);
    }
}

impl ModelArgs {
    pub fn overlay(&self, f: &mut FileConfig) {
        overlay!(
            f,
            self,
            preset,
            frames,
            height,
            width,
            channels,
            tubelet_t,
            tubelet_h,
            tubelet_w,
            embed_dim,
            heads,
            layers,
            mlp_ratio,
            head,
            attention_scale
        );
    }
}

impl TrainArgs {
    pub fn overlay(&self, f: &mut FileConfig) {
        overlay!(
            f,
            self,
            batch_size,
            epochs,
            learning_rate,
            weight_decay,
            split_fraction,
            checkpoint_every,
            log_every,
            augment
        );
    }
}

impl AugArgs {
    pub fn overlay(&self, f: &mut FileConfig) {
        overlay!(
            f,
            self,
            blur_sigma_min,
            blur_sigma_max,
            rotation_min,
            rotation_max,
            h_flip_prob,
            v_flip_prob,
            perturb_amplitude
        );
    }
}

impl CommonArgs {
    /// Loads the config file (if any) and lays these flags over it.
    pub fn base(&self) -> anyhow::Result<FileConfig> {
        let mut f = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        overlay!(f, self, seed);
        Ok(f)
    }
}

/// Fully resolved settings of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentSpec,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| UsageError(format!("{SEED_ENV}={s:?} is not an unsigned integer")).into()),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    pub fn resolve(f: &FileConfig) -> anyhow::Result<Self> {
        let mut model = match f.preset.unwrap_or(Preset::Default) {
            Preset::Default => ModelConfig::default(),
            Preset::Reduced => ModelConfig::reduced(),
            Preset::Tiny => ModelConfig::tiny(),
        };
        let i = model.input;
        model.input = InputShape::new(
            f.frames.unwrap_or(i.frames),
            f.height.unwrap_or(i.height),
            f.width.unwrap_or(i.width),
            f.channels.unwrap_or(i.channels),
        );
        let t = model.tubelet;
        model.tubelet = Tubelet {
            t: f.tubelet_t.unwrap_or(t.t),
            h: f.tubelet_h.unwrap_or(t.h),
            w: f.tubelet_w.unwrap_or(t.w),
        };
        model.embed_dim = f.embed_dim.unwrap_or(model.embed_dim);
        model.heads = f.heads.unwrap_or(model.heads);
        model.layers = f.layers.unwrap_or(model.layers);
        model.mlp_ratio = f.mlp_ratio.unwrap_or(model.mlp_ratio);
        if let Some(h) = f.head {
            model.head = match h {
                HeadArg::Linear => HeadVariant::Linear,
                HeadArg::TanhHidden => HeadVariant::TanhHidden,
            };
        }
        if let Some(s) = f.attention_scale {
            model.attention_scale = match s {
                ScaleArg::PerHeadDim => AttentionScale::PerHeadDim,
                ScaleArg::FullDim => AttentionScale::FullDim,
            };
        }
        model.validate().map_err(|e| UsageError(e.to_string()))?;

        let seed = match f.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };

        let d = AugmentSpec::default();
        let augment = AugmentSpec {
            blur_sigma_range: [
                f.blur_sigma_min.unwrap_or(d.blur_sigma_range[0]),
                f.blur_sigma_max.unwrap_or(d.blur_sigma_range[1]),
            ],
            rotation_range_deg: [
                f.rotation_min.unwrap_or(d.rotation_range_deg[0]),
                f.rotation_max.unwrap_or(d.rotation_range_deg[1]),
            ],
            h_flip_prob: f.h_flip_prob.unwrap_or(d.h_flip_prob),
            v_flip_prob: f.v_flip_prob.unwrap_or(d.v_flip_prob),
            perturb_amplitude: f.perturb_amplitude.unwrap_or(d.perturb_amplitude),
            seed,
        };
        augment.validate().map_err(|e| UsageError(e.to_string()))?;

        let td = TrainConfig::default();
        let train = TrainConfig {
            batch_size: f.batch_size.unwrap_or(td.batch_size),
            epochs: f.epochs.unwrap_or(td.epochs),
            learning_rate: f.learning_rate.unwrap_or(td.learning_rate),
            weight_decay: f.weight_decay.unwrap_or(td.weight_decay),
            split_fraction: f.split_fraction.unwrap_or(td.split_fraction),
            seed,
            augmentation: f.augment.unwrap_or(true).then(|| augment.clone()),
            workers: f.workers.unwrap_or(td.workers),
            checkpoint_every: f.checkpoint_every.unwrap_or(td.checkpoint_every),
            log_every: f.log_every.unwrap_or(td.log_every),
        };
        train.validate().map_err(|e| UsageError(e.to_string()))?;

        Ok(Self {
            model,
            train,
            augment,
            seed,
            data: f.data.clone(),
            out: f.out.clone(),
        })
    }

    /// The resolved settings as a flat config file that reproduces the run.
    pub fn snapshot(&self) -> FileConfig {
        let m = &self.model;
        let a = &self.augment;
        FileConfig {
            preset: None,
            frames: Some(m.input.frames),
            height: Some(m.input.height),
            width: Some(m.input.width),
            channels: Some(m.input.channels),
            tubelet_t: Some(m.tubelet.t),
            tubelet_h: Some(m.tubelet.h),
            tubelet_w: Some(m.tubelet.w),
            embed_dim: Some(m.embed_dim),
            heads: Some(m.heads),
            layers: Some(m.layers),
            mlp_ratio: Some(m.mlp_ratio),
            head: Some(match m.head {
                HeadVariant::Linear => HeadArg::Linear,
                HeadVariant::TanhHidden => HeadArg::TanhHidden,
            }),
            attention_scale: Some(match m.attention_scale {
                AttentionScale::PerHeadDim => ScaleArg::PerHeadDim,
                AttentionScale::FullDim => ScaleArg::FullDim,
            }),
            batch_size: Some(self.train.batch_size),
            epochs: Some(self.train.epochs),
            learning_rate: Some(self.train.learning_rate),
            weight_decay: Some(self.train.weight_decay),
            split_fraction: Some(self.train.split_fraction),
            workers: Some(self.train.workers),
            checkpoint_every: Some(self.train.checkpoint_every),
            log_every: Some(self.train.log_every),
            augment: Some(self.train.augmentation.is_some()),
            blur_sigma_min: Some(a.blur_sigma_range[0]),
            blur_sigma_max: Some(a.blur_sigma_range[1]),
            rotation_min: Some(a.rotation_range_deg[0]),
            rotation_max: Some(a.rotation_range_deg[1]),
            h_flip_prob: Some(a.h_flip_prob),
            v_flip_prob: Some(a.v_flip_prob),
            perturb_amplitude: Some(a.perturb_amplitude),
            seed: Some(self.seed),
            data: self.data.clone(),
            out: self.out.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_three() {
        let rc = RunConfig::resolve(&FileConfig::default()).unwrap();
        assert_eq!(rc.model, ModelConfig::default());
        assert_eq!(rc.train.batch_size, 32);
        assert_eq!(rc.train.epochs, 100);
        assert_eq!(rc.train.learning_rate, 1e-4);
        assert_eq!(rc.train.weight_decay, 1e-5);
        assert_eq!(rc.train.split_fraction, 0.6);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut f: FileConfig = toml::from_str("batch_size = 8\nepochs = 5\n").unwrap();
        let flags = TrainArgs {
            epochs: Some(2),
            ..Default::default()
        };
        flags.overlay(&mut f);
        let rc = RunConfig::resolve(&f).unwrap();
        assert_eq!(rc.train.epochs, 2);
        assert_eq!(rc.train.batch_size, 8);
        assert_eq!(rc.train.learning_rate, 1e-4);
    }

    #[test]
    fn snapshot_reproduces_the_run() {
        let mut f: FileConfig = toml::from_str("preset = \"reduced\"\nseed = 4\naugment = false\n").unwrap();
        f.heads = Some(2);
        let rc = RunConfig::resolve(&f).unwrap();
        let text = toml::to_string(&rc.snapshot()).unwrap();
        let again = RunConfig::resolve(&toml::from_str(&text).unwrap()).unwrap();
        assert_eq!(again, rc);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("batchsize = 8\n").is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let f = FileConfig {
            split_fraction: Some(1.5),
            ..Default::default()
        };
        let err = RunConfig::resolve(&f).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
