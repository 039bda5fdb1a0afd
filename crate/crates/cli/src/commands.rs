use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use rand::Rng;
use vividet::model::ModelParams;
use vividet::rng::{mix_seed, rng_from_seed};
use vividet::tensor::{read_checkpoint, write_checkpoint, GradCheckOptions};
use vividet::train::{
    check_model_gradients, evaluate, export_history, export_report, CheckpointKind, EpochRecord, TrainObserver,
};
use vividet::vision::{
    augment_clip, class_motion_statistics, load_dataset_dir, read_clip, read_frame_dir, write_clip, write_dataset_dir,
    write_frame_dir, Frame, IngestOptions,
};
use vividet::{Label, Model, Model32, Model64, ModelConfig, SyntheticSpec, VideoClip};

use crate::config::{FileConfig, RunConfig, SEED_ENV};
use crate::{
    AugmentPreviewCmd, EvalCmd, GenSyntheticArgs, GradcheckCmd, NumericalFailure, PredictCmd, TrainCmd, UsageError,
};

fn seed_or_env(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("{SEED_ENV}={s:?} is not an unsigned integer")).into()),
        Err(_) => Ok(fallback),
    }
}

fn ingest_options(config: &ModelConfig) -> IngestOptions {
    let i = config.input;
    IngestOptions {
        frame_count: i.frames,
        frame_size: (i.height == i.width).then_some(i.height),
        channels: i.channels,
    }
}

fn check_clip_shape(clip: &VideoClip, config: &ModelConfig) -> Result<()> {
    let have = clip.shape();
    let want = config.input.as_tuple();
    if have != want {
        return Err(vividet::Error::Shape {
            op: "clip vs model input",
            lhs: vec![have.0, have.1, have.2, have.3],
            rhs: vec![want.0, want.1, want.2, want.3],
        })
        .with_context(|| {
            format!(
                "clip {} is {}x{}x{}x{} (TxHxWxC) but the model expects {}x{}x{}x{}",
                clip.source_id, have.0, have.1, have.2, have.3, want.0, want.1, want.2, want.3
            )
        });
    }
    Ok(())
}

fn load_clips(root: &Path, config: &ModelConfig) -> Result<Vec<VideoClip>> {
    let clips =
        load_dataset_dir(root, &ingest_options(config)).with_context(|| format!("loading {}", root.display()))?;
    for c in &clips {
        check_clip_shape(c, config)?;
    }
    Ok(clips)
}

fn load_model(path: &Path) -> Result<Model32> {
    let ckpt = read_checkpoint(path)?;
    let (config, params) =
        ModelParams::<f32>::from_checkpoint(&ckpt).with_context(|| format!("reading {}", path.display()))?;
    Ok(Model::from_parts(config, params)?)
}

fn save_model(params: &ModelParams<f32>, config: &ModelConfig, path: &Path) -> Result<()> {
    let named: Vec<(String, vividet::Tensor32)> = params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    write_checkpoint(path, &named, &config.to_manifest())?;
    Ok(())
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    Ok(pool.install(f))
}

pub fn gen_synthetic(a: GenSyntheticArgs) -> Result<()> {
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        clips_per_class: a.clips_per_class.unwrap_or(d.clips_per_class),
        frame_count: a.frames.unwrap_or(d.frame_count),
        height: a.height.unwrap_or(d.height),
        width: a.width.unwrap_or(d.width),
        channels: a.channels.unwrap_or(d.channels),
        motion_gap: a.motion_gap.unwrap_or(d.motion_gap),
        seed: seed_or_env(a.seed, d.seed)?,
    };
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let clips = vividet::generate_synthetic(&spec)?;
    let entries = write_dataset_dir(&a.out, &clips)?;
    let stats = class_motion_statistics(&clips);
    println!("wrote {} clips to {}", entries.len(), a.out.display());
    println!(
        "mean inter-frame difference: violent {:.4}, non-violent {:.4}, margin {:.4}",
        stats.violent_mean,
        stats.nonviolent_mean,
        stats.margin()
    );
    Ok(())
}

struct RunWriter<'a> {
    dir: &'a Path,
    config: &'a ModelConfig,
    history: Vec<EpochRecord>,
}

impl TrainObserver<f32> for RunWriter<'_> {
    fn on_epoch(&mut self, r: &EpochRecord) {
        self.history.push(r.clone());
        eprintln!(
            "epoch {:>4}  train_loss {:.4}  train_acc {:.4}  val_loss {}  val_acc {}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            r.val_acc.map_or("-".into(), |v| format!("{v:.4}")),
        );
        // Kept current so an interrupted or diverged run still has its curve.
        if let Err(e) = export_history(&self.history, &self.dir.join("history.csv")) {
            log::warn!("could not update history: {e}");
        }
    }

    fn on_checkpoint(&mut self, kind: CheckpointKind, epoch: usize, params: &ModelParams<f32>) -> vividet::Result<()> {
        let path = match kind {
            CheckpointKind::Best => self.dir.join("best.ckpt"),
            CheckpointKind::Periodic => self.dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt")),
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| vividet::Error::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        let named: Vec<_> = params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        write_checkpoint(&path, &named, &self.config.to_manifest())
    }
}

fn run_dir(parent: &Path, name: Option<String>) -> Result<PathBuf> {
    let dir = match name {
        Some(n) => parent.join(n),
        None => {
            let stamp = chrono::Utc::now().format("run-%Y%m%d-%H%M%S").to_string();
            let mut dir = parent.join(&stamp);
            let mut k = 2;
            while dir.exists() {
                dir = parent.join(format!("{stamp}-{k}"));
                k += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn train(a: TrainCmd) -> Result<()> {
    let mut f: FileConfig = a.common.base()?;
    a.workers.overlay(&mut f);
    a.model.overlay(&mut f);
    a.train.overlay(&mut f);
    a.aug.overlay(&mut f);
    if a.data.is_some() {
        f.data = a.data.clone();
    }
    if a.out.is_some() {
        f.out = a.out.clone();
    }
    let rc = RunConfig::resolve(&f)?;
    let data = rc
        .data
        .clone()
        .ok_or_else(|| UsageError("no dataset: pass --data or set `data` in the config file".into()))?;
    let clips = load_clips(&data, &rc.model)?;

    let dir = run_dir(&rc.out.clone().unwrap_or_else(|| "runs".into()), a.run_name)?;
    let snapshot = toml::to_string(&rc.snapshot()).context("serializing config snapshot")?;
    fs::write(dir.join("config.toml"), snapshot).context("writing config snapshot")?;
    println!("run_dir={}", dir.display());

    let model = Model32::new(rc.model.clone(), rc.seed)?;
    let mut writer = RunWriter {
        dir: &dir,
        config: &rc.model,
        history: Vec::new(),
    };
    let started = Instant::now();
    let outcome = vividet::train(model, &clips, &rc.train, &mut writer)?;

    save_model(&outcome.best, &rc.model, &dir.join("best.ckpt"))?;
    save_model(&outcome.final_params, &rc.model, &dir.join("final.ckpt"))?;
    export_history(&outcome.history, &dir.join("history.csv"))?;

    let val: Vec<VideoClip> = outcome.val_indices.iter().map(|&i| clips[i].clone()).collect();
    let best = Model::from_parts(rc.model.clone(), outcome.best.clone())?;
    let report = with_pool(rc.train.workers, || evaluate(&best, &val))??;
    export_report(&report, &dir.join("report"))?;

    println!(
        "trained {} epochs in {:.1}s; best epoch {}",
        outcome.history.len(),
        started.elapsed().as_secs_f64(),
        outcome.best_epoch.map_or("-".into(), |e| e.to_string())
    );
    println!("validation report ({} clips):", val.len());
    print!("{}", report.to_table());
    println!("val_acc={:.4}", report.accuracy);
    Ok(())
}

pub fn eval(a: EvalCmd) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let clips = load_clips(&a.data, &model.config)?;
    let report = with_pool(a.workers.workers.unwrap_or(0), || evaluate(&model, &clips))??;
    let path = a.report.unwrap_or_else(|| "eval_report".into());
    export_report(&report, &path)?;
    print!("{}", report.to_table());
    println!("accuracy={:.4}", report.accuracy);
    Ok(())
}

fn read_any_clip(path: &Path, config: &ModelConfig) -> Result<VideoClip> {
    let clip = if path.is_dir() {
        read_frame_dir(path, &ingest_options(config), None)?
    } else {
        read_clip(path)?
    };
    check_clip_shape(&clip, config)?;
    Ok(clip)
}

pub fn predict(a: PredictCmd) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let clip = read_any_clip(&a.clip, &model.config)?;
    let p = model.classify(&clip)?;
    let (p_violent, p_calm) = (p[Label::Violent.index()], p[Label::NonViolent.index()]);
    let label = if p_violent >= p_calm {
        Label::Violent
    } else {
        Label::NonViolent
    };
    println!("violent     {p_violent:.4}");
    println!("nonviolent  {p_calm:.4}");
    println!("label={label} p_violent={p_violent:.4}");
    Ok(())
}

pub fn augment_preview(a: AugmentPreviewCmd) -> Result<()> {
    let mut f = a.common.base()?;
    a.aug.overlay(&mut f);
    let rc = RunConfig::resolve(&f)?;
    let clip = read_clip(&a.clip)?;
    let out = augment_clip(&clip, &rc.augment)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let name = a
        .clip
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip.vclip".into());
    let clip_path = a.out.join(name);
    write_clip(&out, &clip_path)?;
    println!("clip={}", clip_path.display());
    if !a.no_frames {
        let frames_dir = a.out.join("frames");
        let n = write_frame_dir(&out, &frames_dir)?;
        println!("frames={} dir={}", n, frames_dir.display());
    }
    Ok(())
}

fn random_clip(config: &ModelConfig, label: Label, seed: u64) -> Result<VideoClip> {
    let mut rng = rng_from_seed(seed);
    let s = config.input;
    let frames = (0..s.frames)
        .map(|_| {
            let data = (0..s.height * s.width * s.channels).map(|_| rng.random()).collect();
            Frame::new(s.height, s.width, s.channels, data)
        })
        .collect::<vividet::Result<Vec<_>>>()?;
    Ok(VideoClip::new(frames, Some(label), format!("gradcheck_{seed}"))?)
}

pub fn gradcheck(a: GradcheckCmd) -> Result<()> {
    let batch = a.batch.unwrap_or(2);
    let tolerance = a.tolerance.unwrap_or(1e-3);
    let step = a.step.unwrap_or(1e-4);
    let seed = seed_or_env(a.seed, 0)?;
    if batch == 0 {
        return Err(UsageError("--batch must be at least 1".into()).into());
    }
    let config = ModelConfig::tiny();
    let model = Model64::new(config.clone(), seed)?;
    let clips = (0..batch)
        .map(|i| random_clip(&config, Label::ALL[i % 2], mix_seed(seed, i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let started = Instant::now();
    let opts = GradCheckOptions {
        step,
        max_coords_per_tensor: usize::MAX,
    };
    let r = check_model_gradients(&model, &clips, &opts)?;
    println!(
        "parameters={} coords_checked={} max_rel_err={:.3e} elapsed={:.1}s",
        model.params.parameter_count(),
        r.coords_checked,
        r.max_rel_err,
        started.elapsed().as_secs_f64()
    );
    if r.max_rel_err > tolerance {
        let (slot, coord) = r.worst.unwrap_or((0, 0));
        let name = model
            .params
            .named()
            .get(slot)
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        return Err(NumericalFailure(format!(
            "max relative error {:.3e} exceeds {tolerance:.1e} at {name}[{coord}]",
            r.max_rel_err
        ))
        .into());
    }
    println!("gradcheck passed (tolerance {tolerance:.1e})");
    Ok(())
}
