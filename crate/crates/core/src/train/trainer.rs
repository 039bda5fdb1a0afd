//! Supervised training loop.
//!
//! Every clip in a batch gets its own tape. Per-clip gradients come back in
//! batch order and are summed sequentially, so the update is bit-identical
//! no matter how many workers computed them.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy_from_logits;
use super::metrics::{argmax, EvalReport};
use super::optim::{optimizer_step, AdamWConfig, AdamWState};
use crate::error::{Error, Result};
use crate::model::{forward_logits, ForwardHooks, Model, ModelParams};
use crate::rng::{mix_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::{check_gradients_with, GradCheck, GradCheckOptions, GradTape, Tensor, Var};
use crate::vision::{augment_clip, AugmentSpec, Label, VideoClip};

/// Row labels of the evaluation report, in class-index order.
pub const CLASS_NAMES: [&str; 2] = ["Violence", "Non-Violence"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Share of each class that goes to training.
    pub split_fraction: f64,
    pub seed: u64,
    /// Online augmentation of training clips; `None` trains on raw clips.
    pub augmentation: Option<AugmentSpec>,
    /// Size of the per-clip worker pool; 0 picks the core count.
    pub workers: usize,
    /// Emit a periodic checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Log a progress line every this many batches; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            split_fraction: 0.6,
            seed: 0,
            augmentation: Some(AugmentSpec::default()),
            workers: 0,
            checkpoint_every: 0,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split_fraction {} must lie strictly between 0 and 1",
                self.split_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        if let Some(aug) = &self.augmentation {
            aug.validate()?;
        }
        Ok(())
    }
}

/// One row of the learning curves. Validation fields are `None` when the
/// run had no validation clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Best,
    Periodic,
}

/// Hooks into the training loop. Every method has a no-op default.
pub trait TrainObserver<T> {
    fn on_epoch(&mut self, _record: &EpochRecord) {}

    fn on_checkpoint(&mut self, _kind: CheckpointKind, _epoch: usize, _params: &ModelParams<T>) -> Result<()> {
        Ok(())
    }

    /// Learning rate for `epoch`; constant unless overridden.
    fn learning_rate(&mut self, _epoch: usize, base: f64) -> f64 {
        base
    }
}

impl<T> TrainObserver<T> for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation accuracy (ties go
    /// to the lower validation loss). Equals `final_params` without
    /// validation data or when no epoch ran.
    pub best: ModelParams<T>,
    pub best_epoch: Option<usize>,
    pub final_params: ModelParams<T>,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

fn label_index(clip: &VideoClip) -> Result<usize> {
    clip.label
        .map(Label::index)
        .ok_or_else(|| Error::InvalidArgument(format!("clip {} has no label", clip.source_id)))
}

/// Seeded per-class shuffle, then the first `round(fraction · count)` of each
/// class go to training. With at least two clips in a class, both sides get
/// at least one.
pub fn stratified_split(clips: &[VideoClip], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in Label::ALL {
        let mut members = Vec::new();
        for (i, c) in clips.iter().enumerate() {
            if label_index(c)? == label.index() {
                members.push(i);
            }
        }
        let mut rng = rng_from_seed(mix_seed(seed, label.index() as u64));
        members.shuffle(&mut rng);
        let count = members.len();
        let mut n_train = (fraction * count as f64).round() as usize;
        if count >= 2 {
            n_train = n_train.clamp(1, count - 1);
        } else {
            n_train = count;
        }
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Loss and parameter gradients (in [`crate::model::Weights::named`] order)
/// for one labeled clip.
pub fn clip_loss_and_grads<T: Scalar>(model: &Model<T>, clip: &VideoClip) -> Result<(T, Vec<Tensor<T>>)> {
    let label = label_index(clip)?;
    let mut tape = GradTape::new();
    let vars = model.params.record(&mut tape);
    let z = forward_logits(&mut tape, &vars, &model.config, clip, &mut ForwardHooks::default())?;
    let loss = tape.cross_entropy(z, &[label])?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let out = vars
        .named()
        .into_iter()
        .map(|(name, &v)| {
            grads
                .take(v)
                .ok_or_else(|| Error::Gradient(format!("no gradient recorded for {name}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((value, out))
}

/// Finite-difference check of every model parameter against the taped
/// gradient of the mean batch loss.
pub fn check_model_gradients(model: &Model<f64>, batch: &[VideoClip], opts: &GradCheckOptions) -> Result<GradCheck> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let labels = batch.iter().map(label_index).collect::<Result<Vec<_>>>()?;
    let tensors: Vec<Tensor<f64>> = model.params.named().into_iter().map(|(_, t)| t.clone()).collect();
    let loss = |tape: &mut GradTape<f64>, vars: &[Var]| {
        let mut next = vars.iter().copied();
        let pv = model.params.map(|_, _| next.next().expect("one var per slot"));
        let mut total: Option<Var> = None;
        for (clip, &label) in batch.iter().zip(&labels) {
            let z = forward_logits(tape, &pv, &model.config, clip, &mut ForwardHooks::default())?;
            let l = tape.cross_entropy(z, &[label])?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        tape.scale(total.expect("batch is non-empty"), 1.0 / batch.len() as f64)
    };
    check_gradients_with(loss, &tensors, opts)
}

/// Mean loss and mean gradients over a batch.
///
/// Call inside a rayon pool to control parallelism; the reduction order is
/// fixed regardless.
pub fn batch_loss_and_grads<T: Scalar>(model: &Model<T>, batch: &[VideoClip]) -> Result<(T, Vec<Tensor<T>>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let per_clip: Vec<(T, Vec<Tensor<T>>)> = batch
        .par_iter()
        .map(|c| clip_loss_and_grads(model, c))
        .collect::<Result<_>>()?;
    let mut iter = per_clip.into_iter();
    let (mut loss, mut sum) = iter.next().expect("batch is non-empty");
    for (l, grads) in iter {
        loss += l;
        for (acc, g) in sum.iter_mut().zip(&grads) {
            acc.add_assign(g)?;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let n = T::lit(batch.len() as f64);
    Ok((loss / n, sum.into_iter().map(|g| g.scale(T::lit(inv))).collect()))
}

/// One optimizer update on `batch`; returns the pre-update batch loss.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    batch: &[VideoClip],
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<T> {
    let (loss, grads) = batch_loss_and_grads(model, batch)?;
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let grads = names.into_iter().zip(grads).collect();
    optimizer_step(model.params.named_mut(), &grads, state, cfg)?;
    Ok(loss)
}

/// Mean loss and accuracy over labeled clips, plus the argmax predictions.
pub fn score<T: Scalar>(model: &Model<T>, clips: &[VideoClip]) -> Result<(f64, f64, Vec<usize>, Vec<usize>)> {
    if clips.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let rows: Vec<(f64, usize, usize)> = clips
        .par_iter()
        .map(|c| {
            let truth = label_index(c)?;
            let z = model.logits(c)?;
            let loss = cross_entropy_from_logits(&z, &[truth])?.as_f64();
            Ok((loss, truth, argmax(z.data())))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let truth: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let pred: Vec<usize> = rows.iter().map(|r| r.2).collect();
    let acc = truth.iter().zip(&pred).filter(|(t, p)| t == p).count() as f64 / n;
    Ok((loss, acc, truth, pred))
}

/// Confusion matrix and metrics of `model` over labeled clips. Ties between
/// class probabilities resolve to index 0 (violent).
pub fn evaluate<T: Scalar>(model: &Model<T>, clips: &[VideoClip]) -> Result<EvalReport> {
    let (_, _, truth, pred) = score(model, clips)?;
    EvalReport::from_predictions(&CLASS_NAMES, &truth, &pred)
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Splits `clips`, then trains `model` on the training share.
pub fn train<T: Scalar>(
    model: Model<T>,
    clips: &[VideoClip],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (train_idx, val_idx) = stratified_split(clips, cfg.split_fraction, cfg.seed)?;
    if train_idx.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val_idx.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let train_set: Vec<VideoClip> = train_idx.iter().map(|&i| clips[i].clone()).collect();
    let val_set: Vec<VideoClip> = val_idx.iter().map(|&i| clips[i].clone()).collect();
    let mut out = fit(model, &train_set, &val_set, cfg, observer)?;
    out.train_indices = train_idx;
    out.val_indices = val_idx;
    Ok(out)
}

/// Trains on explicit training and validation sets. `val` may be empty.
pub fn fit<T: Scalar>(
    mut model: Model<T>,
    train_set: &[VideoClip],
    val: &[VideoClip],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    for c in train_set.iter().chain(val) {
        label_index(c)?;
    }
    let pool = build_pool(cfg.workers)?;
    let mut state = AdamWState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams<T>)> = None;

    for epoch in 1..=cfg.epochs {
        let lr = observer.learning_rate(epoch, cfg.learning_rate);
        let opt = AdamWConfig::new(lr, cfg.weight_decay);

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from_seed(mix_seed(cfg.seed, 0x1000 + epoch as u64)));
        let epoch_clips: Vec<VideoClip> = pool.install(|| {
            order
                .par_iter()
                .map(|&i| match &cfg.augmentation {
                    Some(spec) => {
                        let spec = AugmentSpec {
                            seed: mix_seed(spec.seed, epoch as u64),
                            ..spec.clone()
                        };
                        augment_clip(&train_set[i], &spec)
                    }
                    None => Ok(train_set[i].clone()),
                })
                .collect::<Result<_>>()
        })?;

        for (b, batch) in epoch_clips.chunks(cfg.batch_size).enumerate() {
            let loss = pool
                .install(|| train_step(&mut model, batch, &mut state, &opt))?
                .as_f64();
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            if !model.params.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: f64::NAN,
                });
            }
            if cfg.log_every > 0 && (b + 1) % cfg.log_every == 0 {
                log::info!("epoch {epoch} batch {} loss {loss:.6}", b + 1);
            }
        }

        // Train metrics are measured on the raw clips after the epoch's
        // updates, the same way validation is.
        let (train_loss, train_acc, _, _) = pool.install(|| score(&model, train_set))?;
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a, _, _) = pool.install(|| score(&model, val))?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.4} train_acc {train_acc:.4} val_loss {} val_acc {}",
            val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            val_acc.map_or("-".into(), |v| format!("{v:.4}")),
        );
        observer.on_epoch(&record);

        if let (Some(vl), Some(va)) = (val_loss, val_acc) {
            let improved = match &best {
                None => true,
                Some((ba, bl, _, _)) => va > *ba || (va == *ba && vl < *bl),
            };
            if improved {
                best = Some((va, vl, epoch, model.params.clone()));
                observer.on_checkpoint(CheckpointKind::Best, epoch, &model.params)?;
            }
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(CheckpointKind::Periodic, epoch, &model.params)?;
        }
        history.push(record);
    }

    let (best_params, best_epoch) = match best {
        Some((_, _, e, p)) => (p, Some(e)),
        None => (model.params.clone(), None),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_epoch,
        final_params: model.params,
        history,
        train_indices: (0..train_set.len()).collect(),
        val_indices: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::vision::Frame;

    fn clip(cfg: &ModelConfig, label: Label, seed: u64) -> VideoClip {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let s = cfg.input;
        let frames = (0..s.frames)
            .map(|_| {
                let n = s.height * s.width * s.channels;
                Frame::new(s.height, s.width, s.channels, (0..n).map(|_| rng.random()).collect()).unwrap()
            })
            .collect();
        VideoClip::new(frames, Some(label), format!("{label}_{seed}")).unwrap()
    }

    fn labeled(n_violent: usize, n_calm: usize) -> Vec<VideoClip> {
        let cfg = ModelConfig::tiny();
        (0..n_violent)
            .map(|i| clip(&cfg, Label::Violent, i as u64))
            .chain((0..n_calm).map(|i| clip(&cfg, Label::NonViolent, 100 + i as u64)))
            .collect()
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let clips = labeled(10, 7);
        let (tr, va) = stratified_split(&clips, 0.6, 3).unwrap();
        assert_eq!(tr.len() + va.len(), 17);
        assert!(tr.iter().all(|i| !va.contains(i)));
        let violent_train = tr.iter().filter(|&&i| i < 10).count();
        let calm_train = tr.len() - violent_train;
        assert_eq!(violent_train, 6);
        assert!((calm_train as f64 - 0.6 * 7.0).abs() <= 1.0);
        assert_eq!(stratified_split(&clips, 0.6, 3).unwrap(), (tr, va));
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let clips = labeled(3, 3);
        let model = Model::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        let init = model.params.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(model, &clips, &cfg, &mut ()).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best, init);
        assert_eq!(out.final_params, init);
    }

    #[test]
    fn one_step_decreases_frozen_batch_loss() {
        let batch = labeled(2, 2);
        let mut model = Model::<f64>::new(ModelConfig::tiny(), 11).unwrap();
        let mut state = AdamWState::new();
        let opt = AdamWConfig::new(1e-4, 1e-5);
        let before = train_step(&mut model, &batch, &mut state, &opt).unwrap();
        let (after, _) = batch_loss_and_grads(&model, &batch).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn single_clip_is_memorized() {
        let train_set = labeled(0, 1);
        let cfg = TrainConfig {
            batch_size: 1,
            epochs: 50,
            learning_rate: 1e-3,
            augmentation: None,
            workers: 1,
            ..TrainConfig::default()
        };
        let mut model = Model::<f32>::new(ModelConfig::tiny(), 5).unwrap();
        // Start from the wrong answer so memorization has work to do.
        if let crate::model::HeadWeights::Linear { bias, .. } = &mut model.params.head {
            *bias = Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap();
        }
        let out = fit(model, &train_set, &[], &cfg, &mut ()).unwrap();
        assert_eq!(out.history[0].val_acc, None);
        let reached = out.history.iter().position(|r| r.train_acc == 1.0);
        assert!(reached.is_some(), "never reached 100%: {:?}", out.history.last());
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let clips = labeled(4, 4);
        let run = |workers| {
            let cfg = TrainConfig {
                batch_size: 3,
                epochs: 2,
                workers,
                seed: 9,
                ..TrainConfig::default()
            };
            let model = Model::<f32>::new(ModelConfig::tiny(), 2).unwrap();
            train(model, &clips, &cfg, &mut ()).unwrap()
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn evaluate_counts_every_clip() {
        let clips = labeled(3, 2);
        let model = Model::<f32>::new(ModelConfig::tiny(), 4).unwrap();
        let r = evaluate(&model, &clips).unwrap();
        assert_eq!(r.total, 5);
        assert_eq!(r.per_class[0].support, 3);
        assert!(evaluate(&model, &[]).is_err());
    }

    #[test]
    fn unlabeled_clip_is_rejected() {
        let mut clips = labeled(2, 2);
        clips[0].label = None;
        assert!(stratified_split(&clips, 0.5, 0).is_err());
    }
}
