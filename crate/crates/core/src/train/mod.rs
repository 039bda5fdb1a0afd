//! Loss, optimizer, training loop and evaluation metrics.

mod export;
mod loss;
mod metrics;
mod optim;
mod trainer;

pub use export::{
    export_history, export_report, history_from_csv, history_to_csv, read_history, read_report, HISTORY_HEADER,
};
pub use loss::{cross_entropy, cross_entropy_from_logits};
pub use metrics::{argmax, ClassScores, EvalReport};
pub use optim::{optimizer_step, AdamWConfig, AdamWState};
pub use trainer::{
    batch_loss_and_grads, check_model_gradients, clip_loss_and_grads, evaluate, fit, score, stratified_split, train,
    train_step, CheckpointKind, EpochRecord, TrainConfig, TrainObserver, TrainOutcome, CLASS_NAMES,
};
