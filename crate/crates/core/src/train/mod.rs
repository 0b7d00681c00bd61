//! Training, evaluation, and leave-one-subject-out orchestration.

mod adam;
mod checkpoint;
mod metrics;
mod schedule;
mod trainer;

pub use adam::AdamState;
pub(crate) use checkpoint::sha256_hex;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, StatSnapshot, TensorSnapshot,
    CHECKPOINT_FORMAT_VERSION,
};
pub use trainer::{
    evaluate, fit, history_csv, loso_csv, predict, run_loso, write_history_csv, write_loso_csv,
    EpochStats, FitResult, FoldOutcome, LosoOutcome, LosoSummary, TrainConfig,
};
pub use metrics::{
    accuracy, confusion_matrix, f1_from_confusion, macro_f1, mean_std, metrics_report,
    MetricsReport,
};
pub use schedule::cosine_lr;
