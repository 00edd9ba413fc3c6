//! Optimiser, schedule, training loop, checkpoints, logs and ablations.

pub mod ablation;
pub mod adamw;
pub mod checkpoint;
pub mod runlog;
pub mod trainer;

pub use ablation::{ablate_converter, ablate_resolution, ablate_shared_vs_separate, AblationReport, AblationRow, RunCache, RunHook};
pub use adamw::{adamw_step, cosine_lr, AdamState};
pub use checkpoint::Checkpoint;
pub use runlog::{EpochRecord, EvalRecord, RunLog};
pub use trainer::{config_hash, evaluate, hex, mean_measurement, predict, train, Evaluation, TrainConfig, TrainOutput};
