//! SGD training, checkpoints, cross-validation, evaluation and the max-pool
//! ablation harness.

mod ablation;
mod checkpoint;
mod config;
mod cv;
mod eval;
mod optim;
mod trainer;

pub use ablation::{run_maxpool_ablation, AblationOutcome};
pub use checkpoint::{checkpoint_paths, Checkpoint, EpochRecord};
pub use config::{LrSchedule, Profile, TrainConfig};
pub use cv::{cross_validate, partition_folds, CvOutcome, FoldResult};
pub use eval::{compare_paired, evaluate, predict_volume, segment_slices, validation_score, CellComparison, Evaluation};
pub use optim::{sgd_step, Sgd, SgdHyper};
pub use trainer::{run, sample_list, train, Sample, TrainOutcome, Trainer};
