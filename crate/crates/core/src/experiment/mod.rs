//! Data handling, the training loop with plateau/early-stop scheduling,
//! dementia-positive metrics and repeated-run aggregation.

mod config;
mod data;
mod metrics;
mod report;
mod scheduler;
mod synth;
mod train;

pub use config::{DataSource, RunConfig};
pub use data::{load_dataset, save_dataset, split_train_val, Sample, FEATURES_DIR, LABELS_FILE, TOKENS_FILE, VOCAB_FILE};
pub use metrics::{evaluate_metrics, Confusion, Metrics};
pub use report::{run_experiment, MeanStd, Report, RunRecord, METRIC_NAMES};
pub use scheduler::{PlateauScheduler, SchedulerStep};
pub use synth::{synth_dataset, synth_dataset_with, SynthSpec};
pub use train::{evaluate, train, EpochRecord, Evaluation, History, TrainConfig};
