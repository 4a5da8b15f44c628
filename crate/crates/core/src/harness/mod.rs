//! Optimizer, training loop, evaluation and the leave-one-domain-out benchmark.

mod adam;
mod bench;
mod config;
mod train;

pub use adam::{adam_step, AdamState};
pub use bench::{
    bench_leave_one_out, load_dataset, method_config, BenchReport, RunRecord, TableRow, THREADS_ENV,
};
pub use config::{DatasetConfig, ExperimentConfig, Method, TrainConfig};
pub use train::{
    ace_distance_stats, evaluate, prepare_fold, stratified_batches, train, EpochMetrics, FoldData, MetricsWriter,
    RunMetrics, TrainOutcome,
};
