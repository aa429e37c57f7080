//! Experiment harness: configuration, optimization, training,
//! cross-validation, metrics, baselines, synthetic data and sweeps.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod cv;
pub mod metrics;
pub mod optim;
pub mod sweep;
pub mod synth;
pub mod train;

pub use baseline::{baseline_impute, Baseline};
pub use checkpoint::{Checkpoint, Prediction};
pub use config::RunConfig;
pub use cv::{cross_validate, fold_assignment};
pub use metrics::{evaluate, Metrics};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use sweep::{depth_sweep, sweep_table, SweepRow};
pub use synth::{synth_generate, write_wide_csv, SynthSpec};
pub use train::{run, train, MetricsReport, TrainOutcome, TrainReport};
