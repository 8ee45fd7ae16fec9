//! Training, evaluation, grids and timing.

mod bench;
mod config;
mod train;

pub use bench::{measure_inference, report_scaling, scaling_csv, InferenceTiming, ScalingRow};
pub use config::{grid_expand, GridSpace, TrainConfig, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE, STANDARD_SPACE};
pub use train::{evaluate, fit, train, EvalMetrics, FitHistory, RunReport, TrainView};
