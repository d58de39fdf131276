//! Training, inference, evaluation and sweeps built on the other modules.

mod config;
mod infer;
mod train;

pub use config::TrainConfig;
pub use infer::{
    degrade, evaluate, lambda_grid, superresolve, superresolve_image, sweep_config, sweep_lambda,
    Method, SweepEntry, SweepRow, SweepTable,
};
pub use train::{
    checkpoint_path, train, train_on_manifest, LogRow, TrainLog, TrainOutcome, TrainState,
    LOG_HEADER,
};
