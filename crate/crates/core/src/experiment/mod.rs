//! Training loop, metrics, sharpness probe, gradient checks and (η, α) sweeps.

mod config;
pub mod gradcheck;
pub mod metrics;
pub mod sharpness;
pub mod sweep;
mod train;

use thiserror::Error;

use crate::data::DataError;
use crate::model::{CalibrationError, ModelError};
use crate::objective::ObjectiveError;
use crate::optimizers::OptimizerError;

pub use config::TrainConfig;
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use metrics::{accuracy, argmax, detect_divergence, detect_frozen, hidden_consistency};
pub use sharpness::{
    estimate_sharpness, power_iteration, training_loss_gradient, SharpnessEstimate, SharpnessOptions,
};
pub use sweep::{
    alpha_slice, locate_fold, read_grid_csv, ridge_slope, sweep, sweep_with, write_grid_csv, FoldEstimate,
    GridCsvError, GridRow, RidgeError, RidgeFit, RidgePoint, SweepCell, SweepGrid, SweepSpec, GRID_COLUMNS,
    MIN_RIDGE_COLUMNS,
};
pub use train::{train, train_from, TrainOutcome, TrainReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Data(#[from] DataError),
}
