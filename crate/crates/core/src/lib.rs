//! Adaptive sparse group lasso for penalized quantile regression.

pub mod cli;
pub mod data;
pub mod error;
pub mod genomics;
pub mod loss;
pub mod penalty;
pub mod plot;
pub mod reduction;
pub mod select;
pub mod simulation;
pub mod solver;
pub mod weights;

pub use data::{Dataset, GroupStructure, SplitSpec};
pub use error::{Error, Result};
pub use loss::{check_loss, qr_risk, QuantileLevel};
pub use penalty::{penalty_value, prox_asgl, PenaltySpec};
pub use solver::{fit, kkt_residual, lambda_max, FitResult, SolverOptions};
