//! Robust prediction of treatment effects under distribution shift.

pub mod bounds;
pub mod cli;
pub mod covariance;
pub mod density;
pub mod error;
pub mod estimate;
pub mod inference;
pub mod radius;
pub mod sample;
pub mod simulation;
pub mod solver;

pub use bounds::{estimate_bounds, BoundMethod, VarianceBounds};
pub use covariance::{loadings, Loadings, SharpIntegration, SigmaMatrix};
pub use error::{Error, Result};
pub use estimate::{estimate_ate_diff_means, estimate_moments, ArmMoments};
pub use sample::{load_sample, EmpiricalDistribution, ExperimentalSample};
pub use solver::{solve_minimax, BoundEstimates, RobustConfig};
