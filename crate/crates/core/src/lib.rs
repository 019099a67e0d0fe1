//! Sparse Bayesian regression by automatic relevance determination (ARD),
//! with sparsity-enhancing variants, analytic support-recovery rates for
//! orthogonal designs, feature libraries and dynamical-system generators.

pub mod ard;
pub mod dynamics;
pub mod error;
pub mod features;
pub mod linops;
pub mod rates;
pub mod scalar;
pub mod selection;
pub mod sparsifiers;

pub use error::{Result, SparseArdError};
pub use scalar::Real;

/// Double-precision instances of the generic types.
pub type RegressionProblem64 = linops::RegressionProblem<f64>;
pub type ArdOptions64 = ard::ArdOptions<f64>;
pub type ArdFit64 = ard::ArdFit<f64>;
pub type SparsifierSpec64 = sparsifiers::SparsifierSpec<f64>;
pub type SparseFit64 = sparsifiers::SparseFit<f64>;
pub type RateQuery64 = rates::RateQuery<f64>;
pub type SupportReport64 = selection::SupportReport<f64>;
pub type TrajectoryDataset64 = dynamics::TrajectoryDataset<f64>;

/// Single-precision instances of the generic types.
pub type RegressionProblem32 = linops::RegressionProblem<f32>;
pub type ArdOptions32 = ard::ArdOptions<f32>;
pub type ArdFit32 = ard::ArdFit<f32>;
pub type SparsifierSpec32 = sparsifiers::SparsifierSpec<f32>;
pub type SparseFit32 = sparsifiers::SparseFit<f32>;
pub type RateQuery32 = rates::RateQuery<f32>;
pub type SupportReport32 = selection::SupportReport<f32>;
pub type TrajectoryDataset32 = dynamics::TrajectoryDataset<f32>;
