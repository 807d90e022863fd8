//! Numerical laboratory for elliptic operators with rapidly oscillating random
//! coefficients on a bounded box with Dirichlet boundary conditions.
//!
//! The crate synthesizes stationary Gaussian coefficient fields on a torus,
//! solves periodized corrector problems to obtain effective tensors, fluxes and
//! the homogenization commutator, discretizes `-div(a(./eps) grad)` with P1
//! finite elements, extracts the smallest eigenpairs of the resulting sparse
//! pencils, and runs Monte Carlo campaigns that measure eigenvalue convergence
//! rates and the Gaussian structure of rescaled eigenvalue fluctuations.
//!
//! All numerics are generic over the floating-point scalar through [`Scalar`];
//! `f64` aliases for the main types are exported at the crate root.

pub mod config;
pub mod corrector;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod field;
pub mod fluct;
pub mod grid;
pub mod io;
pub mod lab;
pub mod mesh;
pub mod scalar;
pub mod solver;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete `f64` aliases for the main domain types.
pub type TorusGrid64 = grid::TorusGrid<f64>;
pub type TorusField64 = grid::TorusField<f64>;
pub type GaussianField64 = field::GaussianField<f64>;
pub type KernelSpec64 = field::KernelSpec<f64>;
pub type CoefficientMapSpec64 = field::CoefficientMapSpec<f64>;
pub type CoefficientField64 = field::CoefficientField<f64>;
pub type SymMat64 = dense::SymMat<f64>;
pub type BoxMesh64 = mesh::BoxMesh<f64>;
pub type SparseMatrix64 = sparse::SparseMatrix<f64>;
pub type SparseOperatorPair64 = mesh::SparseOperatorPair<f64>;
pub type SolverConfig64 = solver::SolverConfig<f64>;
pub type EigenResult64 = solver::EigenResult<f64>;
pub type CorrectorSet64 = corrector::CorrectorSet<f64>;
pub type CommutatorField64 = corrector::CommutatorField<f64>;
pub type RealizationResult64 = experiment::RealizationResult<f64>;
pub type RateTable64 = experiment::RateTable<f64>;
pub type EnsembleTable64 = fluct::EnsembleTable<f64>;
pub type GkEstimate64 = fluct::GkEstimate<f64>;
pub type GaussianFit64 = fluct::GaussianFit<f64>;
