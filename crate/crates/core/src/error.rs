// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A construction parameter is out of range. `field` names the offending input.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The medium has a non-positive eigenvalue at some lattice point.
    #[error("medium is not positive definite at lattice point {point} (x = {x:?}): smallest eigenvalue {min_eig:e}")]
    Positivity { point: usize, x: Vec<f64>, min_eig: f64 },

    #[error("symbol evaluation produced non-finite entries at xi = {xi:?}")]
    SymbolEval { xi: Vec<f64> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Iterative solve stopped before reaching its tolerance.
    #[error("solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("dense materialization refused: {dof} degrees of freedom exceeds the cap of {cap}")]
    DenseCap { dof: usize, cap: usize },

    #[error("decomposition residual {residual:e} exceeds tolerance {tolerance:e}")]
    Accuracy { residual: f64, tolerance: f64 },

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    /// A scenario violates a precondition that is checked before any work is done.
    #[error("scenario rejected: {0}")]
    Rejected(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
