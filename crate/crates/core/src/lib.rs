// SPDX-License-Identifier: Apache-2.0

//! Scattering theory for matrix-valued Fourier multipliers in variable media.
//!
//! Operators of the form `H = M(x)⁻¹ P(D)` on a periodic grid, with matrix-free
//! resolvents, Schatten-class diagnostics, wave operators computed from spectral
//! decompositions, and a wave-equation reduction.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod error;
pub mod field;
pub mod fit;
pub mod grid;
pub mod krylov;
pub mod media;
pub mod moeller;
pub mod operators;
pub mod schatten;
pub mod symbols;
pub mod waveq;

pub use error::{Error, Result};
pub use field::Field;
pub use grid::{bracket_pow, weight_field, Grid, WeightDomain, WeightField};
pub use media::{decay_report, weighted_inner, DecayReport, MediumField, MediumSpec, Metric};
pub use operators::{
    apply_pd, identification_ops, make_h, perturbation_apply, resolvent_identity_residuals, GridOperator,
    IdentificationPair, MediumOperator, ResolventConfig, ResolventSolve, SolveMethod,
};
pub use symbols::{ellipticity_report, EllipticityReport, MatrixSymbol, PolynomialTerm, SymbolKind};

pub use num_complex::Complex64;
