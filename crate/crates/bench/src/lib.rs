// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use medscat::{make_h, Grid, MatrixSymbol, MediumOperator, MediumSpec, Result};

/// `H = M⁻¹(-Δ)` on a 1-d box with the rational medium used throughout the suite.
pub fn laplacian_operator(n: usize) -> Result<MediumOperator> {
    let grid = Grid::new(1, n, 8.0 * PI, 1)?;
    let m = Arc::new(MediumSpec::Rational { amplitude: 0.3, power: 2.0 }.build(&grid)?);
    make_h(m, &MatrixSymbol::builtin("laplacian", 1)?)
}

/// The same medium for the first-order wave system on a `d`-dimensional box.
pub fn wave_operator(d: usize, n: usize) -> Result<MediumOperator> {
    let grid = Grid::new(d, n, 8.0 * PI, 2)?;
    let m = MediumSpec::WaveBlock(Box::new(MediumSpec::Rational { amplitude: 0.3, power: 2.0 }));
    make_h(Arc::new(m.build(&grid)?), &MatrixSymbol::builtin("wave", d)?)
}
