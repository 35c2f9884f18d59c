// SPDX-License-Identifier: Apache-2.0

//! Media `M(x)`: symmetric positive-definite `k×k` matrices sampled on the lattice.
//!
//! A medium defines the weighted inner product `(f, g)_ℋ = ∫⟨M(x)f(x), g(x)⟩dx`
//! in which `H = M⁻¹P(D)` is self-adjoint. Square roots and inverses are
//! precomputed per point so that metric conjugations are cheap.

use std::sync::Arc;

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;

/// Analytic medium families. Scalar families are multiplied by the `k×k` identity.
#[derive(Debug, Clone, PartialEq)]
pub enum MediumSpec {
    /// `m(x) = value`.
    Constant { value: f64 },
    /// `m(x) = 1 + a·exp(-|x|²/w)`.
    Bump { amplitude: f64, width: f64 },
    /// `m(x) = 1 + a·(1+|x|)^{-p}`.
    Rational { amplitude: f64, power: f64 },
    /// `diag(1, m(x))` for the first-order wave system.
    WaveBlock(Box<MediumSpec>),
}

/// Names of the analytic families, as used in scenario files.
pub const BUILTIN_MEDIA: [&str; 4] = ["constant", "bump", "rational", "wave-block"];

impl MediumSpec {
    /// Value of a scalar family at `x`.
    pub fn scalar_at(&self, x: &[f64]) -> Option<f64> {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        match *self {
            MediumSpec::Constant { value } => Some(value),
            MediumSpec::Bump { amplitude, width } => Some(1.0 + amplitude * (-r * r / width).exp()),
            MediumSpec::Rational { amplitude, power } => Some(1.0 + amplitude * (1.0 + r).powf(-power)),
            MediumSpec::WaveBlock(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MediumSpec::Constant { value } => format!("constant({value})"),
            MediumSpec::Bump { amplitude, width } => format!("bump(a={amplitude},w={width})"),
            MediumSpec::Rational { amplitude, power } => format!("rational(a={amplitude},p={power})"),
            MediumSpec::WaveBlock(inner) => format!("wave-block[{}]", inner.label()),
        }
    }

    /// Samples the family on `grid` (whose fiber dimension selects `k`).
    pub fn build(&self, grid: &Grid) -> Result<MediumField> {
        let k = grid.fiber();
        match self {
            MediumSpec::WaveBlock(inner) => {
                if k != 2 {
                    return Err(Error::config("medium", "wave-block media need fiber dimension 2"));
                }
                if matches!(**inner, MediumSpec::WaveBlock(_)) {
                    return Err(Error::config("medium", "wave-block cannot be nested"));
                }
                MediumField::from_fn(grid, self.label(), |x| {
                    vec![1.0, 0.0, 0.0, inner.scalar_at(x).expect("scalar family")]
                })
            }
            scalar => MediumField::from_fn(grid, self.label(), |x| {
                let m = scalar.scalar_at(x).expect("scalar family");
                let mut out = vec![0.0; k * k];
                for i in 0..k {
                    out[i * k + i] = m;
                }
                out
            }),
        }
    }
}

/// A sampled medium with verified bounds `c0 ≤ M(x) ≤ c1`.
#[derive(Debug, Clone)]
pub struct MediumField {
    grid: Grid,
    label: String,
    values: Vec<f64>,
    inverse: Vec<f64>,
    sqrt: Vec<f64>,
    inv_sqrt: Vec<f64>,
    c0: f64,
    c1: f64,
    symmetry_defect: f64,
}

impl MediumField {
    /// Samples `M(x)` (row-major `k×k` per point) and verifies symmetry and positivity.
    pub fn from_fn<F>(grid: &Grid, label: impl Into<String>, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let k = grid.fiber();
        let mut values = Vec::with_capacity(grid.num_points() * k * k);
        for p in 0..grid.num_points() {
            let x = grid.position(p);
            let m = f(&x[..grid.dim()]);
            if m.len() != k * k {
                return Err(Error::Shape(format!("medium sampler returned {} entries, expected {}", m.len(), k * k)));
            }
            values.extend(m);
        }
        Self::from_array(grid, values, label)
    }

    /// Wraps raw samples laid out as `(point, row, col)`.
    pub fn from_array(grid: &Grid, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let k = grid.fiber();
        let np = grid.num_points();
        if values.len() != np * k * k {
            return Err(Error::Shape(format!(
                "medium array has {} entries, expected {} points x {k}x{k}",
                values.len(),
                np
            )));
        }
        let kk = k * k;
        let mut inverse = vec![0.0; np * kk];
        let mut sqrt = vec![0.0; np * kk];
        let mut inv_sqrt = vec![0.0; np * kk];
        let mut c0 = f64::INFINITY;
        let mut c1 = f64::NEG_INFINITY;
        let mut symmetry_defect = 0.0f64;
        for p in 0..np {
            let block = &values[p * kk..(p + 1) * kk];
            let mut scale = 0.0f64;
            for i in 0..k {
                for j in 0..k {
                    if !block[i * k + j].is_finite() {
                        return Err(Error::Shape(format!("non-finite medium entry at point {p}")));
                    }
                    scale = scale.max(block[i * k + j].abs());
                    symmetry_defect = symmetry_defect.max((block[i * k + j] - block[j * k + i]).abs());
                }
            }
            if symmetry_defect > 1e-12 * scale.max(1.0) {
                return Err(Error::Shape(format!("medium is not symmetric at point {p} (defect {symmetry_defect:e})")));
            }
            let (eig, vecs) = symmetric_eigen(block, k)?;
            let lo = eig[0];
            let hi = eig[k - 1];
            if lo <= 0.0 {
                let x = grid.position(p);
                return Err(Error::Positivity { point: p, x: x[..grid.dim()].to_vec(), min_eig: lo });
            }
            c0 = c0.min(lo);
            c1 = c1.max(hi);
            spectral_fn(&eig, &vecs, k, |l| 1.0 / l, &mut inverse[p * kk..(p + 1) * kk]);
            spectral_fn(&eig, &vecs, k, f64::sqrt, &mut sqrt[p * kk..(p + 1) * kk]);
            spectral_fn(&eig, &vecs, k, |l| 1.0 / l.sqrt(), &mut inv_sqrt[p * kk..(p + 1) * kk]);
        }
        Ok(Self { grid: grid.clone(), label: label.into(), values, inverse, sqrt, inv_sqrt, c0, c1, symmetry_defect })
    }

    /// `c·I` on every point.
    pub fn constant(grid: &Grid, value: f64) -> Result<Self> {
        MediumSpec::Constant { value }.build(grid)
    }

    pub fn identity(grid: &Grid) -> Self {
        Self::constant(grid, 1.0).expect("identity medium is valid")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn fiber(&self) -> usize {
        self.grid.fiber()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn symmetry_defect(&self) -> f64 {
        self.symmetry_defect
    }

    /// Row-major `(point, row, col)` samples.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `M(x)` at point `p`, row-major.
    pub fn at(&self, p: usize) -> &[f64] {
        let kk = self.fiber() * self.fiber();
        &self.values[p * kk..(p + 1) * kk]
    }

    pub fn check_field(&self, f: &Field) -> Result<()> {
        f.check_grid(&self.grid)
    }

    pub fn check_same_grid(&self, other: &MediumField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape(format!("media `{}` and `{}` live on different grids", self.label, other.label)));
        }
        Ok(())
    }

    /// `M f`.
    pub fn apply(&self, f: &Field) -> Field {
        apply_blocks(&self.values, self.fiber(), f)
    }

    /// `M⁻¹ f`.
    pub fn apply_inverse(&self, f: &Field) -> Field {
        apply_blocks(&self.inverse, self.fiber(), f)
    }

    /// `M^{1/2} f`.
    pub fn apply_sqrt(&self, f: &Field) -> Field {
        apply_blocks(&self.sqrt, self.fiber(), f)
    }

    /// `M^{-1/2} f`.
    pub fn apply_inv_sqrt(&self, f: &Field) -> Field {
        apply_blocks(&self.inv_sqrt, self.fiber(), f)
    }

    /// Pointwise difference `M - other`, i.e. the perturbation `V`, as raw blocks.
    pub fn difference(&self, other: &MediumField) -> Result<Vec<f64>> {
        self.check_same_grid(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }

    pub fn is_identical_to(&self, other: &MediumField) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

pub(crate) fn apply_blocks(blocks: &[f64], k: usize, f: &Field) -> Field {
    let mut out = f.clone();
    let kk = k * k;
    if k == 1 {
        for (o, m) in out.values_mut().iter_mut().zip(blocks) {
            *o *= m;
        }
        return out;
    }
    let src = f.values();
    for (p, chunk) in out.values_mut().chunks_exact_mut(k).enumerate() {
        let b = &blocks[p * kk..(p + 1) * kk];
        let v = &src[p * k..(p + 1) * k];
        for i in 0..k {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..k {
                acc += v[j] * b[i * k + j];
            }
            chunk[i] = acc;
        }
    }
    out
}

/// Eigenvalues (ascending) and row-major eigenvector columns of a symmetric block.
fn symmetric_eigen(block: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k == 1 {
        return Ok((vec![block[0]], vec![1.0]));
    }
    let m = Mat::from_fn(k, k, |i, j| 0.5 * (block[i * k + j] + block[j * k + i]));
    let evd =
        m.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinAlg(format!("medium eigen-decomposition: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let eig = (0..k).map(|i| s[i]).collect();
    let vecs = (0..k * k).map(|idx| u[(idx / k, idx % k)]).collect();
    Ok((eig, vecs))
}

fn spectral_fn(eig: &[f64], vecs: &[f64], k: usize, f: impl Fn(f64) -> f64, out: &mut [f64]) {
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = (0..k).map(|l| vecs[i * k + l] * f(eig[l]) * vecs[j * k + l]).sum();
        }
    }
}

/// Spectral norm of a symmetric `k×k` block: the largest absolute eigenvalue.
pub(crate) fn symmetric_spectral_norm(block: &[f64], k: usize) -> f64 {
    if k == 1 {
        return block[0].abs();
    }
    match symmetric_eigen(block, k) {
        Ok((eig, _)) => eig.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        Err(_) => f64::NAN,
    }
}

/// Inner product carried by a Hilbert space: plain `L²` or a medium.
#[derive(Debug, Clone)]
pub enum Metric {
    Euclidean,
    Medium(Arc<MediumField>),
}

impl Metric {
    pub fn apply(&self, f: &Field) -> Field {
        match self {
            Metric::Euclidean => f.clone(),
            Metric::Medium(m) => m.apply(f),
        }
    }

    pub fn apply_inverse(&self, f: &Field) -> Field {
        match self {
            Metric::Euclidean => f.clone(),
            Metric::Medium(m) => m.apply_inverse(f),
        }
    }

    pub fn apply_sqrt(&self, f: &Field) -> Field {
        match self {
            Metric::Euclidean => f.clone(),
            Metric::Medium(m) => m.apply_sqrt(f),
        }
    }

    pub fn apply_inv_sqrt(&self, f: &Field) -> Field {
        match self {
            Metric::Euclidean => f.clone(),
            Metric::Medium(m) => m.apply_inv_sqrt(f),
        }
    }

    pub fn inner(&self, grid: &Grid, f: &Field, g: &Field) -> Complex64 {
        self.apply(f).inner(g, grid)
    }

    pub fn norm(&self, grid: &Grid, f: &Field) -> f64 {
        self.inner(grid, f, f).re.max(0.0).sqrt()
    }

    pub fn label(&self) -> &str {
        match self {
            Metric::Euclidean => "L2",
            Metric::Medium(m) => m.label(),
        }
    }
}

/// `(f, g)_ℋ = Σ_x ⟨M(x)f(x), g(x)⟩ hᵈ`.
pub fn weighted_inner(medium: &MediumField, f: &Field, g: &Field) -> Result<Complex64> {
    medium.check_field(f)?;
    medium.check_field(g)?;
    Ok(medium.apply(f).inner(g, medium.grid()))
}

/// Pointwise decay of `V = M - M₀` against the envelope `C(1+|x|)^{-ρ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// Slope of the shell-maximum envelope on a log-log scale, sign flipped.
    pub fitted_rho: f64,
    /// Smallest `C` with `|V(x)| ≤ C(1+|x|)^{-ρ_target}` at every lattice point.
    pub fitted_c: f64,
    /// Excess of `|V|` over the envelope certified on the inner two thirds of the box.
    pub pointwise_max_violation: f64,
    pub passes: bool,
    pub rho_target: f64,
}

const DECAY_SLACK: f64 = 1e-8;

/// Shell maxima are taken over annuli `⌈|x|⌉ = s`. The target exponent passes when the
/// certificate obtained from `|x| ≤ (2/3)·max|x|` still bounds `|V|` on the outer shells,
/// so a passing constant never comes from the truncation boundary.
pub fn decay_report(medium: &MediumField, background: &MediumField, rho_target: f64) -> Result<DecayReport> {
    let v = medium.difference(background)?;
    let grid = medium.grid();
    let k = medium.fiber();
    let kk = k * k;
    let np = grid.num_points();
    let norms: Vec<f64> = (0..np).map(|p| symmetric_spectral_norm(&v[p * kk..(p + 1) * kk], k)).collect();
    let radii: Vec<f64> = (0..np).map(|p| grid.radius(p)).collect();
    let vmax = norms.iter().cloned().fold(0.0f64, f64::max);
    if vmax == 0.0 {
        return Ok(DecayReport {
            fitted_rho: f64::INFINITY,
            fitted_c: 0.0,
            pointwise_max_violation: 0.0,
            passes: true,
            rho_target,
        });
    }
    let envelope = |p: usize| norms[p] * (1.0 + radii[p]).powf(rho_target);
    let fitted_c = (0..np).map(envelope).fold(0.0f64, f64::max);

    let rmax = radii.iter().cloned().fold(0.0f64, f64::max);
    let split = 2.0 * rmax / 3.0;
    let inner_c = (0..np).filter(|&p| radii[p] <= split).map(envelope).fold(0.0f64, f64::max);
    let bound = inner_c * (1.0 + DECAY_SLACK);
    let violation = (0..np)
        .map(|p| norms[p] - bound * (1.0 + radii[p]).powf(-rho_target))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);

    let mut shells: Vec<(f64, f64)> = Vec::new();
    let nshell = rmax.ceil() as usize + 1;
    let mut best = vec![(0.0f64, 0.0f64); nshell];
    for p in 0..np {
        let s = radii[p].ceil() as usize;
        if norms[p] > best[s].1 {
            best[s] = (radii[p], norms[p]);
        }
    }
    for (r, m) in best {
        if m > 0.0 {
            shells.push(((1.0 + r).ln(), m.ln()));
        }
    }
    let fitted_rho = match crate::fit::least_squares_line(&shells) {
        Some((slope, _)) => -slope,
        None => f64::NAN,
    };
    Ok(DecayReport { fitted_rho, fitted_c, pointwise_max_violation: violation, passes: violation == 0.0, rho_target })
}
