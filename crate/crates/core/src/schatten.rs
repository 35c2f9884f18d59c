// SPDX-License-Identifier: Apache-2.0

//! Singular values, Schatten norms and refinement-based class membership.
//!
//! Every operator on a finite grid is trace class, so membership questions are
//! answered by comparing partial sums across dyadic refinements.

use std::ops::RangeInclusive;

use faer::Mat;
use num_complex::Complex64;
use rand::Rng;

use crate::dense;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::fit::least_squares_line;
use crate::grid::Grid;
use crate::operators::{GridOperator, IdentificationPair, MediumOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMethod {
    DenseSvd,
    Randomized,
}

impl SpectrumMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectrumMethod::DenseSvd => "dense-svd",
            SpectrumMethod::Randomized => "randomized",
        }
    }
}

/// Singular values `s₁ ≥ s₂ ≥ … ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    svals: Vec<f64>,
    rows: usize,
    cols: usize,
    method: SpectrumMethod,
}

impl SingularSpectrum {
    /// Sorts and validates raw singular values.
    pub fn from_values(mut svals: Vec<f64>, rows: usize, cols: usize, method: SpectrumMethod) -> Result<Self> {
        if svals.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Domain("singular values must be finite and nonnegative".into()));
        }
        svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(Self { svals, rows, cols, method })
    }

    pub fn from_matrix(mat: &Mat<Complex64>) -> Result<Self> {
        let s = dense::singular_values(mat)?;
        // roundoff can leave tiny negative values in degenerate cases
        let s = s.into_iter().map(|v| v.max(0.0)).collect();
        Self::from_values(s, mat.nrows(), mat.ncols(), SpectrumMethod::DenseSvd)
    }

    pub fn svals(&self) -> &[f64] {
        &self.svals
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn method(&self) -> SpectrumMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.svals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.svals.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.svals.first().copied().unwrap_or(0.0)
    }

    /// `s_n` with 1-based `n`; zero beyond the stored spectrum.
    pub fn nth(&self, n: usize) -> f64 {
        assert!(n >= 1, "singular values are indexed from 1");
        self.svals.get(n - 1).copied().unwrap_or(0.0)
    }

    /// `Σ s_n^p`.
    pub fn power_sum(&self, p: f64) -> Result<f64> {
        if !(p > 0.0) {
            return Err(Error::Domain(format!("power sums need p > 0, got {p}")));
        }
        Ok(self.svals.iter().map(|s| s.powf(p)).sum())
    }

    /// `(Σ s_n^p)^{1/p}`; `p = ∞` gives `s₁`.
    pub fn schatten_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::Domain(format!("Schatten norms need p >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(self.largest());
        }
        // scale by s₁ to avoid overflow for large p
        let s1 = self.largest();
        if s1 == 0.0 {
            return Ok(0.0);
        }
        let sum: f64 = self.svals.iter().map(|s| (s / s1).powf(p)).sum();
        Ok(s1 * sum.powf(1.0 / p))
    }

    /// Least-squares slope of `log s_n` against `log n` over a 1-based inclusive window.
    pub fn decay_exponent(&self, window: RangeInclusive<usize>) -> Result<f64> {
        let (lo, hi) = (*window.start(), *window.end());
        if lo < 1 || hi > self.svals.len() || hi < lo {
            return Err(Error::Domain(format!(
                "window [{lo}, {hi}] outside the spectrum of length {}",
                self.svals.len()
            )));
        }
        if hi - lo + 1 < 8 {
            return Err(Error::InsufficientData(format!("window [{lo}, {hi}] has fewer than 8 points")));
        }
        let mut pts = Vec::with_capacity(hi - lo + 1);
        for n in lo..=hi {
            let s = self.svals[n - 1];
            if !(s > 0.0) {
                return Err(Error::DegenerateFit(format!("s_{n} = {s} inside the fit window")));
            }
            pts.push(((n as f64).ln(), s.ln()));
        }
        least_squares_line(&pts)
            .map(|(slope, _)| slope)
            .ok_or_else(|| Error::DegenerateFit("fit window is degenerate".into()))
    }
}

/// Metric-correct singular values of a densifiable operator.
pub fn singular_values(op: &GridOperator) -> Result<SingularSpectrum> {
    SingularSpectrum::from_matrix(&op.to_dense_symmetrized()?)
}

pub fn schatten_norm(s: &SingularSpectrum, p: f64) -> Result<f64> {
    s.schatten_norm(p)
}

pub fn decay_exponent(s: &SingularSpectrum, window: RangeInclusive<usize>) -> Result<f64> {
    s.decay_exponent(window)
}

/// `max(1, d / min(r, κn))`.
pub fn membership_threshold(d: usize, r: f64, kappa: f64, n: u32) -> Result<f64> {
    if !(r > 0.0) || !(kappa > 0.0) || n == 0 || d == 0 {
        return Err(Error::Domain(format!("threshold needs r, κ, n, d > 0 (got r={r}, κ={kappa}, n={n}, d={d})")));
    }
    Ok((d as f64 / r.min(kappa * n as f64)).max(1.0))
}

/// Default margin above the threshold for the probe exponent.
pub const PROBE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub r: f64,
    pub n: u32,
    pub kappa: f64,
    pub d: usize,
    pub threshold_p: f64,
    pub probe_p: f64,
    pub fitted_decay_alpha: Option<f64>,
    /// `(p, Σ s_n^p)` on the base grid.
    pub partial_sums: Vec<(f64, f64)>,
    /// `(p, Σ s_n^p)` on the refined grid.
    pub refined_partial_sums: Vec<(f64, f64)>,
    /// `|S_fine - S_coarse| / S_coarse` at the probe exponent.
    pub refinement_ratio: f64,
    pub spectrum: SingularSpectrum,
    pub refined_spectrum: SingularSpectrum,
}

/// Builds the operator on `grid` and on `refined`, and compares partial sums at
/// `p = threshold·(1 + PROBE_MARGIN)` and at any `extra_p`.
#[allow(clippy::too_many_arguments)]
pub fn membership_report<B>(
    build: B,
    grid: &Grid,
    refined: &Grid,
    r: f64,
    n: u32,
    kappa: f64,
    extra_p: &[f64],
    window: Option<RangeInclusive<usize>>,
) -> Result<MembershipReport>
where
    B: Fn(&Grid) -> Result<GridOperator>,
{
    let d = grid.dim();
    let threshold_p = membership_threshold(d, r, kappa, n)?;
    let probe_p = threshold_p * (1.0 + PROBE_MARGIN);
    let spectrum = singular_values(&build(grid)?)?;
    let refined_spectrum = singular_values(&build(refined)?)?;
    let mut ps = vec![probe_p];
    ps.extend_from_slice(extra_p);
    let sums =
        |s: &SingularSpectrum| -> Result<Vec<(f64, f64)>> { ps.iter().map(|&p| Ok((p, s.power_sum(p)?))).collect() };
    let partial_sums = sums(&spectrum)?;
    let refined_partial_sums = sums(&refined_spectrum)?;
    let refinement_ratio = relative_change(partial_sums[0].1, refined_partial_sums[0].1);
    let fitted_decay_alpha = match window {
        Some(w) => Some(spectrum.decay_exponent(w)?),
        None => None,
    };
    Ok(MembershipReport {
        r,
        n,
        kappa,
        d,
        threshold_p,
        probe_p,
        fitted_decay_alpha,
        partial_sums,
        refined_partial_sums,
        refinement_ratio,
        spectrum,
        refined_spectrum,
    })
}

/// `|fine - coarse| / |coarse|`, zero when both vanish.
pub fn relative_change(coarse: f64, fine: f64) -> f64 {
    if coarse == 0.0 && fine == 0.0 {
        0.0
    } else {
        (fine - coarse).abs() / coarse.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    /// Relative change of the estimate over the last iteration.
    pub convergence_ratio: f64,
    pub iterations: usize,
}

/// Power iteration on `T†T` in the domain metric; the result is a lower bound for `s₁`.
pub fn operator_norm_estimate<R: Rng + ?Sized>(op: &GridOperator, iters: usize, rng: &mut R) -> Result<NormEstimate> {
    if iters == 0 {
        return Err(Error::Domain("power iteration needs at least one step".into()));
    }
    let grid = op.grid();
    let dm = op.domain_metric();
    let mut v = Field::random(grid, rng);
    let nv = dm.norm(grid, &v);
    v.scale(Complex64::new(1.0 / nv, 0.0));
    let (mut prev, mut est, mut ratio) = (0.0f64, 0.0f64, f64::INFINITY);
    for it in 0..iters {
        let tv = op.apply(&v)?;
        est = op.range_metric().norm(grid, &tv);
        ratio = if it == 0 { f64::INFINITY } else { relative_change(prev, est) };
        prev = est;
        let w = op.adjoint_apply(&tv)?;
        let nw = dm.norm(grid, &w);
        if nw == 0.0 {
            return Ok(NormEstimate { value: 0.0, convergence_ratio: 0.0, iterations: it + 1 });
        }
        v = w.scaled(Complex64::new(1.0 / nw, 0.0));
    }
    Ok(NormEstimate { value: est, convergence_ratio: ratio, iterations: iters })
}

/// Singular spectrum of `R(z)I₀ - I₀R₀(z)` from `ℋ₀` to `ℋ`.
pub fn compactness_defect(
    h: &MediumOperator,
    h0: &MediumOperator,
    pair: &IdentificationPair,
    z: Complex64,
) -> Result<SingularSpectrum> {
    let grid = h.grid();
    if h0.grid() != grid {
        return Err(Error::Shape("H and H0 live on different grids".into()));
    }
    dense::check_densifiable(grid.dof())?;
    let r = h.resolvent_dense(z)?;
    let r0 = h0.resolvent_dense(z)?;
    let diff = &r - &r0;
    let op = GridOperator::from_dense(
        format!("R({z})I0 - I0R0({z})"),
        grid,
        pair.i0.domain_metric().clone(),
        pair.i0.range_metric().clone(),
        diff,
    )?;
    singular_values(&op)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HilbertSchmidtEstimate {
    /// `Σ s_n²`.
    pub value: f64,
    /// Standard error of `value`; zero for exact evaluations.
    pub std_error: f64,
    pub probes: usize,
    pub method: SpectrumMethod,
}

/// `Σ s_n²` column by column, `Σ_j ‖M_r^{1/2} T M_d^{-1/2} e_j‖²`, without storing the matrix.
pub fn hilbert_schmidt_exact(op: &GridOperator) -> Result<HilbertSchmidtEstimate> {
    let grid = op.grid();
    let mut total = 0.0;
    for j in 0..grid.dof() {
        let e = op.domain_metric().apply_inv_sqrt(&Field::basis(grid, j));
        let col = op.range_metric().apply_sqrt(&op.apply(&e)?);
        total += col.norm_sqr_plain();
    }
    Ok(HilbertSchmidtEstimate { value: total, std_error: 0.0, probes: grid.dof(), method: SpectrumMethod::DenseSvd })
}

/// Unbiased randomized estimate of `Σ s_n²` from `E‖S g‖² = ‖S‖²_HS` with
/// standard complex Gaussian probes `g`.
pub fn hilbert_schmidt_randomized<R: Rng + ?Sized>(
    op: &GridOperator,
    probes: usize,
    rng: &mut R,
) -> Result<HilbertSchmidtEstimate> {
    if probes < 2 {
        return Err(Error::Domain("randomized estimate needs at least two probes".into()));
    }
    let grid = op.grid();
    let mut samples = Vec::with_capacity(probes);
    for _ in 0..probes {
        let g = Field::random(grid, rng);
        let e = op.domain_metric().apply_inv_sqrt(&g);
        let col = op.range_metric().apply_sqrt(&op.apply(&e)?);
        samples.push(col.norm_sqr_plain());
    }
    let mean = samples.iter().sum::<f64>() / probes as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (probes - 1) as f64;
    Ok(HilbertSchmidtEstimate {
        value: mean,
        std_error: (var / probes as f64).sqrt(),
        probes,
        method: SpectrumMethod::Randomized,
    })
}
