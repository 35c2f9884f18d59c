// SPDX-License-Identifier: Apache-2.0

//! Time evolution and wave operators from dense spectral decompositions.
//!
//! `H = M⁻¹P` is diagonalized through the Hermitian matrix `S = M^{-1/2} P M^{-1/2}`.
//! With `S ψ_j = λ_j ψ_j` the fields `φ_j = M^{-1/2} ψ_j / √(hᵈ)` are orthonormal in
//! `ℋ`, and all functions of `H` act on `ψ`-coordinates `Ψ^H M^{1/2} f`.

use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;

use crate::dense;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::media::{apply_blocks, MediumField, Metric};
use crate::operators::{GridOperator, IdentificationPair, MediumOperator};
use crate::schatten::{SingularSpectrum, SpectrumMethod};
use crate::symbols::MatrixSymbol;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative residual bound for accepted decompositions.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    grid: Grid,
    medium: Arc<MediumField>,
    eigenvalues: Vec<f64>,
    psi: Arc<Mat<Complex64>>,
    residual: f64,
}

/// Dense metric-Hermitian eigendecomposition of `H = M⁻¹P(D)`.
pub fn spectral_decomposition(h: &MediumOperator) -> Result<SpectralDecomposition> {
    let grid = h.grid().clone();
    dense::check_densifiable(grid.dof())?;
    let medium = h.medium().clone();
    let s_apply = |f: &Field| -> Result<Field> { Ok(medium.apply_inv_sqrt(&h.apply_pd(&medium.apply_inv_sqrt(f))?)) };
    let s = dense::materialize(&grid, s_apply)?;
    let (eigenvalues, psi) = dense::hermitian_eigen(&s)?;
    drop(s);
    let radius = eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    // residuals with the FFT-applied operator, independent of the dense matrix
    let mut residual = 0.0f64;
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        let v = dense::column_to_field(&grid, &psi, j);
        let mut r = s_apply(&v)?;
        r.axpy(Complex64::new(-lambda, 0.0), &v);
        residual = residual.max(r.norm_sqr_plain().sqrt());
    }
    if residual > DECOMPOSITION_TOLERANCE * radius.max(f64::MIN_POSITIVE) {
        return Err(Error::Accuracy { residual, tolerance: DECOMPOSITION_TOLERANCE * radius });
    }
    Ok(SpectralDecomposition { grid, medium, eigenvalues, psi: Arc::new(psi), residual })
}

impl SpectralDecomposition {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn medium(&self) -> &Arc<MediumField> {
        &self.medium
    }

    pub fn metric(&self) -> Metric {
        Metric::Medium(self.medium.clone())
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `max_j ‖Hφ_j - λ_jφ_j‖_ℋ`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()))
    }

    /// `φ_j`, unit norm in `ℋ`.
    pub fn eigenvector(&self, j: usize) -> Field {
        let v = dense::column_to_field(&self.grid, &self.psi, j);
        self.medium.apply_inv_sqrt(&v).scaled(Complex64::new(1.0 / self.grid.cell_volume().sqrt(), 0.0))
    }

    /// `max |(φ_i, φ_j)_ℋ - δ_ij|`, computed as `Ψ^H Ψ - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.psi.adjoint() * &*self.psi;
        let mut worst = 0.0f64;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - Complex64::new(e, 0.0)).norm());
            }
        }
        worst
    }

    fn coordinates(&self, f: &Field) -> Vec<Complex64> {
        dense::adjoint_matvec(&self.psi, &self.medium.apply_sqrt(f))
    }

    fn synthesize(&self, a: &[Complex64]) -> Field {
        let v = Field::from_values(&self.grid, a.to_vec()).expect("coordinate length");
        self.medium.apply_inv_sqrt(&Field::from_values(&self.grid, dense::matvec(&self.psi, &v)).expect("shape"))
    }

    /// `g(H) f`.
    pub fn apply_function<G: Fn(f64) -> Complex64>(&self, f: &Field, g: G) -> Result<Field> {
        f.check_grid(&self.grid)?;
        let mut a = self.coordinates(f);
        for (c, &l) in a.iter_mut().zip(&self.eigenvalues) {
            *c *= g(l);
        }
        Ok(self.synthesize(&a))
    }

    /// `e^{-iHt} f`.
    pub fn evolve(&self, f: &Field, t: f64) -> Result<Field> {
        self.apply_function(f, |l| Complex64::from_polar(1.0, -l * t))
    }

    /// `H f` through the eigenbasis.
    pub fn apply_h(&self, f: &Field) -> Result<Field> {
        self.apply_function(f, |l| Complex64::new(l, 0.0))
    }

    /// `E(Λ) f` for the closed interval `Λ = [lo, hi]`.
    pub fn project(&self, f: &Field, window: Window) -> Result<Field> {
        self.apply_function(f, |l| if window.contains(l) { Complex64::new(1.0, 0.0) } else { ZERO })
    }

    /// Eigenvalue indices inside `window`.
    pub fn indices_in(&self, window: Window) -> Vec<usize> {
        (0..self.len()).filter(|&j| window.contains(self.eigenvalues[j])).collect()
    }

    /// Columns `ψ_j` for the given indices.
    fn psi_columns(&self, idx: &[usize]) -> Mat<Complex64> {
        Mat::from_fn(self.psi.nrows(), idx.len(), |i, c| self.psi[(i, idx[c])])
    }
}

/// A closed energy interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Domain(format!("[{lo}, {hi}] is not a bounded interval")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, l: f64) -> bool {
        l >= self.lo && l <= self.hi
    }

    pub fn label(&self) -> String {
        format!("[{}, {}]", self.lo, self.hi)
    }
}

pub fn evolve(dec: &SpectralDecomposition, f: &Field, t: f64) -> Result<Field> {
    dec.evolve(f, t)
}

/// `E(Λ)` as an operator on `ℋ`.
pub fn spectral_filter(dec: &SpectralDecomposition, window: Window) -> GridOperator {
    let (a, b) = (dec.clone(), dec.clone());
    let metric = dec.metric();
    GridOperator::new(
        format!("E({})", window.label()),
        &dec.grid,
        metric.clone(),
        metric,
        Arc::new(move |f: &Field| a.project(f, window)),
        // E is metric self-adjoint, so its plain adjoint is M E M⁻¹
        Arc::new(move |f: &Field| Ok(b.medium.apply(&b.project(&b.medium.apply_inverse(f), window)?))),
    )
}

/// Gaussian wave packet `exp(-|x-x₀|²/(4σ_x²) + i k₀·x)` in one fiber component,
/// with momentum spread `σ_ξ = 1/(2σ_x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePacket {
    pub center: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Momentum-space standard deviation `σ_ξ`.
    pub width: f64,
    pub component: usize,
}

impl WavePacket {
    pub fn new(center: Vec<f64>, momentum: Vec<f64>, width: f64) -> Result<Self> {
        if center.len() != momentum.len() || center.is_empty() || center.len() > 3 {
            return Err(Error::Shape("packet center and momentum must have the grid dimension".into()));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!("packet width must be positive (got {width})")));
        }
        Ok(Self { center, momentum, width, component: 0 })
    }

    pub fn in_component(mut self, component: usize) -> Self {
        self.component = component;
        self
    }

    pub fn spatial_width(&self) -> f64 {
        0.5 / self.width
    }

    /// Radius containing the packet up to `e^{-9/2}` in amplitude.
    pub fn spatial_extent(&self) -> f64 {
        3.0 * self.spatial_width()
    }

    pub fn momentum_extent(&self) -> f64 {
        3.0 * self.width
    }

    /// Packet on `grid`, normalized to unit `L²` norm.
    pub fn build(&self, grid: &Grid) -> Result<Field> {
        if grid.dim() != self.center.len() {
            return Err(Error::Shape(format!("packet has d = {}, grid has d = {}", self.center.len(), grid.dim())));
        }
        if self.component >= grid.fiber() {
            return Err(Error::Shape(format!("component {} out of range for k = {}", self.component, grid.fiber())));
        }
        let sx = self.spatial_width();
        let d = grid.dim();
        let f = Field::from_scalar_fn(grid, self.component, |x| {
            let mut r2 = 0.0;
            let mut phase = 0.0;
            for ((xa, ca), ka) in x.iter().zip(&self.center).zip(&self.momentum).take(d) {
                let dx = xa - ca;
                r2 += dx * dx;
                phase += ka * xa;
            }
            Complex64::from_polar((-r2 / (4.0 * sx * sx)).exp(), phase)
        });
        let n = f.norm(grid);
        Ok(f.scaled(Complex64::new(1.0 / n, 0.0)))
    }
}

/// Result of the periodicity check `v_max·T < L - width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrapCheck {
    pub v_max: f64,
    pub travel: f64,
    pub allowed: f64,
    pub ok: bool,
}

/// `v_max` is the symbol's group speed over the packet's momentum support divided by
/// the smallest medium eigenvalue.
pub fn wrap_check(symbol: &MatrixSymbol, grid: &Grid, c0: f64, packet: &WavePacket, t_max: f64) -> Result<WrapCheck> {
    if !(c0 > 0.0) {
        return Err(Error::Domain("medium lower bound must be positive".into()));
    }
    let speed = symbol.max_group_speed(grid, &packet.momentum, packet.momentum_extent())?;
    let v_max = speed / c0;
    let travel = v_max * t_max.abs();
    let allowed = grid.half_length() - packet.spatial_extent();
    Ok(WrapCheck { v_max, travel, allowed, ok: travel < allowed })
}

/// `t_j = t₀·2^{j/2}` ending exactly at `t_max`; must span at least one decade.
pub fn geometric_schedule(t0: f64, t_max: f64) -> Result<Vec<f64>> {
    if !(t0 > 0.0) || !(t_max.is_finite()) || t_max < 10.0 * t0 {
        return Err(Error::Domain(format!("schedule [{t0}, {t_max}] must be positive and cover a decade")));
    }
    let mut times = Vec::new();
    let mut j = 0;
    loop {
        let t = t_max * 2f64.powf(-0.5 * j as f64);
        if t < t0 * (1.0 - 1e-12) {
            break;
        }
        times.push(t);
        j += 1;
    }
    times.reverse();
    Ok(times)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Plus => "+",
            Direction::Minus => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveOperatorOptions {
    pub direction: Direction,
    /// Acceptance threshold for the Cauchy tail.
    pub tol: f64,
    /// Optional energy window `E₀(Λ)` applied to `f₀` first.
    pub window: Option<Window>,
    /// Aitken-style extrapolation of the final image.
    pub extrapolate: bool,
}

impl Default for WaveOperatorOptions {
    fn default() -> Self {
        Self { direction: Direction::Plus, tol: 1e-2, window: None, extrapolate: false }
    }
}

#[derive(Debug, Clone)]
pub struct WaveOperatorResult {
    pub direction: Direction,
    pub times_sampled: Vec<f64>,
    /// `e^{iHt} J e^{-iH₀t} f₀` at each sampled time.
    pub images: Vec<Field>,
    /// `‖image(t_{i+1}) - image(t_i)‖_ℋ / ‖f₀‖_ℋ₀`.
    pub cauchy_curve: Vec<f64>,
    /// Largest of the last three increments.
    pub cauchy_tail: f64,
    pub tolerance: f64,
    pub converged: bool,
    pub limit_vector: Field,
    pub isometry_defect: f64,
    pub intertwining_defect: f64,
    pub completeness_defect: f64,
    /// Description of the preparation of `f₀`.
    pub window: String,
    /// The (possibly filtered) initial vector.
    pub initial: Field,
}

/// `e^{iHt} J e^{-iH₀t} f`.
fn pulled_back(
    h: &SpectralDecomposition,
    h0: &SpectralDecomposition,
    j: &GridOperator,
    f: &Field,
    t: f64,
) -> Result<Field> {
    h.evolve(&j.apply(&h0.evolve(f, t)?)?, -t)
}

/// Approximates `W_±(H, H₀; I₀) f₀` on a time schedule.
pub fn wave_operator(
    h: &SpectralDecomposition,
    h0: &SpectralDecomposition,
    pair: &IdentificationPair,
    f0: &Field,
    times: &[f64],
    opts: &WaveOperatorOptions,
) -> Result<WaveOperatorResult> {
    if times.len() < 4 {
        return Err(Error::Domain("a wave-operator schedule needs at least four times".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times[0] <= 0.0 {
        return Err(Error::Domain("schedule must be positive and increasing".into()));
    }
    if h.grid() != h0.grid() || h.grid() != pair.i0.grid() {
        return Err(Error::Shape("decompositions and identification live on different grids".into()));
    }
    let grid = h.grid().clone();
    let (metric, metric0) = (h.metric(), h0.metric());
    let (f0, window) = match opts.window {
        Some(w) => (h0.project(f0, w)?, format!("E0({}) applied to a localized packet", w.label())),
        None => (f0.clone(), "localized packet, no energy filter".to_string()),
    };
    let norm0 = metric0.norm(&grid, &f0);
    if norm0 == 0.0 {
        return Err(Error::Domain("initial vector vanishes".into()));
    }
    let sign = opts.direction.sign();
    let j = &pair.i0;
    let images: Vec<Field> = times.iter().map(|&t| pulled_back(h, h0, j, &f0, sign * t)).collect::<Result<_>>()?;
    let cauchy_curve: Vec<f64> = images.windows(2).map(|w| metric.norm(&grid, &w[1].sub(&w[0])) / norm0).collect();
    let cauchy_tail = cauchy_curve.iter().rev().take(3).fold(0.0f64, |a, &b| a.max(b));
    let last = images.last().unwrap().clone();
    let limit_vector = if opts.extrapolate && cauchy_curve.len() >= 2 {
        let n = cauchy_curve.len();
        let q = cauchy_curve[n - 1] / cauchy_curve[n - 2];
        if q < 1.0 {
            let mut out = last.clone();
            out.axpy(Complex64::new(q / (1.0 - q), 0.0), &last.sub(&images[images.len() - 2]));
            out
        } else {
            last.clone()
        }
    } else {
        last.clone()
    };
    let t_max = sign * *times.last().unwrap();

    let isometry_defect = (metric.norm(&grid, &limit_vector) - norm0).abs() / norm0;

    let h0f = h0.apply_h(&f0)?;
    let h0f_norm = metric0.norm(&grid, &h0f);
    let w_h0f = pulled_back(h, h0, j, &h0f, t_max)?;
    let h_wf = h.apply_h(&last)?;
    let intertwining_defect =
        if h0f_norm == 0.0 { metric.norm(&grid, &h_wf) } else { metric.norm(&grid, &w_h0f.sub(&h_wf)) / h0f_norm };

    // the inverse-direction operator W(H₀, H; I₁) at the last three schedule times,
    // applied to the accepted image
    let mut completeness_defect = 0.0f64;
    for &t in times.iter().rev().take(3) {
        let back = pulled_back(h0, h, &pair.i1, &limit_vector, sign * t)?;
        completeness_defect = completeness_defect.max(metric0.norm(&grid, &back.sub(&f0)) / norm0);
    }

    Ok(WaveOperatorResult {
        direction: opts.direction,
        times_sampled: times.to_vec(),
        images,
        converged: cauchy_tail < opts.tol,
        cauchy_curve,
        cauchy_tail,
        tolerance: opts.tol,
        limit_vector,
        isometry_defect,
        intertwining_defect,
        completeness_defect,
        window,
        initial: f0,
    })
}

/// `‖W e^{-iH₀s} f₀ - e^{-iHs} W f₀‖_ℋ / ‖f₀‖_ℋ₀` with `W` evaluated at time `t`.
pub fn intertwining_at(
    h: &SpectralDecomposition,
    h0: &SpectralDecomposition,
    pair: &IdentificationPair,
    f0: &Field,
    t: f64,
    s: f64,
) -> Result<f64> {
    let grid = h.grid();
    let lhs = pulled_back(h, h0, &pair.i0, &h0.evolve(f0, s)?, t)?;
    let rhs = h.evolve(&pulled_back(h, h0, &pair.i0, f0, t)?, s)?;
    Ok(h.metric().norm(grid, &lhs.sub(&rhs)) / h0.metric().norm(grid, f0))
}

/// `‖(I₀*I₀ - I) e^{-iH₀t} f₀‖_ℋ₀ / ‖f₀‖_ℋ₀` over the schedule.
pub fn isometry_linkage_curve(
    h0: &SpectralDecomposition,
    pair: &IdentificationPair,
    f0: &Field,
    times: &[f64],
) -> Result<Vec<f64>> {
    let grid = h0.grid();
    let metric0 = h0.metric();
    let n0 = metric0.norm(grid, f0);
    times.iter().map(|&t| Ok(metric0.norm(grid, &pair.apply_isometry_defect(&h0.evolve(f0, t)?)) / n0)).collect()
}

/// Spectra of the two trace-class hypotheses on a bounded energy window.
#[derive(Debug, Clone)]
pub struct TraceConditionReport {
    pub window: Window,
    /// `E(Λ) M⁻¹ V H₀ E₀(Λ)`, equal to `-E(Λ)(HI₀ - I₀H₀)E₀(Λ)`, from `ℋ₀` to `ℋ`.
    pub commutator: SingularSpectrum,
    /// `(I₀*I₀ - I) E₀(Λ) = M₀⁻¹ V E₀(Λ)` on `ℋ₀`.
    pub isometry: SingularSpectrum,
    pub commutator_trace: f64,
    pub isometry_trace: f64,
    pub states_in_window: usize,
    pub background_states_in_window: usize,
}

/// Pointwise blocks of `L V R` for symmetric blocks `L`, `R` given as functions of the media.
fn sandwich(k: usize, left: &[f64], v: &[f64], right: &[f64]) -> Vec<f64> {
    let kk = k * k;
    let mut out = vec![0.0; v.len()];
    for p in 0..v.len() / kk {
        let (l, m, r) = (&left[p * kk..][..kk], &v[p * kk..][..kk], &right[p * kk..][..kk]);
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        acc += l[i * k + a] * m[a * k + b] * r[b * k + j];
                    }
                }
                out[p * kk + i * k + j] = acc;
            }
        }
    }
    out
}

fn medium_power(m: &MediumField, which: fn(&MediumField, &Field) -> Field) -> Vec<f64> {
    // columns of the pointwise block obtained by applying to unit vectors per component
    let grid = m.grid();
    let k = grid.fiber();
    let mut out = vec![0.0; grid.num_points() * k * k];
    for c in 0..k {
        let e = Field::from_fn(grid, |_| (0..k).map(|i| Complex64::new(if i == c { 1.0 } else { 0.0 }, 0.0)).collect());
        let col = which(m, &e);
        for p in 0..grid.num_points() {
            for i in 0..k {
                out[p * k * k + i * k + c] = col.at(p)[i].re;
            }
        }
    }
    out
}

fn block_matrix_times(grid: &Grid, blocks: &[f64], cols: &Mat<Complex64>) -> Mat<Complex64> {
    let k = grid.fiber();
    let mut out = Mat::<Complex64>::zeros(cols.nrows(), cols.ncols());
    for c in 0..cols.ncols() {
        let f = dense::column_to_field(grid, cols, c);
        let g = apply_blocks(blocks, k, &f);
        for (i, v) in g.values().iter().enumerate() {
            out[(i, c)] = *v;
        }
    }
    out
}

/// Both spectra are computed from small matrices in the eigen-coordinates of the
/// window, which have orthonormal columns and therefore preserve singular values.
pub fn trace_condition_report(
    h: &SpectralDecomposition,
    h0: &SpectralDecomposition,
    pair: &IdentificationPair,
    window: Window,
) -> Result<TraceConditionReport> {
    if h.grid() != h0.grid() {
        return Err(Error::Shape("decompositions live on different grids".into()));
    }
    let grid = h.grid();
    let k = grid.fiber();
    let v = pair.perturbation();
    let m_inv_sqrt = medium_power(h.medium(), MediumField::apply_inv_sqrt);
    let m0_inv_sqrt = medium_power(h0.medium(), MediumField::apply_inv_sqrt);
    let idx = h.indices_in(window);
    let idx0 = h0.indices_in(window);
    let psi0 = h0.psi_columns(&idx0);

    // Ψ_Λ^H (M^{-1/2} V M₀^{-1/2}) Ψ₀_Λ diag(λ₀)
    let core_blocks = sandwich(k, &m_inv_sqrt, &v, &m0_inv_sqrt);
    let mut right = block_matrix_times(grid, &core_blocks, &psi0);
    for (c, &j) in idx0.iter().enumerate() {
        let l = h0.eigenvalues()[j];
        for i in 0..right.nrows() {
            right[(i, c)] *= l;
        }
    }
    let psi = h.psi_columns(&idx);
    let core = psi.adjoint() * &right;
    let commutator = if idx.is_empty() || idx0.is_empty() {
        SingularSpectrum::from_values(vec![], idx.len(), idx0.len(), SpectrumMethod::DenseSvd)?
    } else {
        SingularSpectrum::from_matrix(&core)?
    };

    // (M₀^{-1/2} V M₀^{-1/2}) Ψ₀_Λ
    let iso_blocks = sandwich(k, &m0_inv_sqrt, &v, &m0_inv_sqrt);
    let iso = block_matrix_times(grid, &iso_blocks, &psi0);
    let isometry = if idx0.is_empty() {
        SingularSpectrum::from_values(vec![], grid.dof(), 0, SpectrumMethod::DenseSvd)?
    } else {
        SingularSpectrum::from_matrix(&iso)?
    };
    Ok(TraceConditionReport {
        window,
        commutator_trace: commutator.power_sum(1.0)?,
        isometry_trace: isometry.power_sum(1.0)?,
        commutator,
        isometry,
        states_in_window: idx.len(),
        background_states_in_window: idx0.len(),
    })
}

/// Singular values of `⟨x⟩^{-r} E₀(Λ)` on `ℋ₀` (the weight commutes with `M₀`).
pub fn weighted_projection_spectrum(h0: &SpectralDecomposition, r: f64, window: Window) -> Result<SingularSpectrum> {
    let grid = h0.grid();
    let w = crate::grid::weight_field(grid, crate::grid::WeightDomain::Spatial, r)?;
    let idx = h0.indices_in(window);
    if idx.is_empty() {
        return SingularSpectrum::from_values(vec![], grid.dof(), 0, SpectrumMethod::DenseSvd);
    }
    let mut cols = h0.psi_columns(&idx);
    let k = grid.fiber();
    for c in 0..cols.ncols() {
        for i in 0..cols.nrows() {
            cols[(i, c)] *= w.values[i / k];
        }
    }
    SingularSpectrum::from_matrix(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::MediumSpec;
    use crate::operators::{identification_ops, make_h};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn laplacian_dec(grid: &Grid, m: MediumField) -> SpectralDecomposition {
        let lap = MatrixSymbol::builtin("laplacian", grid.dim()).unwrap();
        spectral_decomposition(&make_h(Arc::new(m), &lap).unwrap()).unwrap()
    }

    fn sorted_lattice_values(grid: &Grid, scale: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..grid.num_points()).map(|p| grid.frequency_radius(p).powi(2) / scale).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn free_laplacian_spectrum_is_the_lattice() {
        let g = Grid::new(1, 32, PI, 1).unwrap();
        let dec = laplacian_dec(&g, MediumField::identity(&g));
        let expected = sorted_lattice_values(&g, 1.0);
        for (a, b) in dec.eigenvalues().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b));
        }
        // ±ξ pairs
        assert!((dec.eigenvalues()[1] - dec.eigenvalues()[2]).abs() < 1e-10);
        assert!(dec.orthonormality_defect() < 1e-9);
    }

    #[test]
    fn constant_medium_scales_spectrum() {
        let g = Grid::new(1, 32, PI, 1).unwrap();
        let dec = laplacian_dec(&g, MediumField::constant(&g, 2.0).unwrap());
        let expected = sorted_lattice_values(&g, 2.0);
        for (a, b) in dec.eigenvalues().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b));
        }
    }

    #[test]
    fn wave_system_spectrum_is_symmetric() {
        let g = Grid::new(1, 32, PI, 2).unwrap();
        let wave = MatrixSymbol::builtin("wave", 1).unwrap();
        let dec = spectral_decomposition(&MediumOperator::free(&wave, &g).unwrap()).unwrap();
        let ev = dec.eigenvalues();
        let n = ev.len();
        for j in 0..n {
            assert!((ev[j] + ev[n - 1 - j]).abs() < 1e-10);
        }
        let mut pos: Vec<f64> = ev.iter().copied().filter(|l| *l > 0.5).collect();
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((pos[0] - 1.0).abs() < 1e-10 && (pos[2] - 2.0).abs() < 1e-10);
    }

    fn bumpy() -> (Grid, SpectralDecomposition) {
        let g = Grid::new(1, 64, 10.0, 1).unwrap();
        let m = MediumSpec::Bump { amplitude: 0.8, width: 2.0 }.build(&g).unwrap();
        (g.clone(), laplacian_dec(&g, m))
    }

    #[test]
    fn metric_orthonormal_eigenvectors() {
        let (g, dec) = bumpy();
        assert!(dec.orthonormality_defect() < 1e-9);
        let metric = dec.metric();
        let (a, b) = (dec.eigenvector(3), dec.eigenvector(7));
        assert!((metric.norm(&g, &a) - 1.0).abs() < 1e-9);
        assert!(metric.inner(&g, &a, &b).norm() < 1e-9);
        assert!(dec.residual() < 1e-9 * dec.spectral_radius());
    }

    #[test]
    fn evolution_laws() {
        let (g, dec) = bumpy();
        let metric = dec.metric();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Field::random(&g, &mut rng);
        let nf = metric.norm(&g, &f);
        assert!(metric.norm(&g, &dec.evolve(&f, 0.0).unwrap().sub(&f)) < 1e-9 * nf);
        let t = 3.7;
        assert!((metric.norm(&g, &dec.evolve(&f, t).unwrap()) - nf).abs() < 1e-9 * nf);
        let phi = dec.eigenvector(5);
        let lam = dec.eigenvalues()[5];
        let expected = phi.scaled(Complex64::from_polar(1.0, -lam * t));
        assert!(metric.norm(&g, &dec.evolve(&phi, t).unwrap().sub(&expected)) < 1e-9);
        let s = 1.3;
        let two = dec.evolve(&dec.evolve(&f, s).unwrap(), t).unwrap();
        let one = dec.evolve(&f, s + t).unwrap();
        assert!(metric.norm(&g, &two.sub(&one)) < 1e-9 * nf);
    }

    #[test]
    fn projection_laws() {
        let (g, dec) = bumpy();
        let metric = dec.metric();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Field::random(&g, &mut rng);
        let u = Field::random(&g, &mut rng);
        let nf = metric.norm(&g, &f);
        let all = Window::new(-1.0, 2.0 * dec.spectral_radius()).unwrap();
        assert!(metric.norm(&g, &dec.project(&f, all).unwrap().sub(&f)) < 1e-9 * nf);
        let none = Window::new(-5.0, -4.0).unwrap();
        assert_eq!(dec.project(&f, none).unwrap().norm_sqr_plain(), 0.0);
        let w = Window::new(0.5, 4.0).unwrap();
        let e = spectral_filter(&dec, w);
        let ef = e.apply(&f).unwrap();
        assert!(metric.norm(&g, &e.apply(&ef).unwrap().sub(&ef)) < 1e-9 * nf);
        let lhs = metric.inner(&g, &ef, &u);
        let rhs = metric.inner(&g, &f, &e.apply(&u).unwrap());
        assert!((lhs - rhs).norm() < 1e-9 * nf * metric.norm(&g, &u));
        // complement on the lattice
        let lower = Window::new(f64::MIN, 0.5 - 1e-12).unwrap();
        let upper = Window::new(4.0 + 1e-12, f64::MAX).unwrap();
        let sum = ef.add(&dec.project(&f, lower).unwrap()).add(&dec.project(&f, upper).unwrap());
        assert!(metric.norm(&g, &sum.sub(&f)) < 1e-9 * nf);
    }

    #[test]
    fn schedule_and_guard() {
        let t = geometric_schedule(1.0, 16.0).unwrap();
        assert_eq!(t.len(), 9);
        assert!((t[0] - 1.0).abs() < 1e-12 && *t.last().unwrap() == 16.0);
        assert!(geometric_schedule(1.0, 5.0).is_err());

        let g = Grid::new(1, 512, 40.0, 1).unwrap();
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let p = WavePacket::new(vec![-10.0], vec![2.0], 0.5).unwrap();
        let ok = wrap_check(&lap, &g, 1.0, &p, 4.0).unwrap();
        assert!(ok.ok && (ok.v_max - 7.0).abs() < 0.1, "{ok:?}");
        assert!(!wrap_check(&lap, &g, 1.0, &p, 200.0).unwrap().ok);
    }

    #[test]
    fn packet_is_normalized_and_centered() {
        let g = Grid::new(1, 256, 20.0, 1).unwrap();
        let p = WavePacket::new(vec![-3.0], vec![2.0], 0.5).unwrap();
        let f = p.build(&g).unwrap();
        assert!((f.norm(&g) - 1.0).abs() < 1e-12);
        let mean: f64 = (0..256).map(|j| g.position(j)[0] * f.values()[j].norm_sqr()).sum::<f64>() * g.cell_volume();
        assert!((mean + 3.0).abs() < 1e-9);
    }

    #[test]
    fn null_perturbation_wave_operator_is_identity() {
        let g = Grid::new(1, 128, 20.0, 1).unwrap();
        let m = Arc::new(MediumSpec::Rational { amplitude: 0.3, power: 2.0 }.build(&g).unwrap());
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let dec = spectral_decomposition(&make_h(m.clone(), &lap).unwrap()).unwrap();
        let pair = identification_ops(m.clone(), m).unwrap();
        let f0 = WavePacket::new(vec![-8.0], vec![1.0], 0.5).unwrap().build(&g).unwrap();
        let times = geometric_schedule(0.5, 8.0).unwrap();
        let res = wave_operator(&dec, &dec, &pair, &f0, &times, &Default::default()).unwrap();
        assert!(res.cauchy_tail < 1e-9 && res.converged);
        assert!(res.isometry_defect < 1e-9);
        assert!(res.intertwining_defect < 1e-9);
        assert!(res.completeness_defect < 1e-9);
        for img in &res.images {
            assert!(dec.metric().norm(&g, &img.sub(&f0)) < 1e-9);
        }
    }

    #[test]
    fn scattering_by_a_decaying_medium() {
        // packet starts left of the scatterer and is past it for the last three samples
        let g = Grid::new(1, 1024, 320.0, 1).unwrap();
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m0 = Arc::new(MediumField::identity(&g));
        let m = Arc::new(MediumSpec::Rational { amplitude: 0.3, power: 2.0 }.build(&g).unwrap());
        let h0 = spectral_decomposition(&make_h(m0.clone(), &lap).unwrap()).unwrap();
        let h = spectral_decomposition(&make_h(m.clone(), &lap).unwrap()).unwrap();
        let pair = identification_ops(m0, m).unwrap();
        let packet = WavePacket::new(vec![-12.0], vec![1.0], 0.25).unwrap();
        let f0 = packet.build(&g).unwrap();
        let t_max = 80.0;
        assert!(wrap_check(&lap, &g, 1.0, &packet, t_max).unwrap().ok);
        let times = geometric_schedule(2.0, t_max).unwrap();
        let res = wave_operator(&h, &h0, &pair, &f0, &times, &Default::default()).unwrap();
        assert!(res.cauchy_curve.iter().all(|c| *c >= 0.0));
        assert!(res.converged, "{:?}", res.cauchy_curve);
        assert!(res.isometry_defect < 1e-2, "{}", res.isometry_defect);
        assert!(res.intertwining_defect < 2e-2, "{}", res.intertwining_defect);
        assert!(res.completeness_defect < 2e-2, "{}", res.completeness_defect);
        let curve = isometry_linkage_curve(&h0, &pair, &res.initial, &times).unwrap();
        assert!(curve.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn trace_conditions_vanish_without_perturbation() {
        let (_, dec) = bumpy();
        let m = dec.medium().clone();
        let pair = identification_ops(m.clone(), m).unwrap();
        let rep = trace_condition_report(&dec, &dec, &pair, Window::new(0.5, 4.0).unwrap()).unwrap();
        assert!(rep.commutator_trace == 0.0 && rep.isometry_trace == 0.0);
        assert!(rep.states_in_window > 0);
    }

    #[test]
    fn trace_condition_matches_dense_assembly() {
        let g = Grid::new(1, 48, 8.0, 1).unwrap();
        let m0 = Arc::new(MediumSpec::Bump { amplitude: 0.2, width: 1.0 }.build(&g).unwrap());
        let m = Arc::new(MediumSpec::Rational { amplitude: 0.5, power: 2.0 }.build(&g).unwrap());
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let h0op = make_h(m0.clone(), &lap).unwrap();
        let hop = make_h(m.clone(), &lap).unwrap();
        let h0 = spectral_decomposition(&h0op).unwrap();
        let h = spectral_decomposition(&hop).unwrap();
        let pair = identification_ops(m0.clone(), m.clone()).unwrap();
        let w = Window::new(0.5, 4.0).unwrap();
        let rep = trace_condition_report(&h, &h0, &pair, w).unwrap();

        // oracle: E(Λ)(HI₀ - I₀H₀)E₀(Λ) assembled from matrix-free pieces
        let e = spectral_filter(&h, w);
        let e0 = spectral_filter(&h0, w);
        let comm = hop.as_grid_operator().compose(&pair.i0).sub(&pair.i0.compose(&h0op.as_grid_operator()));
        let full = e.compose(&comm).compose(&e0);
        let s = crate::schatten::singular_values(&full).unwrap();
        let dense_trace = s.power_sum(1.0).unwrap();
        assert!(
            (dense_trace - rep.commutator_trace).abs() < 1e-8 * dense_trace.max(1.0),
            "{dense_trace} {}",
            rep.commutator_trace
        );

        let iso = pair.i0_star.compose(&pair.i0).sub(&GridOperator::identity(&g, h0.metric())).compose(&e0);
        let si = crate::schatten::singular_values(&iso).unwrap();
        let t = si.power_sum(1.0).unwrap();
        assert!((t - rep.isometry_trace).abs() < 1e-8 * t.max(1.0));

        let wp = weighted_projection_spectrum(&h0, 1.0, w).unwrap();
        let weight = crate::grid::weight_field(&g, crate::grid::WeightDomain::Spatial, 1.0).unwrap();
        let wop = GridOperator::scalar_multiplication("w", &g, weight.values).with_metrics(h0.metric(), h0.metric());
        let so = crate::schatten::singular_values(&wop.compose(&e0)).unwrap();
        let (a, b) = (wp.power_sum(2.0).unwrap(), so.power_sum(2.0).unwrap());
        assert!((a - b).abs() < 1e-9 * b);
    }
}
