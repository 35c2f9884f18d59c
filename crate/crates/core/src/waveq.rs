// SPDX-License-Identifier: Apache-2.0

//! The acoustic equation `m(x) u_tt = Δu` as the first-order system
//! `i M ∂_t 𝐮 = P(D) 𝐮` with `𝐮 = ((-Δ)^{1/2}u, u_t)`, `M = diag(1, m)` and the
//! wave symbol `|ξ|·[[0, i], [-i, 0]]`. Solutions are `𝐮(t) = e^{-iHt}𝐮(0)`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::media::MediumField;
use crate::moeller::SpectralDecomposition;
use crate::operators::MediumOperator;
use crate::symbols::MatrixSymbol;

/// Relative size of the mean of `u₀` above which lifting warns.
pub const MEAN_WARNING_THRESHOLD: f64 = 1e-10;

/// A two-component state `((-Δ)^{1/2}u, u_t)` with the scalar medium `m`.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub bold_u: Field,
    pub grid: Grid,
    pub m: Arc<MediumField>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftReport {
    /// The constant mode of `u₀` that `(-Δ)^{1/2}` annihilates.
    pub removed_mean: Complex64,
    pub warned: bool,
}

fn check_scalar(m: &MediumField) -> Result<()> {
    if m.fiber() != 1 {
        return Err(Error::Shape(format!("wave media are scalar; got fiber dimension {}", m.fiber())));
    }
    if m.grid().dim() > 3 {
        return Err(Error::Domain("the wave reduction is restricted to d <= 3".into()));
    }
    Ok(())
}

/// `|ξ| û(ξ)` for a scalar field.
pub fn half_laplacian(grid: &Grid, u: &Field) -> Result<Field> {
    u.check_grid(grid)?;
    let mut v = u.values().to_vec();
    grid.fourier_forward(&mut v);
    for (p, c) in v.iter_mut().enumerate() {
        *c *= grid.frequency_radius(p);
    }
    grid.fourier_inverse(&mut v);
    Field::from_values(grid, v)
}

/// Builds `((-Δ)^{1/2}u₀, v₀)` on the scalar grid of `m`.
pub fn lift_initial_data(u0: &Field, v0: &Field, m: Arc<MediumField>) -> Result<(WaveState, LiftReport)> {
    check_scalar(&m)?;
    let scalar = m.grid().clone();
    u0.check_grid(&scalar)?;
    v0.check_grid(&scalar)?;
    let n = u0.len() as f64;
    let mean: Complex64 = u0.values().iter().sum::<Complex64>() / n;
    let scale = u0.values().iter().fold(0.0f64, |a, c| a.max(c.norm()));
    let warned = scale > 0.0 && mean.norm() > MEAN_WARNING_THRESHOLD * scale;
    if warned {
        log::warn!("initial displacement has mean {mean}; the constant mode is projected out");
    }
    let first = half_laplacian(&scalar, u0)?;
    let grid = scalar.with_fiber(2)?;
    let mut values = Vec::with_capacity(2 * u0.len());
    for (a, b) in first.values().iter().zip(v0.values()) {
        values.push(*a);
        values.push(*b);
    }
    let bold_u = Field::from_values(&grid, values)?;
    Ok((WaveState { bold_u, grid, m }, LiftReport { removed_mean: mean, warned }))
}

impl WaveState {
    pub fn from_field(bold_u: Field, m: Arc<MediumField>) -> Result<Self> {
        check_scalar(&m)?;
        let grid = m.grid().with_fiber(2)?;
        bold_u.check_grid(&grid)?;
        Ok(Self { bold_u, grid, m })
    }

    /// Component `c` as a scalar field on the base grid.
    pub fn slot(&self, c: usize) -> Field {
        let scalar = self.m.grid();
        let v = self.bold_u.values().chunks_exact(2).map(|p| p[c]).collect();
        Field::from_values(scalar, v).expect("scalar shape")
    }

    /// Energy in the constant mode of `u_t`, the part of the kernel of `H` that slot 2 carries.
    pub fn zero_mode_energy(&self) -> f64 {
        let scalar = self.m.grid();
        let h = scalar.cell_volume();
        let b = self.slot(1);
        let mass: f64 = self.m.values().iter().sum::<f64>() * h;
        let c: Complex64 = b.values().iter().zip(self.m.values()).map(|(v, m)| v * m).sum::<Complex64>() * h / mass;
        c.norm_sqr() * mass
    }
}

/// The block medium `diag(1, m)` on the two-component grid.
pub fn block_medium(m: &MediumField) -> Result<MediumField> {
    check_scalar(m)?;
    let grid = m.grid().with_fiber(2)?;
    let values = m.values().iter().flat_map(|&v| [1.0, 0.0, 0.0, v]).collect();
    MediumField::from_array(&grid, values, format!("diag(1, {})", m.label()))
}

/// `H = M⁻¹P(D)` with `M = diag(1, m)` and the wave symbol.
pub fn wave_system(m: &MediumField) -> Result<MediumOperator> {
    check_scalar(m)?;
    let symbol = MatrixSymbol::builtin("wave", m.grid().dim())?;
    MediumOperator::new(Arc::new(block_medium(m)?), &symbol)
}

/// `‖(-Δ)^{1/2}u‖² + (m u_t, u_t)`.
pub fn energy(m: &MediumField, state: &WaveState) -> Result<f64> {
    check_scalar(m)?;
    if !state.m.grid().same_lattice(m.grid()) {
        return Err(Error::Shape("state and medium live on different grids".into()));
    }
    let h = m.grid().cell_volume();
    let mut e = 0.0;
    for (p, pair) in state.bold_u.values().chunks_exact(2).enumerate() {
        e += pair[0].norm_sqr() + m.values()[p] * pair[1].norm_sqr();
    }
    Ok(e * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCurves {
    pub times: Vec<f64>,
    /// `‖(-Δ)^{1/2}(u - u₀)(t)‖`.
    pub displacement: Vec<f64>,
    /// `‖(u_t - u_{0,t})(t)‖`.
    pub velocity: Vec<f64>,
    /// `‖e^{-iHt}f - I₀e^{-iH₀t}f₀‖_ℋ`.
    pub combined: Vec<f64>,
    /// Bounds of `M = diag(1, m)`.
    pub c0: f64,
    pub c1: f64,
    /// Whether `‖d₁‖ ≤ C`, `√c0‖d₂‖ ≤ C` and `C ≤ √c1·(‖d₁‖² + ‖d₂‖²)^{1/2}` hold at every time.
    pub consistent: bool,
}

impl ComparisonCurves {
    /// Largest component value over the last third of the schedule.
    pub fn final_third_max(&self) -> (f64, f64) {
        let n = self.times.len();
        let start = n - n.div_ceil(3);
        let m = |v: &[f64]| v[start..].iter().fold(0.0f64, |a, &b| a.max(b));
        (m(&self.displacement), m(&self.velocity))
    }
}

/// Evolves `f` under `H` and `f₀` under `H₀` and compares them in energy norms.
pub fn compare_solutions(
    h: &SpectralDecomposition,
    h0: &SpectralDecomposition,
    f: &Field,
    f0: &Field,
    times: &[f64],
) -> Result<ComparisonCurves> {
    let grid = h.grid();
    if h0.grid() != grid {
        return Err(Error::Shape("decompositions live on different grids".into()));
    }
    if grid.fiber() != 2 {
        return Err(Error::Shape("comparisons act on two-component wave states".into()));
    }
    let cell = grid.cell_volume();
    let metric = h.metric();
    let (c0, c1) = (h.medium().c0(), h.medium().c1());
    let mut out = ComparisonCurves {
        times: times.to_vec(),
        displacement: vec![],
        velocity: vec![],
        combined: vec![],
        c0,
        c1,
        consistent: true,
    };
    let slack = 1.0 + 1e-10;
    for &t in times {
        // I₀ is the identity map on values
        let d = h.evolve(f, t)?.sub(&h0.evolve(f0, t)?);
        let (mut s1, mut s2) = (0.0, 0.0);
        for pair in d.values().chunks_exact(2) {
            s1 += pair[0].norm_sqr();
            s2 += pair[1].norm_sqr();
        }
        let (d1, d2) = ((s1 * cell).sqrt(), (s2 * cell).sqrt());
        let c = metric.norm(grid, &d);
        let tiny = 1e-14 * (1.0 + c);
        out.consistent &= d1 <= c * slack + tiny
            && c0.sqrt() * d2 <= c * slack + tiny
            && c <= c1.sqrt() * (d1 * d1 + d2 * d2).sqrt() * slack + tiny;
        out.displacement.push(d1);
        out.velocity.push(d2);
        out.combined.push(c);
    }
    Ok(out)
}

/// Second-order reference: leapfrog for `u_tt = m⁻¹Δu` with a spectral Laplacian.
/// Returns `u_t(T)` from a central difference at the final step.
pub fn leapfrog_velocity(m: &MediumField, u0: &Field, v0: &Field, t_final: f64, steps: usize) -> Result<Field> {
    check_scalar(m)?;
    if steps < 2 {
        return Err(Error::Domain("leapfrog needs at least two steps".into()));
    }
    let grid = m.grid();
    let dt = t_final / steps as f64;
    let accel = |u: &Field| -> Result<Field> {
        let mut v = u.values().to_vec();
        grid.fourier_forward(&mut v);
        for (p, c) in v.iter_mut().enumerate() {
            *c *= -grid.frequency_radius(p).powi(2);
        }
        grid.fourier_inverse(&mut v);
        Ok(m.apply_inverse(&Field::from_values(grid, v)?))
    };
    let dt_c = Complex64::new(dt, 0.0);
    let mut prev = u0.clone();
    let mut cur = u0.clone();
    cur.axpy(dt_c, v0);
    cur.axpy(Complex64::new(0.5 * dt * dt, 0.0), &accel(u0)?);
    for _ in 1..steps {
        let mut next = cur.scaled(Complex64::new(2.0, 0.0)).sub(&prev);
        next.axpy(Complex64::new(dt * dt, 0.0), &accel(&cur)?);
        prev = cur;
        cur = next;
    }
    // cur = u(T), prev = u(T - dt); one more step gives u(T + dt)
    let mut next = cur.scaled(Complex64::new(2.0, 0.0)).sub(&prev);
    next.axpy(Complex64::new(dt * dt, 0.0), &accel(&cur)?);
    Ok(next.sub(&prev).scaled(Complex64::new(0.5 / dt, 0.0)))
}
