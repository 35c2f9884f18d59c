// SPDX-License-Identifier: Apache-2.0

//! Matrix-free operators on grid fields.
//!
//! [`GridOperator`] is a linear map between two Hilbert spaces that share the
//! grid but may carry different metrics. It stores the map and its plain
//! (`L²`) adjoint; the metric adjoint `T† = M_d⁻¹ T* M_r` is derived from them.
//!
//! [`MediumOperator`] is `H = M⁻¹P(D)` together with the structure needed for
//! fast resolvents: the symbol table for `P(D)` and the medium `M`.

use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;

use crate::dense;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::krylov::{gmres, GmresOptions};
use crate::media::{MediumField, Metric};
use crate::symbols::MatrixSymbol;

pub type ApplyFn = dyn Fn(&Field) -> Result<Field> + Send + Sync;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone)]
pub struct GridOperator {
    label: String,
    grid: Grid,
    domain_metric: Metric,
    range_metric: Metric,
    apply: Arc<ApplyFn>,
    plain_adjoint: Arc<ApplyFn>,
}

impl std::fmt::Debug for GridOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridOperator")
            .field("label", &self.label)
            .field("grid", &self.grid)
            .field("domain_metric", &self.domain_metric.label())
            .field("range_metric", &self.range_metric.label())
            .finish()
    }
}

impl GridOperator {
    /// `apply` is the map, `plain_adjoint` its adjoint in the unweighted inner product.
    pub fn new(
        label: impl Into<String>,
        grid: &Grid,
        domain_metric: Metric,
        range_metric: Metric,
        apply: Arc<ApplyFn>,
        plain_adjoint: Arc<ApplyFn>,
    ) -> Self {
        Self { label: label.into(), grid: grid.clone(), domain_metric, range_metric, apply, plain_adjoint }
    }

    pub fn identity(grid: &Grid, metric: Metric) -> Self {
        let id: Arc<ApplyFn> = Arc::new(|f: &Field| Ok(f.clone()));
        Self::new("I", grid, metric.clone(), metric, id.clone(), id)
    }

    pub fn zero(grid: &Grid, metric: Metric) -> Self {
        let g = grid.clone();
        let z: Arc<ApplyFn> = Arc::new(move |_: &Field| Ok(Field::zeros(&g)));
        Self::new("0", grid, metric.clone(), metric, z.clone(), z)
    }

    /// Pointwise scalar multiplication `f(x) ↦ w(x) f(x)` (real weights).
    pub fn scalar_multiplication(label: impl Into<String>, grid: &Grid, weights: Vec<f64>) -> Self {
        let w = Arc::new(weights);
        let w2 = w.clone();
        Self::new(
            label,
            grid,
            Metric::Euclidean,
            Metric::Euclidean,
            Arc::new(move |f: &Field| Ok(f.weighted(&w))),
            Arc::new(move |f: &Field| Ok(f.weighted(&w2))),
        )
    }

    /// Fourier multiplier by a real scalar `b(ξ)` given on the FFT-ordered lattice.
    pub fn scalar_fourier_multiplier(label: impl Into<String>, grid: &Grid, symbol: Vec<f64>) -> Self {
        let w = Arc::new(symbol);
        let (g1, g2, w2) = (grid.clone(), grid.clone(), w.clone());
        Self::new(
            label,
            grid,
            Metric::Euclidean,
            Metric::Euclidean,
            Arc::new(move |f: &Field| Ok(fourier_scalar(&g1, &w, f))),
            Arc::new(move |f: &Field| Ok(fourier_scalar(&g2, &w2, f))),
        )
    }

    /// Operator backed by a dense matrix acting on flat field values.
    pub fn from_dense(
        label: impl Into<String>,
        grid: &Grid,
        domain_metric: Metric,
        range_metric: Metric,
        mat: Mat<Complex64>,
    ) -> Result<Self> {
        if mat.nrows() != grid.dof() || mat.ncols() != grid.dof() {
            return Err(Error::Shape(format!(
                "dense matrix is {}x{}, grid has {} dof",
                mat.nrows(),
                mat.ncols(),
                grid.dof()
            )));
        }
        let m = Arc::new(mat);
        let m2 = m.clone();
        let (g1, g2) = (grid.clone(), grid.clone());
        Ok(Self::new(
            label,
            grid,
            domain_metric,
            range_metric,
            Arc::new(move |f: &Field| Field::from_values(&g1, dense::matvec(&m, f))),
            Arc::new(move |f: &Field| Field::from_values(&g2, dense::adjoint_matvec(&m2, f))),
        ))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn domain_metric(&self) -> &Metric {
        &self.domain_metric
    }

    pub fn range_metric(&self) -> &Metric {
        &self.range_metric
    }

    pub fn densifiable(&self) -> bool {
        self.grid.dof() <= dense::dense_cap()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Same map, reinterpreted between different Hilbert spaces.
    pub fn with_metrics(mut self, domain: Metric, range: Metric) -> Self {
        self.domain_metric = domain;
        self.range_metric = range;
        self
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        f.check_grid(&self.grid)?;
        (self.apply)(f)
    }

    /// Adjoint in the unweighted inner product.
    pub fn plain_adjoint_apply(&self, f: &Field) -> Result<Field> {
        f.check_grid(&self.grid)?;
        (self.plain_adjoint)(f)
    }

    /// Adjoint with respect to the declared metrics: `M_d⁻¹ T* M_r`.
    pub fn adjoint_apply(&self, f: &Field) -> Result<Field> {
        let g = self.plain_adjoint_apply(&self.range_metric.apply(f))?;
        Ok(self.domain_metric.apply_inverse(&g))
    }

    /// The metric adjoint as an operator from the range space back to the domain space.
    pub fn adjoint(&self) -> GridOperator {
        let fwd = self.clone();
        let back = self.clone();
        GridOperator::new(
            format!("({})^*", self.label),
            &self.grid,
            self.range_metric.clone(),
            self.domain_metric.clone(),
            Arc::new(move |f: &Field| fwd.adjoint_apply(f)),
            // plain adjoint of M_d⁻¹T*M_r is M_r T M_d⁻¹
            Arc::new(move |f: &Field| {
                let g = back.apply(&back.domain_metric.apply_inverse(f))?;
                Ok(back.range_metric.apply(&g))
            }),
        )
    }

    /// `self ∘ rhs`.
    pub fn compose(&self, rhs: &GridOperator) -> GridOperator {
        let (a, b) = (self.clone(), rhs.clone());
        let (a2, b2) = (self.clone(), rhs.clone());
        GridOperator::new(
            format!("{}·{}", self.label, rhs.label),
            &self.grid,
            rhs.domain_metric.clone(),
            self.range_metric.clone(),
            Arc::new(move |f: &Field| a.apply(&b.apply(f)?)),
            Arc::new(move |f: &Field| b2.plain_adjoint_apply(&a2.plain_adjoint_apply(f)?)),
        )
    }

    /// `α·self + β·rhs`.
    pub fn linear_combination(&self, alpha: Complex64, rhs: &GridOperator, beta: Complex64) -> GridOperator {
        let (a, b) = (self.clone(), rhs.clone());
        let (a2, b2) = (self.clone(), rhs.clone());
        GridOperator::new(
            format!("({alpha}·{} + {beta}·{})", self.label, rhs.label),
            &self.grid,
            self.domain_metric.clone(),
            self.range_metric.clone(),
            Arc::new(move |f: &Field| {
                let mut out = a.apply(f)?;
                out.scale(alpha);
                out.axpy(beta, &b.apply(f)?);
                Ok(out)
            }),
            Arc::new(move |f: &Field| {
                let mut out = a2.plain_adjoint_apply(f)?;
                out.scale(alpha.conj());
                out.axpy(beta.conj(), &b2.plain_adjoint_apply(f)?);
                Ok(out)
            }),
        )
    }

    pub fn sub(&self, rhs: &GridOperator) -> GridOperator {
        self.linear_combination(ONE, rhs, -ONE)
    }

    /// Dense matrix acting on flat field values.
    pub fn to_dense(&self) -> Result<Mat<Complex64>> {
        dense::materialize(&self.grid, |f| self.apply(f))
    }

    /// `M_r^{1/2} T M_d^{-1/2}`: the matrix whose plain singular values are the
    /// singular values of `T` between the declared Hilbert spaces.
    pub fn to_dense_symmetrized(&self) -> Result<Mat<Complex64>> {
        dense::materialize(&self.grid, |f| {
            let g = self.apply(&self.domain_metric.apply_inv_sqrt(f))?;
            Ok(self.range_metric.apply_sqrt(&g))
        })
    }
}

/// Applies a Fourier multiplier with an FFT-ordered table of `k×k` blocks.
pub(crate) fn fourier_blocks(grid: &Grid, table: &[Complex64], f: &Field) -> Field {
    let k = f.fiber();
    let kk = k * k;
    let mut v = f.values().to_vec();
    grid.fourier_forward(&mut v);
    if k == 1 {
        for (x, a) in v.iter_mut().zip(table) {
            *x *= a;
        }
    } else {
        let mut tmp = vec![ZERO; k];
        for (p, chunk) in v.chunks_exact_mut(k).enumerate() {
            let a = &table[p * kk..(p + 1) * kk];
            for i in 0..k {
                tmp[i] = (0..k).map(|j| a[i * k + j] * chunk[j]).sum();
            }
            chunk.copy_from_slice(&tmp);
        }
    }
    grid.fourier_inverse(&mut v);
    Field::from_values(grid, v).expect("fourier multiplier keeps the shape")
}

fn fourier_scalar(grid: &Grid, symbol: &[f64], f: &Field) -> Field {
    let k = f.fiber();
    let mut v = f.values().to_vec();
    grid.fourier_forward(&mut v);
    for (p, chunk) in v.chunks_exact_mut(k).enumerate() {
        for c in chunk {
            *c *= symbol[p];
        }
    }
    grid.fourier_inverse(&mut v);
    Field::from_values(grid, v).expect("fourier multiplier keeps the shape")
}

/// Inverts a small dense `k×k` complex matrix by Gauss-Jordan with partial pivoting.
pub(crate) fn invert_small(k: usize, a: &[Complex64]) -> Option<Vec<Complex64>> {
    if k == 1 {
        return if a[0].norm() > 0.0 { Some(vec![ONE / a[0]]) } else { None };
    }
    let mut m = a.to_vec();
    let mut inv = vec![ZERO; k * k];
    for i in 0..k {
        inv[i * k + i] = ONE;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&x, &y| m[x * k + col].norm().partial_cmp(&m[y * k + col].norm()).unwrap())?;
        if m[piv * k + col].norm() == 0.0 {
            return None;
        }
        for j in 0..k {
            m.swap(col * k + j, piv * k + j);
            inv.swap(col * k + j, piv * k + j);
        }
        let d = ONE / m[col * k + col];
        for j in 0..k {
            m[col * k + j] *= d;
            inv[col * k + j] *= d;
        }
        for row in 0..k {
            if row != col {
                let factor = m[row * k + col];
                for j in 0..k {
                    let (mc, ic) = (m[col * k + j], inv[col * k + j]);
                    m[row * k + j] -= factor * mc;
                    inv[row * k + j] -= factor * ic;
                }
            }
        }
    }
    Some(inv)
}

/// `P(D) f = F⁻¹ A(ξ) F f`.
pub fn apply_pd(symbol: &MatrixSymbol, grid: &Grid, f: &Field) -> Result<Field> {
    if symbol.fiber() != grid.fiber() {
        return Err(Error::Shape(format!("symbol has fiber dimension {}, grid has {}", symbol.fiber(), grid.fiber())));
    }
    f.check_grid(grid)?;
    let table = symbol.table(grid)?;
    Ok(fourier_blocks(grid, &table, f))
}

/// Solver settings for `(H - z)u = f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    /// Fall back to a dense LU solve when the grid is densifiable and the
    /// iteration fails or `z` is real.
    pub dense_fallback: bool,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 600, restart: 60, dense_fallback: true }
    }
}

/// Default resolvent shift `z = i`.
pub const DEFAULT_SHIFT: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Fourier,
    Krylov,
    Dense,
}

/// Record of one resolvent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolve {
    pub z: Complex64,
    pub tol: f64,
    pub max_iter: usize,
    pub achieved_residual: f64,
    pub iterations_used: usize,
    pub method: SolveMethod,
}

/// `H = M⁻¹P(D)` in the space weighted by `M`.
#[derive(Clone)]
pub struct MediumOperator {
    grid: Grid,
    symbol: MatrixSymbol,
    table: Arc<Vec<Complex64>>,
    medium: Arc<MediumField>,
    free: bool,
}

impl std::fmt::Debug for MediumOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MediumOperator")
            .field("symbol", &self.symbol.name())
            .field("medium", &self.medium.label())
            .field("grid", &self.grid)
            .finish()
    }
}

impl MediumOperator {
    /// Builds `H = M⁻¹P(D)` on the medium's grid.
    pub fn new(medium: Arc<MediumField>, symbol: &MatrixSymbol) -> Result<Self> {
        let grid = medium.grid().clone();
        if symbol.fiber() != grid.fiber() || symbol.dim() != grid.dim() {
            return Err(Error::Shape(format!(
                "symbol `{}` (d = {}, k = {}) does not match the grid (d = {}, k = {})",
                symbol.name(),
                symbol.dim(),
                symbol.fiber(),
                grid.dim(),
                grid.fiber()
            )));
        }
        let table = Arc::new(symbol.table(&grid)?);
        let kk = grid.fiber() * grid.fiber();
        let free = (0..grid.num_points()).all(|p| {
            let b = medium.at(p);
            (0..kk).all(|i| b[i] == if i % (grid.fiber() + 1) == 0 { 1.0 } else { 0.0 })
        });
        Ok(Self { grid, symbol: symbol.clone(), table, medium, free })
    }

    /// `H₀₀ = P(D)` in plain `L²`.
    pub fn free(symbol: &MatrixSymbol, grid: &Grid) -> Result<Self> {
        let grid = grid.with_fiber(symbol.fiber())?;
        Self::new(Arc::new(MediumField::identity(&grid)), symbol)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn symbol(&self) -> &MatrixSymbol {
        &self.symbol
    }

    pub fn medium(&self) -> &Arc<MediumField> {
        &self.medium
    }

    pub fn metric(&self) -> Metric {
        if self.free {
            Metric::Euclidean
        } else {
            Metric::Medium(self.medium.clone())
        }
    }

    /// True when `M ≡ I`.
    pub fn is_free(&self) -> bool {
        self.free
    }

    pub fn apply_pd(&self, f: &Field) -> Result<Field> {
        f.check_grid(&self.grid)?;
        Ok(fourier_blocks(&self.grid, &self.table, f))
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        Ok(self.medium.apply_inverse(&self.apply_pd(f)?))
    }

    /// `H` as a [`GridOperator`] on `ℋ = (fields, M)`.
    pub fn as_grid_operator(&self) -> GridOperator {
        let (a, b) = (self.clone(), self.clone());
        let metric = self.metric();
        GridOperator::new(
            format!("H[{}; {}]", self.symbol.name(), self.medium.label()),
            &self.grid,
            metric.clone(),
            metric,
            Arc::new(move |f: &Field| a.apply(f)),
            // (M⁻¹P)* = P M⁻¹
            Arc::new(move |f: &Field| b.apply_pd(&b.medium.apply_inverse(f))),
        )
    }

    /// Free resolvent table `(A(ξ) - z)⁻¹` per mode.
    fn free_resolvent_table(&self, z: Complex64) -> Result<Vec<Complex64>> {
        let k = self.grid.fiber();
        let kk = k * k;
        let mut out = Vec::with_capacity(self.table.len());
        for p in 0..self.grid.num_points() {
            let mut block = self.table[p * kk..(p + 1) * kk].to_vec();
            for i in 0..k {
                block[i * k + i] -= z;
            }
            let inv = invert_small(k, &block)
                .ok_or_else(|| Error::Domain(format!("z = {z} lies on the spectrum of the free symbol")))?;
            out.extend(inv);
        }
        Ok(out)
    }

    /// Solves `(H - z)u = f`.
    pub fn resolvent_solve(&self, z: Complex64, f: &Field, cfg: &ResolventConfig) -> Result<(Field, ResolventSolve)> {
        let pre = if z.im != 0.0 { Some(Arc::new(self.free_resolvent_table(z)?)) } else { None };
        self.resolvent_solve_with(z, f, cfg, pre.as_deref().map(|v| v.as_slice()))
    }

    fn resolvent_solve_with(
        &self,
        z: Complex64,
        f: &Field,
        cfg: &ResolventConfig,
        pre: Option<&[Complex64]>,
    ) -> Result<(Field, ResolventSolve)> {
        f.check_grid(&self.grid)?;
        let mut record = ResolventSolve {
            z,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
            achieved_residual: 0.0,
            iterations_used: 0,
            method: SolveMethod::Krylov,
        };
        if z.im == 0.0 {
            if !cfg.dense_fallback {
                return Err(Error::Domain(format!(
                    "real shift z = {} needs the dense fallback, which is disabled",
                    z.re
                )));
            }
            return self.dense_solve(z, f, record);
        }
        let pre = pre.expect("non-real shift has a preconditioner");
        if self.free {
            let u = fourier_blocks(&self.grid, pre, f);
            record.method = SolveMethod::Fourier;
            record.achieved_residual = self.relative_residual(z, &u, f)?;
            return Ok((u, record));
        }
        let grid = &self.grid;
        let apply = |v: &[Complex64]| {
            let fv = Field::from_values(grid, v.to_vec()).expect("krylov vector shape");
            let mut out = self.apply(&fv).expect("operator shape");
            out.axpy(-z, &fv);
            out.into_values()
        };
        let precond = |v: &[Complex64]| {
            let fv = Field::from_values(grid, v.to_vec()).expect("krylov vector shape");
            fourier_blocks(grid, pre, &fv).into_values()
        };
        let opts = GmresOptions { restart: cfg.restart, max_iter: cfg.max_iter, tol: cfg.tol };
        let out = gmres(apply, precond, f.values(), &opts);
        record.iterations_used = out.iterations;
        record.achieved_residual = out.relative_residual;
        if out.converged {
            return Ok((Field::from_values(grid, out.solution)?, record));
        }
        if cfg.dense_fallback && dense::check_densifiable(grid.dof()).is_ok() {
            log::warn!("krylov solve stalled at {:e}; using dense fallback", out.relative_residual);
            return self.dense_solve(z, f, record);
        }
        Err(Error::Solver { iterations: out.iterations, residual: out.relative_residual })
    }

    fn dense_solve(&self, z: Complex64, f: &Field, mut record: ResolventSolve) -> Result<(Field, ResolventSolve)> {
        use faer::linalg::solvers::Solve;
        let a = self.shifted_dense(z)?;
        let rhs = Mat::<Complex64>::from_fn(f.len(), 1, |i, _| f.values()[i]);
        let sol = a.partial_piv_lu().solve(&rhs);
        let u = Field::from_values(&self.grid, (0..f.len()).map(|i| sol[(i, 0)]).collect())?;
        let res = self.relative_residual(z, &u, f)?;
        if !res.is_finite() || res > cfg_dense_tol(record.tol) {
            return Err(Error::Domain(format!(
                "z = {z} is numerically on the discrete spectrum (dense residual {res:e})"
            )));
        }
        record.method = SolveMethod::Dense;
        record.achieved_residual = res;
        Ok((u, record))
    }

    /// `‖(H - z)u - f‖ / ‖f‖`.
    pub fn relative_residual(&self, z: Complex64, u: &Field, f: &Field) -> Result<f64> {
        let mut r = self.apply(u)?;
        r.axpy(-z, u);
        let r = r.sub(f);
        let fnorm = f.norm_sqr_plain().sqrt();
        Ok(if fnorm == 0.0 { r.norm_sqr_plain().sqrt() } else { r.norm_sqr_plain().sqrt() / fnorm })
    }

    /// Dense `H` on flat values.
    pub fn to_dense(&self) -> Result<Mat<Complex64>> {
        dense::materialize(&self.grid, |f| self.apply(f))
    }

    fn shifted_dense(&self, z: Complex64) -> Result<Mat<Complex64>> {
        let mut a = self.to_dense()?;
        for i in 0..a.nrows() {
            a[(i, i)] -= z;
        }
        Ok(a)
    }

    /// Dense `R(z) = (H - z)⁻¹`.
    pub fn resolvent_dense(&self, z: Complex64) -> Result<Mat<Complex64>> {
        dense::inverse(&self.shifted_dense(z)?)
    }

    /// `R(z)` as a matrix-free operator on `ℋ`. Its plain adjoint is `M R(z̄) M⁻¹`.
    pub fn resolvent(&self, z: Complex64, cfg: ResolventConfig) -> Result<GridOperator> {
        if z.im == 0.0 && !cfg.dense_fallback {
            return Err(Error::Domain("real shifts need the dense fallback".into()));
        }
        let pre = if z.im != 0.0 { Some(Arc::new(self.free_resolvent_table(z)?)) } else { None };
        let pre_conj = if z.im != 0.0 { Some(Arc::new(self.free_resolvent_table(z.conj())?)) } else { None };
        let (a, b) = (self.clone(), self.clone());
        let metric = self.metric();
        Ok(GridOperator::new(
            format!("R({z})"),
            &self.grid,
            metric.clone(),
            metric,
            Arc::new(move |f: &Field| {
                a.resolvent_solve_with(z, f, &cfg, pre.as_deref().map(|v| v.as_slice())).map(|r| r.0)
            }),
            Arc::new(move |f: &Field| {
                let g = b.medium.apply_inverse(f);
                let u = b.resolvent_solve_with(z.conj(), &g, &cfg, pre_conj.as_deref().map(|v| v.as_slice()))?.0;
                Ok(b.medium.apply(&u))
            }),
        ))
    }
}

fn cfg_dense_tol(tol: f64) -> f64 {
    tol.max(1e-9)
}

/// Builds `H = M⁻¹P(D)`.
pub fn make_h(medium: Arc<MediumField>, symbol: &MatrixSymbol) -> Result<MediumOperator> {
    MediumOperator::new(medium, symbol)
}

/// Relative defects of the three resolvent identities, each normalized by `‖R(z)f‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventIdentityDefects {
    /// `R = R₀₀(M + z(M - I)R)`.
    pub pm4: f64,
    /// `R = (I - zR(M⁻¹ - I))R₀₀M`.
    pub pm4bi: f64,
    /// `R - R₀ = RM⁻¹V(I + zR₀)`; present when a background `H₀` is supplied.
    pub pm4bis: Option<f64>,
}

impl ResolventIdentityDefects {
    pub fn max(&self) -> f64 {
        self.pm4.max(self.pm4bi).max(self.pm4bis.unwrap_or(0.0))
    }
}

/// Evaluates both sides of each identity on `f` with independent solves.
pub fn resolvent_identity_residuals(
    h: &MediumOperator,
    h00: &MediumOperator,
    h0: Option<&MediumOperator>,
    z: Complex64,
    f: &Field,
    cfg: &ResolventConfig,
) -> Result<ResolventIdentityDefects> {
    if !h00.is_free() {
        return Err(Error::Domain("the reference operator must be the free P(D)".into()));
    }
    if h00.grid() != h.grid() {
        return Err(Error::Shape("H and H00 live on different grids".into()));
    }
    let m = h.medium();
    let r_f = h.resolvent_solve(z, f, cfg)?.0;
    let scale = r_f.norm_sqr_plain().sqrt();
    if scale == 0.0 {
        return Ok(ResolventIdentityDefects { pm4: 0.0, pm4bi: 0.0, pm4bis: h0.map(|_| 0.0) });
    }
    let rel = |a: &Field, b: &Field| a.sub(b).norm_sqr_plain().sqrt() / scale;

    // R₀₀(Mf + z(M - I)Rf)
    let mut inner = m.apply(f);
    let mr = m.apply(&r_f).sub(&r_f);
    inner.axpy(z, &mr);
    let rhs4 = h00.resolvent_solve(z, &inner, cfg)?.0;
    let pm4 = rel(&r_f, &rhs4);

    // g - zR((M⁻¹ - I)g), g = R₀₀Mf
    let g = h00.resolvent_solve(z, &m.apply(f), cfg)?.0;
    let w = m.apply_inverse(&g).sub(&g);
    let rw = h.resolvent_solve(z, &w, cfg)?.0;
    let mut rhs4bi = g.clone();
    rhs4bi.axpy(-z, &rw);
    let pm4bi = rel(&r_f, &rhs4bi);

    let pm4bis = match h0 {
        None => None,
        Some(h0) => {
            if h0.grid() != h.grid() {
                return Err(Error::Shape("H and H0 live on different grids".into()));
            }
            let r0_f = h0.resolvent_solve(z, f, cfg)?.0;
            let lhs = r_f.sub(&r0_f);
            let mut u = f.clone();
            u.axpy(z, &r0_f);
            let v = crate::media::apply_blocks(&m.difference(h0.medium())?, m.fiber(), &u);
            let rhs = h.resolvent_solve(z, &m.apply_inverse(&v), cfg)?.0;
            Some(rel(&lhs, &rhs))
        }
    };
    Ok(ResolventIdentityDefects { pm4, pm4bi, pm4bis })
}

/// The identification `I₀: ℋ₀ → ℋ`, its inverse and both metric adjoints.
#[derive(Debug, Clone)]
pub struct IdentificationPair {
    pub i0: GridOperator,
    pub i1: GridOperator,
    /// `M₀⁻¹M`.
    pub i0_star: GridOperator,
    /// `M⁻¹M₀`.
    pub i1_star: GridOperator,
    background: Arc<MediumField>,
    perturbed: Arc<MediumField>,
}

impl IdentificationPair {
    pub fn background(&self) -> &Arc<MediumField> {
        &self.background
    }

    pub fn perturbed(&self) -> &Arc<MediumField> {
        &self.perturbed
    }

    /// Pointwise blocks of `V = M - M₀`.
    pub fn perturbation(&self) -> Vec<f64> {
        self.perturbed.difference(&self.background).expect("pair media share a grid")
    }

    /// `M₀⁻¹V f`.
    pub fn apply_isometry_defect(&self, f: &Field) -> Field {
        let v = crate::media::apply_blocks(&self.perturbation(), self.perturbed.fiber(), f);
        self.background.apply_inverse(&v)
    }
}

pub fn identification_ops(m0: Arc<MediumField>, m: Arc<MediumField>) -> Result<IdentificationPair> {
    m0.check_same_grid(&m)?;
    let grid = m0.grid().clone();
    let h0 = Metric::Medium(m0.clone());
    let h = Metric::Medium(m.clone());
    let id: Arc<ApplyFn> = Arc::new(|f: &Field| Ok(f.clone()));
    let i0 = GridOperator::new("I0", &grid, h0.clone(), h.clone(), id.clone(), id.clone());
    let i1 = GridOperator::new("I1", &grid, h.clone(), h0.clone(), id.clone(), id);

    let (a, b) = (m0.clone(), m.clone());
    let (a2, b2) = (m0.clone(), m.clone());
    let i0_star = GridOperator::new(
        "I0*",
        &grid,
        h.clone(),
        h0.clone(),
        Arc::new(move |f: &Field| Ok(a.apply_inverse(&b.apply(f)))),
        Arc::new(move |f: &Field| Ok(b2.apply(&a2.apply_inverse(f)))),
    );
    let (a, b) = (m0.clone(), m.clone());
    let (a2, b2) = (m0.clone(), m.clone());
    let i1_star = GridOperator::new(
        "I1*",
        &grid,
        h0,
        h,
        Arc::new(move |f: &Field| Ok(b.apply_inverse(&a.apply(f)))),
        Arc::new(move |f: &Field| Ok(a2.apply(&b2.apply_inverse(f)))),
    );
    Ok(IdentificationPair { i0, i1, i0_star, i1_star, background: m0, perturbed: m })
}

#[derive(Debug, Clone)]
pub struct PerturbationOutcome {
    /// `(HI₀ - I₀H₀)f`.
    pub commutator: Field,
    /// `‖(HI₀ - I₀H₀)f + M⁻¹VH₀f‖ / ‖f‖`.
    pub defect: f64,
}

pub fn perturbation_apply(
    h: &MediumOperator,
    h0: &MediumOperator,
    pair: &IdentificationPair,
    f: &Field,
) -> Result<PerturbationOutcome> {
    let hf = h.apply(&pair.i0.apply(f)?)?;
    let h0f = h0.apply(f)?;
    let commutator = hf.sub(&pair.i0.apply(&h0f)?);
    let v = crate::media::apply_blocks(&pair.perturbation(), h.grid().fiber(), &h0f);
    let predicted = h.medium().apply_inverse(&v);
    let fnorm = f.norm_sqr_plain().sqrt();
    let resid = commutator.add(&predicted).norm_sqr_plain().sqrt();
    Ok(PerturbationOutcome { commutator, defect: if fnorm == 0.0 { resid } else { resid / fnorm } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::MediumSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const I: Complex64 = Complex64::new(0.0, 1.0);

    fn line(n: usize, l: f64, k: usize) -> Grid {
        Grid::new(1, n, l, k).unwrap()
    }

    fn mode(grid: &Grid, m: f64) -> Field {
        let s = grid.xi_spacing();
        Field::from_scalar_fn(grid, 0, |x| Complex64::from_polar(1.0, m * s * x[0]))
    }

    fn rel(a: &Field, b: &Field) -> f64 {
        a.sub(b).norm_sqr_plain().sqrt() / b.norm_sqr_plain().sqrt().max(1e-300)
    }

    #[test]
    fn laplacian_on_plane_wave() {
        let g = line(64, PI, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let f = mode(&g, 3.0);
        let out = apply_pd(&lap, &g, &f).unwrap();
        assert!(rel(&out, &f.scaled(Complex64::new(9.0, 0.0))) < 1e-12);
        let zero = apply_pd(&lap, &g, &Field::zeros(&g)).unwrap();
        assert_eq!(zero.norm_sqr_plain(), 0.0);
    }

    #[test]
    fn wave_symbol_on_first_slot() {
        let g = line(32, PI, 2);
        let wave = MatrixSymbol::builtin("wave", 1).unwrap();
        let f = Field::from_scalar_fn(&g, 0, |x| Complex64::from_polar(1.0, x[0]));
        let out = apply_pd(&wave, &g, &f).unwrap();
        // oracle: [[0, i], [-i, 0]]·(e^{ix}, 0) at |ξ| = 1 is (0, -i e^{ix})
        let expected = Field::from_scalar_fn(&g, 1, |x| -I * Complex64::from_polar(1.0, x[0]));
        assert!(rel(&out, &expected) < 1e-12);
        assert!(apply_pd(&wave, &g.with_fiber(1).unwrap(), &Field::zeros(&g.with_fiber(1).unwrap())).is_err());
    }

    #[test]
    fn h_with_identity_medium_is_pd() {
        let g = line(64, 5.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let h = make_h(Arc::new(MediumField::identity(&g)), &lap).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Field::random(&g, &mut rng);
        assert!(rel(&h.apply(&f).unwrap(), &apply_pd(&lap, &g, &f).unwrap()) < 1e-13);
    }

    #[test]
    fn metric_self_adjointness() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (sym, k) in [("laplacian", 1), ("wave", 2), ("dirac1d", 2)] {
            let g = line(64, 8.0, k);
            let m = MediumField::from_fn(&g, "m", |x| {
                let a = 1.0 + 0.5 * (-x[0] * x[0]).exp();
                let mut v = vec![0.0; k * k];
                for i in 0..k {
                    v[i * k + i] = a + 0.2 * i as f64;
                }
                if k == 2 {
                    v[1] = 0.1 * (-x[0].abs()).exp();
                    v[2] = v[1];
                }
                v
            })
            .unwrap();
            let symbol = MatrixSymbol::builtin(sym, 1).unwrap();
            let h = make_h(Arc::new(m), &symbol).unwrap().as_grid_operator();
            let f = Field::random(&g, &mut rng);
            let u = Field::random(&g, &mut rng);
            let metric = h.domain_metric().clone();
            let lhs = metric.inner(&g, &h.apply(&f).unwrap(), &u);
            let rhs = metric.inner(&g, &f, &h.apply(&u).unwrap());
            assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm(), "{sym}");
            // derived metric adjoint coincides with H itself
            assert!(rel(&h.adjoint_apply(&f).unwrap(), &h.apply(&f).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn constant_medium_scales_eigenvalues() {
        let g = line(32, PI, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let h = make_h(Arc::new(MediumField::constant(&g, 2.0).unwrap()), &lap).unwrap();
        let f = mode(&g, 5.0);
        assert!(rel(&h.apply(&f).unwrap(), &f.scaled(Complex64::new(12.5, 0.0))) < 1e-12);
    }

    #[test]
    fn free_resolvent_is_diagonal() {
        let g = line(64, PI, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let h00 = MediumOperator::free(&lap, &g).unwrap();
        let f = mode(&g, 4.0);
        let (u, rec) = h00.resolvent_solve(I, &f, &ResolventConfig::default()).unwrap();
        assert_eq!(rec.method, SolveMethod::Fourier);
        let expected = f.scaled(Complex64::new(1.0, 0.0) / (Complex64::new(16.0, 0.0) - I));
        assert!(rel(&u, &expected) < 1e-12);
    }

    #[test]
    fn krylov_resolvent_reaches_tolerance() {
        let g = line(256, 20.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m = MediumSpec::Bump { amplitude: 1.5, width: 3.0 }.build(&g).unwrap();
        let h = make_h(Arc::new(m), &lap).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Field::random(&g, &mut rng);
        let cfg = ResolventConfig { tol: 1e-11, dense_fallback: false, ..Default::default() };
        let (u, rec) = h.resolvent_solve(I, &f, &cfg).unwrap();
        assert_eq!(rec.method, SolveMethod::Krylov);
        assert!(h.relative_residual(I, &u, &f).unwrap() <= 1e-10);
        assert!(rec.achieved_residual <= cfg.tol);
    }

    #[test]
    fn real_shift_needs_fallback() {
        let g = line(32, 4.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let h = make_h(Arc::new(MediumField::constant(&g, 1.5).unwrap()), &lap).unwrap();
        let f = mode(&g, 1.0);
        let cfg = ResolventConfig { dense_fallback: false, ..Default::default() };
        assert!(matches!(h.resolvent_solve(Complex64::new(2.0, 0.0), &f, &cfg), Err(Error::Domain(_))));
        // with the fallback, a real z off the spectrum is solved densely
        let (u, rec) = h.resolvent_solve(Complex64::new(-1.0, 0.0), &f, &ResolventConfig::default()).unwrap();
        assert_eq!(rec.method, SolveMethod::Dense);
        assert!(h.relative_residual(Complex64::new(-1.0, 0.0), &u, &f).unwrap() < 1e-10);
    }

    #[test]
    fn first_resolvent_identity() {
        let g = line(128, 12.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m = MediumSpec::Rational { amplitude: 0.3, power: 2.0 }.build(&g).unwrap();
        let h = make_h(Arc::new(m), &lap).unwrap();
        let cfg = ResolventConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Field::random(&g, &mut rng);
        let (z, w) = (Complex64::new(0.3, 0.8), Complex64::new(-1.0, 2.5));
        let rz = h.resolvent_solve(z, &f, &cfg).unwrap().0;
        let rw = h.resolvent_solve(w, &f, &cfg).unwrap().0;
        let rzrw = h.resolvent_solve(z, &rw, &cfg).unwrap().0;
        let lhs = rz.sub(&rw);
        let rhs = rzrw.scaled(z - w);
        assert!(rel(&lhs, &rhs) < 1e-9);
    }

    #[test]
    fn resolvent_identities_hold() {
        let g = line(128, 16.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m = Arc::new(MediumSpec::Bump { amplitude: 0.8, width: 2.0 }.build(&g).unwrap());
        let m0 = Arc::new(MediumSpec::Bump { amplitude: 0.2, width: 1.0 }.build(&g).unwrap());
        let h = make_h(m, &lap).unwrap();
        let h0 = make_h(m0, &lap).unwrap();
        let h00 = MediumOperator::free(&lap, &g).unwrap();
        let cfg = ResolventConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Field::random(&g, &mut rng);
        let d = resolvent_identity_residuals(&h, &h00, Some(&h0), I, &f, &cfg).unwrap();
        assert!(d.max() < 10.0 * cfg.tol * 100.0, "{d:?}");
        let zero = resolvent_identity_residuals(&h, &h00, Some(&h0), I, &Field::zeros(&g), &cfg).unwrap();
        assert_eq!(zero.max(), 0.0);
        let id = make_h(Arc::new(MediumField::identity(&g)), &lap).unwrap();
        let triv = resolvent_identity_residuals(&id, &h00, Some(&id), I, &f, &cfg).unwrap();
        assert!(triv.max() < 1e-13);
    }

    #[test]
    fn resolvent_operator_adjoint_is_consistent() {
        let g = line(64, 8.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m = Arc::new(MediumSpec::Bump { amplitude: 0.8, width: 2.0 }.build(&g).unwrap());
        let h = make_h(m, &lap).unwrap();
        let r = h.resolvent(I, ResolventConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = Field::random(&g, &mut rng);
        let u = Field::random(&g, &mut rng);
        let lhs = r.apply(&f).unwrap().dot(&u);
        let rhs = f.dot(&r.plain_adjoint_apply(&u).unwrap());
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
    }

    #[test]
    fn identification_examples() {
        let g = line(32, 6.0, 1);
        let m0 = Arc::new(MediumSpec::Bump { amplitude: 0.3, width: 1.0 }.build(&g).unwrap());
        let same = identification_ops(m0.clone(), m0.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = Field::random(&g, &mut rng);
        assert!(rel(&same.i0_star.apply(&f).unwrap(), &f) < 1e-15);

        let m = Arc::new(MediumSpec::Rational { amplitude: 0.5, power: 2.0 }.build(&g).unwrap());
        let pair = identification_ops(m0.clone(), m.clone()).unwrap();
        let u = Field::random(&g, &mut rng);
        let lhs = Metric::Medium(m.clone()).inner(&g, &pair.i0.apply(&f).unwrap(), &u);
        let rhs = Metric::Medium(m0.clone()).inner(&g, &f, &pair.i0_star.apply(&u).unwrap());
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm());
        // the generic metric adjoint of I0 is I0*
        assert!(rel(&pair.i0.adjoint_apply(&u).unwrap(), &pair.i0_star.apply(&u).unwrap()) < 1e-14);
        // (I0*I0 - I)f = M0⁻¹Vf
        let lhs = pair.i0_star.apply(&pair.i0.apply(&f).unwrap()).unwrap().sub(&f);
        assert!(rel(&lhs, &pair.apply_isometry_defect(&f)) < 1e-12);

        let one = Arc::new(MediumField::identity(&g));
        let two = Arc::new(MediumField::constant(&g, 2.0).unwrap());
        let p = identification_ops(one, two).unwrap();
        let e = Field::basis(&g, 5);
        assert!((p.i0_star.apply(&e).unwrap().values()[5] - Complex64::new(2.0, 0.0)).norm() < 1e-15);

        let other = Arc::new(MediumField::identity(&line(16, 6.0, 1)));
        assert!(identification_ops(m0, other).is_err());
    }

    #[test]
    fn perturbation_formula() {
        let g = line(128, 10.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m0 = Arc::new(MediumSpec::Bump { amplitude: 0.4, width: 1.0 }.build(&g).unwrap());
        let m = Arc::new(MediumSpec::Rational { amplitude: 0.9, power: 2.0 }.build(&g).unwrap());
        let h0 = make_h(m0.clone(), &lap).unwrap();
        let h = make_h(m.clone(), &lap).unwrap();
        let pair = identification_ops(m0.clone(), m.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = Field::random(&g, &mut rng);
        let out = perturbation_apply(&h, &h0, &pair, &f).unwrap();
        assert!(out.defect < 1e-11, "{}", out.defect);

        let same = identification_ops(m0.clone(), m0.clone()).unwrap();
        let out = perturbation_apply(&h0, &h0, &same, &f).unwrap();
        assert_eq!(out.commutator.norm_sqr_plain(), 0.0);
        assert_eq!(out.defect, 0.0);

        // eigenvector of a constant-medium H0: output = -λ M⁻¹ V f
        let c0 = Arc::new(MediumField::constant(&g, 1.0).unwrap());
        let h0c = make_h(c0.clone(), &lap).unwrap();
        let pair = identification_ops(c0, m.clone()).unwrap();
        let f = mode(&g, 6.0);
        let lambda = (6.0 * g.xi_spacing()).powi(2);
        let out = perturbation_apply(&h, &h0c, &pair, &f).unwrap();
        let v = crate::media::apply_blocks(&pair.perturbation(), 1, &f);
        let expected = m.apply_inverse(&v).scaled(Complex64::new(-lambda, 0.0));
        assert!(rel(&out.commutator, &expected) < 1e-11);
    }

    #[test]
    fn linearity_of_composed_operator() {
        let g = line(64, 6.0, 1);
        let lap = MatrixSymbol::builtin("laplacian", 1).unwrap();
        let m = Arc::new(MediumSpec::Bump { amplitude: 0.8, width: 2.0 }.build(&g).unwrap());
        let h = make_h(m, &lap).unwrap().as_grid_operator();
        let w = GridOperator::scalar_multiplication("w", &g, (0..64).map(|p| 1.0 / (1.0 + p as f64)).collect());
        let t = w.compose(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (f, u) = (Field::random(&g, &mut rng), Field::random(&g, &mut rng));
        let (a, b) = (Complex64::new(0.3, -2.0), Complex64::new(1.7, 0.4));
        let mut comb = f.scaled(a);
        comb.axpy(b, &u);
        let lhs = t.apply(&comb).unwrap();
        let mut rhs = t.apply(&f).unwrap().scaled(a);
        rhs.axpy(b, &t.apply(&u).unwrap());
        assert!(rel(&lhs, &rhs) < 1e-12);
        let x = t.apply(&f).unwrap().dot(&u);
        let y = f.dot(&t.plain_adjoint_apply(&u).unwrap());
        assert!((x - y).norm() < 1e-11 * x.norm());
    }

    #[test]
    fn invert_small_matches_identity() {
        let a = vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(-1.0, 0.3),
            Complex64::new(2.0, -1.0),
        ];
        let inv = invert_small(2, &a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let v: Complex64 = (0..2).map(|l| a[i * 2 + l] * inv[l * 2 + j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - Complex64::new(e, 0.0)).norm() < 1e-14);
            }
        }
        assert!(invert_small(2, &[Complex64::new(0.0, 0.0); 4]).is_none());
    }
}
