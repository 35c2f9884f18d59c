// SPDX-License-Identifier: Apache-2.0

//! Matrix symbols `A(ξ)` of constant-coefficient pseudodifferential operators.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One monomial `ξ^α · C` of a polynomial symbol; `coefficient` is a row-major `k×k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTerm {
    pub powers: Vec<u32>,
    pub coefficient: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymbolKind {
    /// `|ξ|²`, scalar.
    Laplacian,
    /// `|ξ|·[[0, i], [-i, 0]]`, the first-order reduction of the wave equation.
    Wave,
    /// `[[ξ, 1], [1, -ξ]]` on the line.
    Dirac1d,
    Polynomial(Vec<PolynomialTerm>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSymbol {
    name: String,
    dim: usize,
    fiber: usize,
    kind: SymbolKind,
    declared_order: Option<f64>,
    smooth_at_origin: bool,
}

/// Names accepted by [`MatrixSymbol::builtin`].
pub const BUILTIN_SYMBOLS: [&str; 3] = ["laplacian", "wave", "dirac1d"];

/// A symmetrized evaluation `(A + A*)/2` together with the symmetrization defect `max|A - A*|`.
#[derive(Debug, Clone)]
pub struct SymbolValue {
    pub matrix: Mat<Complex64>,
    pub hermiticity_defect: f64,
}

impl MatrixSymbol {
    pub fn builtin(name: &str, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::config("d", format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        let (kind, fiber, order, smooth) = match name {
            "laplacian" => (SymbolKind::Laplacian, 1, 2.0, true),
            "wave" => (SymbolKind::Wave, 2, 1.0, false),
            "dirac1d" => {
                if dim != 1 {
                    return Err(Error::config("symbol", "dirac1d is only defined for d = 1"));
                }
                (SymbolKind::Dirac1d, 2, 1.0, true)
            }
            other => {
                return Err(Error::config(
                    "symbol",
                    format!("unknown builtin symbol `{other}` (expected one of {BUILTIN_SYMBOLS:?})"),
                ))
            }
        };
        Ok(Self { name: name.to_string(), dim, fiber, kind, declared_order: Some(order), smooth_at_origin: smooth })
    }

    /// Polynomial symbol from a coefficient table. The declared order is the
    /// highest total degree present.
    pub fn polynomial(dim: usize, fiber: usize, terms: Vec<PolynomialTerm>) -> Result<Self> {
        if fiber == 0 {
            return Err(Error::config("symbol.k", "fiber dimension must be at least 1"));
        }
        if terms.is_empty() {
            return Err(Error::config("symbol.terms", "a polynomial symbol needs at least one term"));
        }
        let mut order = 0u32;
        for (i, t) in terms.iter().enumerate() {
            if t.powers.len() != dim {
                return Err(Error::config(
                    format!("symbol.terms[{i}].power"),
                    format!("multi-index has {} entries, expected d = {dim}", t.powers.len()),
                ));
            }
            if t.coefficient.len() != fiber * fiber {
                return Err(Error::config(
                    format!("symbol.terms[{i}]"),
                    format!("coefficient has {} entries, expected {}", t.coefficient.len(), fiber * fiber),
                ));
            }
            order = order.max(t.powers.iter().sum());
        }
        Ok(Self {
            name: "polynomial".into(),
            dim,
            fiber,
            kind: SymbolKind::Polynomial(terms),
            declared_order: Some(order as f64),
            smooth_at_origin: true,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fiber(&self) -> usize {
        self.fiber
    }

    pub fn kind(&self) -> &SymbolKind {
        &self.kind
    }

    pub fn declared_order(&self) -> Option<f64> {
        self.declared_order
    }

    pub fn smooth_at_origin(&self) -> bool {
        self.smooth_at_origin
    }

    /// Raw (unsymmetrized) entries of `A(ξ)`, row-major.
    fn raw(&self, xi: &[f64]) -> Vec<Complex64> {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        match &self.kind {
            SymbolKind::Laplacian => vec![Complex64::new(r * r, 0.0)],
            SymbolKind::Wave => vec![ZERO, I * r, -I * r, ZERO],
            SymbolKind::Dirac1d => {
                let x = Complex64::new(xi[0], 0.0);
                vec![x, ONE, ONE, -x]
            }
            SymbolKind::Polynomial(terms) => {
                let mut out = vec![ZERO; self.fiber * self.fiber];
                for t in terms {
                    let mono: f64 = xi.iter().zip(&t.powers).map(|(x, &p)| x.powi(p as i32)).product();
                    for (o, c) in out.iter_mut().zip(&t.coefficient) {
                        *o += c * mono;
                    }
                }
                out
            }
        }
    }

    fn check_xi(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.dim {
            return Err(Error::Shape(format!("frequency has {} components, symbol expects {}", xi.len(), self.dim)));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::SymbolEval { xi: xi.to_vec() });
        }
        Ok(())
    }

    /// Evaluates and symmetrizes `A(ξ)`.
    pub fn eval(&self, xi: &[f64]) -> Result<SymbolValue> {
        self.check_xi(xi)?;
        let raw = self.raw(xi);
        if raw.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::SymbolEval { xi: xi.to_vec() });
        }
        let k = self.fiber;
        let mut defect = 0.0f64;
        let matrix = Mat::from_fn(k, k, |i, j| {
            let a = raw[i * k + j];
            let b = raw[j * k + i].conj();
            defect = defect.max((a - b).norm());
            (a + b) * 0.5
        });
        Ok(SymbolValue { matrix, hermiticity_defect: defect })
    }

    /// Eigenvalues of `A(ξ)` in nondecreasing order.
    pub fn eigenvalues(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let value = self.eval(xi)?;
        hermitian_eigenvalues(&value.matrix)
    }

    /// `ν(ξ) = min_{|n|=1} |A(ξ) n|`, the smallest absolute eigenvalue.
    pub fn nu(&self, xi: &[f64]) -> Result<f64> {
        let ev = self.eigenvalues(xi)?;
        Ok(ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Symbol sampled on the FFT-ordered frequency lattice: `N·k·k` entries, row-major per point.
    pub fn table(&self, grid: &Grid) -> Result<Vec<Complex64>> {
        if grid.dim() != self.dim {
            return Err(Error::Shape(format!(
                "symbol is {}-dimensional, grid is {}-dimensional",
                self.dim,
                grid.dim()
            )));
        }
        let k = self.fiber;
        let mut out = Vec::with_capacity(grid.num_points() * k * k);
        for p in 0..grid.num_points() {
            let xi = grid.frequency(p);
            let v = self.eval(&xi[..self.dim])?;
            for i in 0..k {
                for j in 0..k {
                    out.push(v.matrix[(i, j)]);
                }
            }
        }
        Ok(out)
    }

    /// Largest group speed `|∇λ(ξ)|` over eigenbranches, for lattice frequencies within
    /// `radius` of `center`. Central differences with step `1e-6·max(1,|ξ|)`.
    pub fn max_group_speed(&self, grid: &Grid, center: &[f64], radius: f64) -> Result<f64> {
        self.check_xi(center)?;
        let mut vmax = 0.0f64;
        for p in 0..grid.num_points() {
            let xi = grid.frequency(p);
            let xi = &xi[..self.dim];
            let dist: f64 = xi.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist > radius {
                continue;
            }
            let step = 1e-6 * xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            let mut grad_sq = vec![0.0; self.fiber];
            for a in 0..self.dim {
                let mut plus = xi.to_vec();
                let mut minus = xi.to_vec();
                plus[a] += step;
                minus[a] -= step;
                let ep = self.eigenvalues(&plus)?;
                let em = self.eigenvalues(&minus)?;
                for b in 0..self.fiber {
                    grad_sq[b] += ((ep[b] - em[b]) / (2.0 * step)).powi(2);
                }
            }
            for g in grad_sq {
                vmax = vmax.max(g.sqrt());
            }
        }
        Ok(vmax)
    }
}

/// Eigenvalues of a small Hermitian matrix, nondecreasing.
pub(crate) fn hermitian_eigenvalues(m: &Mat<Complex64>) -> Result<Vec<f64>> {
    if m.nrows() == 1 {
        return Ok(vec![m[(0, 0)].re]);
    }
    m.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::LinAlg(format!("symbol eigenvalues: {e:?}")))
}

/// Result of the power-law fit `ν(ξ) ≈ c|ξ|^κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityReport {
    pub fitted_kappa: f64,
    /// Largest `c` with `ν(ξ) ≥ c|ξ|^κ` on the fitted points.
    pub fitted_c: f64,
    pub min_nu_over_lattice: f64,
    pub satisfied: bool,
    pub points_used: usize,
}

/// Least-squares slope of `log ν` against `log |ξ|` over lattice frequencies with `|ξ| ≥ xi_min`.
pub fn ellipticity_report(symbol: &MatrixSymbol, grid: &Grid, xi_min: f64) -> Result<EllipticityReport> {
    if !(xi_min > 0.0) {
        return Err(Error::Domain(format!("xi_min must be positive (got {xi_min})")));
    }
    let mut samples = Vec::new();
    let mut min_nu = f64::INFINITY;
    for p in 0..grid.num_points() {
        let r = grid.frequency_radius(p);
        if r < xi_min {
            continue;
        }
        let xi = grid.frequency(p);
        let nu = symbol.nu(&xi[..grid.dim()])?;
        min_nu = min_nu.min(nu);
        samples.push((r, nu));
    }
    if samples.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "only {} lattice frequencies with |xi| >= {xi_min}; need at least 8",
            samples.len()
        )));
    }
    if samples.iter().any(|&(_, nu)| nu <= 0.0) {
        return Ok(EllipticityReport {
            fitted_kappa: f64::NAN,
            fitted_c: 0.0,
            min_nu_over_lattice: min_nu,
            satisfied: false,
            points_used: samples.len(),
        });
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(r, nu)| (r.ln(), nu.ln())).collect();
    let (slope, _) = crate::fit::least_squares_line(&pts)
        .ok_or_else(|| Error::DegenerateFit("all fitted frequencies share one radius".into()))?;
    let c = samples.iter().map(|&(r, nu)| nu / r.powf(slope)).fold(f64::INFINITY, f64::min);
    Ok(EllipticityReport {
        fitted_kappa: slope,
        fitted_c: c,
        min_nu_over_lattice: min_nu,
        satisfied: slope > 0.0 && c > 0.0,
        points_used: samples.len(),
    })
}
