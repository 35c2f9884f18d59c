// SPDX-License-Identifier: Apache-2.0

//! Restarted GMRES with right preconditioning for complex, non-Hermitian systems.
//!
//! Right preconditioning keeps the monitored residual equal to the true residual
//! `‖b - Ax‖`, which is the quantity the resolvent contracts are stated in.

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    /// Krylov subspace dimension per cycle.
    pub restart: usize,
    /// Total Arnoldi steps across all cycles.
    pub max_iter: usize,
    /// Target relative residual `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { restart: 60, max_iter: 600, tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: Vec<Complex64>,
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `Σ conj(a_i) b_i`.
fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if r == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if a.norm() == 0.0 {
        return (0.0, b.conj() / b.norm());
    }
    let c = a.norm() / r;
    let s = (a / a.norm()) * b.conj() / r;
    (c, s)
}

fn rotate(c: f64, s: Complex64, x: Complex64, y: Complex64) -> (Complex64, Complex64) {
    (x * c + s * y, -s.conj() * x + y * c)
}

/// Solves `A x = b` with right preconditioner `P` (`A P y = b`, `x = P y`).
pub fn gmres<A, P>(mut apply: A, mut precond: P, b: &[Complex64], opts: &GmresOptions) -> GmresOutcome
where
    A: FnMut(&[Complex64]) -> Vec<Complex64>,
    P: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return GmresOutcome { solution: x, relative_residual: 0.0, iterations: 0, converged: true };
    }
    let m = opts.restart.max(1);
    let mut total = 0usize;
    loop {
        let ax = apply(&x);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= opts.tol || total >= opts.max_iter {
            return GmresOutcome { solution: x, relative_residual: rel, iterations: total, converged: rel <= opts.tol };
        }
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<Complex64>> = Vec::with_capacity(m);
        let mut cs: Vec<(f64, Complex64)> = Vec::with_capacity(m);
        let mut g = vec![zero; m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut steps = 0;
        for j in 0..m {
            let z = precond(&basis[j]);
            let mut w = apply(&z);
            let mut col = vec![zero; j + 2];
            // modified Gram-Schmidt, two passes
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let h = dotc(v, &w);
                    col[i] += h;
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= h * vi;
                    }
                }
            }
            let hnext = norm(&w);
            col[j + 1] = Complex64::new(hnext, 0.0);
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = rotate(c, s, col[i], col[i + 1]);
                col[i] = a;
                col[i + 1] = bb;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            let (a, _) = rotate(c, s, col[j], col[j + 1]);
            col[j] = a;
            col[j + 1] = zero;
            let (g0, g1) = rotate(c, s, g[j], g[j + 1]);
            g[j] = g0;
            g[j + 1] = g1;
            cs.push((c, s));
            hess.push(col);
            total += 1;
            steps = j + 1;
            if hnext == 0.0 || g[j + 1].norm() / bnorm <= opts.tol || total >= opts.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // back substitution on the rotated Hessenberg factor
        let mut y = vec![zero; steps];
        for i in (0..steps).rev() {
            let mut acc = g[i];
            for (l, yl) in y.iter().enumerate().skip(i + 1) {
                acc -= hess[l][i] * yl;
            }
            y[i] = acc / hess[i][i];
        }
        let mut update = vec![zero; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vi) in update.iter_mut().zip(v) {
                *u += yi * vi;
            }
        }
        let pu = precond(&update);
        for (xi, pi) in x.iter_mut().zip(&pu) {
            *xi += pi;
        }
    }
}
