// SPDX-License-Identifier: Apache-2.0

//! Periodic box discretization of ℝᵈ.
//!
//! The box `[-L, L)ᵈ` carries `n` points per axis at `x_j = -L + 2Lj/n` and
//! the dual lattice `ξ_m = πm/L`, `m ∈ {-n/2, …, n/2-1}`. Points are stored
//! row-major over the axes; the frequency lattice is stored in FFT order
//! (index `j` is mode `j` for `j < n/2` and mode `j - n` otherwise).
//!
//! All discrete Fourier transforms are unitary, so Parseval holds without
//! extra factors and `F⁻¹ diag(A(ξ)) F` is a Hermitian matrix whenever every
//! `A(ξ)` is.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default threshold on `⟨L⟩^{-r}` above which the torus is considered too small.
pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 1e-3;

#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_length: f64,
    fiber: usize,
    x_axis: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("half_length", &self.half_length)
            .field("fiber", &self.fiber)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.same_lattice(other) && self.fiber == other.fiber
    }
}

impl Grid {
    /// Builds the lattice for `d ∈ {1,2,3}`, even `n ≥ 4`, `L > 0` and fiber dimension `k ≥ 1`.
    pub fn new(dim: usize, n: usize, half_length: f64, fiber: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::config("d", format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        if n % 2 != 0 {
            return Err(Error::config("n", format!("n must be even (got {n})")));
        }
        if n < 4 {
            return Err(Error::config("n", format!("n must be at least 4 (got {n})")));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::config("L", format!("half-length must be positive (got {half_length})")));
        }
        if fiber == 0 {
            return Err(Error::config("k", "fiber dimension must be at least 1"));
        }
        let h = 2.0 * half_length / n as f64;
        let x_axis = (0..n).map(|j| -half_length + h * j as f64).collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        Ok(Self { dim, n, half_length, fiber, x_axis, fft, ifft })
    }

    /// Same lattice with a different number of components per point.
    pub fn with_fiber(&self, fiber: usize) -> Result<Self> {
        if fiber == 0 {
            return Err(Error::config("k", "fiber dimension must be at least 1"));
        }
        Ok(Self { fiber, ..self.clone() })
    }

    /// Dyadic refinement `n → 2n` on the same box.
    pub fn refined(&self) -> Self {
        Self::new(self.dim, 2 * self.n, self.half_length, self.fiber).expect("refining a valid grid stays valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn fiber(&self) -> usize {
        self.fiber
    }

    /// Lattice spacing `h = 2L/n`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    /// Frequency spacing `π/L`.
    pub fn xi_spacing(&self) -> f64 {
        std::f64::consts::PI / self.half_length
    }

    /// Quadrature weight `hᵈ` attached to every lattice point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn num_points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Total degrees of freedom `k·nᵈ`.
    pub fn dof(&self) -> usize {
        self.fiber * self.num_points()
    }

    /// Spatial lattice along one axis (identical for every axis).
    pub fn x_points(&self) -> &[f64] {
        &self.x_axis
    }

    /// Frequency lattice along one axis in increasing order.
    pub fn xi_points(&self) -> Vec<f64> {
        let half = (self.n / 2) as i64;
        (-half..half).map(|m| m as f64 * self.xi_spacing()).collect()
    }

    /// Frequency of FFT index `j` along one axis.
    pub fn xi_of_index(&self, j: usize) -> f64 {
        let m = if j < self.n / 2 { j as i64 } else { j as i64 - self.n as i64 };
        m as f64 * self.xi_spacing()
    }

    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.half_length == other.half_length
    }

    pub(crate) fn multi_index(&self, p: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rest = p;
        for a in (0..self.dim).rev() {
            idx[a] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    /// Coordinates of lattice point `p`; trailing entries beyond `d` are zero.
    pub fn position(&self, p: usize) -> [f64; 3] {
        let idx = self.multi_index(p);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.x_axis[idx[a]];
        }
        x
    }

    /// Frequency vector of FFT-ordered point `p`.
    pub fn frequency(&self, p: usize) -> [f64; 3] {
        let idx = self.multi_index(p);
        let mut xi = [0.0; 3];
        for a in 0..self.dim {
            xi[a] = self.xi_of_index(idx[a]);
        }
        xi
    }

    pub fn radius(&self, p: usize) -> f64 {
        norm3(&self.position(p))
    }

    pub fn frequency_radius(&self, p: usize) -> f64 {
        norm3(&self.frequency(p))
    }

    /// `⟨L⟩^{-r}`, the weight that the torus truncates at the box edge.
    pub fn boundary_leakage(&self, r: f64) -> f64 {
        (1.0 + self.half_length * self.half_length).powf(-0.5 * r)
    }

    /// Returns the leakage when it exceeds `threshold`, logging a warning.
    pub fn leakage_warning(&self, r: f64, threshold: f64) -> Option<f64> {
        let leak = self.boundary_leakage(r);
        if leak > threshold {
            log::warn!("boundary leakage <L>^-{r} = {leak:.3e} exceeds {threshold:.1e} (L = {})", self.half_length);
            Some(leak)
        } else {
            None
        }
    }

    /// In-place unitary forward DFT of a field with `values.len() / nᵈ` components per point.
    pub fn fourier_forward(&self, values: &mut [Complex64]) {
        self.transform(values, false);
    }

    /// In-place unitary inverse DFT, the exact inverse of [`Grid::fourier_forward`].
    pub fn fourier_inverse(&self, values: &mut [Complex64]) {
        self.transform(values, true);
    }

    fn transform(&self, values: &mut [Complex64], inverse: bool) {
        let np = self.num_points();
        assert_eq!(values.len() % np, 0, "field length is not a multiple of the point count");
        let k = values.len() / np;
        let plan = if inverse { &self.ifft } else { &self.fft };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::new(0.0, 0.0); self.n];
        let mut component = vec![Complex64::new(0.0, 0.0); np];
        let norm = 1.0 / (np as f64).sqrt();
        for c in 0..k {
            for p in 0..np {
                component[p] = values[p * k + c];
            }
            for axis in 0..self.dim {
                let stride = self.n.pow((self.dim - 1 - axis) as u32);
                if stride == 1 {
                    for chunk in component.chunks_exact_mut(self.n) {
                        plan.process_with_scratch(chunk, &mut scratch);
                    }
                    continue;
                }
                let block = self.n * stride;
                for outer in 0..np / block {
                    for inner in 0..stride {
                        let base = outer * block + inner;
                        for (i, slot) in line.iter_mut().enumerate() {
                            *slot = component[base + i * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (i, v) in line.iter().enumerate() {
                            component[base + i * stride] = *v;
                        }
                    }
                }
            }
            for p in 0..np {
                values[p * k + c] = component[p] * norm;
            }
        }
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Japanese bracket `⟨v⟩^{-r} = (1+|v|²)^{-r/2}`.
pub fn bracket_pow(radius: f64, r: f64) -> f64 {
    (1.0 + radius * radius).powf(-0.5 * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightDomain {
    Spatial,
    Frequency,
}

/// Pointwise weight `⟨·⟩^{-r}` on the spatial lattice or (FFT-ordered) frequency lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub domain: WeightDomain,
    pub exponent: f64,
    pub values: Vec<f64>,
}

impl WeightField {
    pub fn new(grid: &Grid, domain: WeightDomain, r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Domain(format!("weight exponent must be nonnegative (got {r})")));
        }
        let values = (0..grid.num_points())
            .map(|p| {
                let rad = match domain {
                    WeightDomain::Spatial => grid.radius(p),
                    WeightDomain::Frequency => grid.frequency_radius(p),
                };
                bracket_pow(rad, r)
            })
            .collect();
        Ok(Self { domain, exponent: r, values })
    }

    /// Pointwise product; exponents add.
    pub fn product(&self, other: &WeightField) -> Result<WeightField> {
        if self.domain != other.domain || self.values.len() != other.values.len() {
            return Err(Error::Shape("weight fields live on different lattices".into()));
        }
        Ok(WeightField {
            domain: self.domain,
            exponent: self.exponent + other.exponent,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }
}

/// Convenience wrapper matching [`WeightField::new`].
pub fn weight_field(grid: &Grid, domain: WeightDomain, r: f64) -> Result<WeightField> {
    WeightField::new(grid, domain, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_dimensional_lattices() {
        let g = Grid::new(1, 4, PI, 1).unwrap();
        let x = g.x_points();
        let expected = [-PI, -PI / 2.0, 0.0, PI / 2.0];
        for (a, b) in x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(g.xi_points(), vec![-2.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let err = Grid::new(1, 5, 1.0, 1).unwrap_err();
        assert!(err.to_string().contains("n must be even"), "{err}");
        assert!(matches!(Grid::new(1, 8, 0.0, 1), Err(Error::Config { field, .. }) if field == "L"));
        assert!(matches!(Grid::new(4, 8, 1.0, 1), Err(Error::Config { field, .. }) if field == "d"));
        assert!(matches!(Grid::new(1, 2, 1.0, 1), Err(Error::Config { field, .. }) if field == "n"));
    }

    #[test]
    fn degree_of_freedom_count() {
        let g = Grid::new(2, 8, 10.0, 2).unwrap();
        assert_eq!(g.dof(), 128);
    }

    #[test]
    fn weight_examples() {
        let g = Grid::new(1, 8, 4.0, 1).unwrap();
        let w0 = weight_field(&g, WeightDomain::Spatial, 0.0).unwrap();
        assert!(w0.values.iter().all(|&v| v == 1.0));
        // x = -4 + j, so j = 5 is x = 1 and j = 4 is the origin
        let w2 = weight_field(&g, WeightDomain::Spatial, 2.0).unwrap();
        assert!((w2.values[5] - 0.5).abs() < 1e-15);
        let w1 = weight_field(&g, WeightDomain::Spatial, 1.0).unwrap();
        assert_eq!(w1.values[4], 1.0);
        assert!(weight_field(&g, WeightDomain::Frequency, -1.0).is_err());
    }

    #[test]
    fn refinement_keeps_coarse_sublattice() {
        let g = Grid::new(1, 16, 3.0, 1).unwrap();
        let f = g.refined();
        for (j, x) in g.x_points().iter().enumerate() {
            assert!((f.x_points()[2 * j] - x).abs() < 1e-14);
        }
    }

    #[test]
    fn leakage_is_recorded() {
        let g = Grid::new(1, 16, 5.0, 1).unwrap();
        assert!(g.leakage_warning(1.0, DEFAULT_LEAKAGE_THRESHOLD).is_some());
        let big = Grid::new(1, 16, 5000.0, 1).unwrap();
        assert!(big.leakage_warning(1.0, DEFAULT_LEAKAGE_THRESHOLD).is_none());
    }
}
