// SPDX-License-Identifier: Apache-2.0

//! Grid fields: `k` complex components per lattice point, point-major.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    fiber: usize,
    values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self { fiber: grid.fiber(), values: vec![Complex64::new(0.0, 0.0); grid.dof()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.dof() {
            return Err(Error::Shape(format!("field has {} entries, grid expects {}", values.len(), grid.dof())));
        }
        Ok(Self { fiber: grid.fiber(), values })
    }

    /// Samples `f(x)` at every lattice point; `f` returns the `k` components.
    pub fn from_fn<F>(grid: &Grid, mut f: F) -> Self
    where
        F: FnMut(&[f64]) -> Vec<Complex64>,
    {
        let k = grid.fiber();
        let mut values = Vec::with_capacity(grid.dof());
        for p in 0..grid.num_points() {
            let x = grid.position(p);
            let v = f(&x[..grid.dim()]);
            assert_eq!(v.len(), k, "sampler returned the wrong number of components");
            values.extend(v);
        }
        Self { fiber: k, values }
    }

    /// Scalar sampler placed in component `component`, zero elsewhere.
    pub fn from_scalar_fn<F>(grid: &Grid, component: usize, mut f: F) -> Self
    where
        F: FnMut(&[f64]) -> Complex64,
    {
        let k = grid.fiber();
        assert!(component < k);
        Self::from_fn(grid, |x| {
            let mut v = vec![Complex64::new(0.0, 0.0); k];
            v[component] = f(x);
            v
        })
    }

    /// Standard complex Gaussian entries, `E|f_j|² = 1`.
    pub fn random<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let values = (0..grid.dof())
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(s * re, s * im)
            })
            .collect();
        Self { fiber: grid.fiber(), values }
    }

    /// Unit vector at flat index `j`.
    pub fn basis(grid: &Grid, j: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[j] = Complex64::new(1.0, 0.0);
        f
    }

    pub fn fiber(&self) -> usize {
        self.fiber
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Components at lattice point `p`.
    pub fn at(&self, p: usize) -> &[Complex64] {
        &self.values[p * self.fiber..(p + 1) * self.fiber]
    }

    pub fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.fiber != other.fiber || self.values.len() != other.values.len() {
            return Err(Error::Shape(format!(
                "fields differ in shape ({}x{} vs {}x{})",
                self.values.len() / self.fiber.max(1),
                self.fiber,
                other.values.len() / other.fiber.max(1),
                other.fiber
            )));
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.fiber != grid.fiber() || self.values.len() != grid.dof() {
            return Err(Error::Shape(format!(
                "field with {} entries (k = {}) does not live on a grid with {} dof (k = {})",
                self.values.len(),
                self.fiber,
                grid.dof(),
                grid.fiber()
            )));
        }
        Ok(())
    }

    /// Plain sum `Σ f_j conj(g_j)` without quadrature weight.
    pub fn dot(&self, other: &Field) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn norm_sqr_plain(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// L² norm with quadrature weight `hᵈ`.
    pub fn norm(&self, grid: &Grid) -> f64 {
        (self.norm_sqr_plain() * grid.cell_volume()).sqrt()
    }

    /// L² inner product `Σ ⟨f(x), g(x)⟩ hᵈ`, linear in `self`.
    pub fn inner(&self, other: &Field, grid: &Grid) -> Complex64 {
        self.dot(other) * grid.cell_volume()
    }

    pub fn scale(&mut self, a: Complex64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: Complex64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a·x`.
    pub fn axpy(&mut self, a: Complex64, x: &Field) {
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(Complex64::new(1.0, 0.0), other);
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    /// Multiplies every component at point `p` by `w[p]`.
    pub fn weighted(&self, w: &[f64]) -> Field {
        let k = self.fiber;
        let mut out = self.clone();
        for (p, chunk) in out.values.chunks_exact_mut(k).enumerate() {
            for v in chunk {
                *v *= w[p];
            }
        }
        out
    }
}
