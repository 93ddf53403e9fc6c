//! Periodic one-dimensional grid, sampled states and Fourier multipliers.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::C64;

struct GridData {
    half_length: f64,
    n: usize,
    spacing: f64,
    nodes: Vec<f64>,
    frequencies: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Equispaced periodic grid on `[-L, L)` with `n` nodes.
///
/// Cloning is cheap; all arrays are shared and immutable.
#[derive(Clone)]
pub struct Grid {
    data: Arc<GridData>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("half_length", &self.data.half_length)
            .field("n", &self.data.n)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.same(other)
    }
}

impl Grid {
    /// Build the grid; `n` must be even and at least 8.
    pub fn new(half_length: f64, n: usize) -> Result<Grid> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::invalid("half_length", "must be a positive finite number"));
        }
        if n < 8 {
            return Err(Error::invalid("n", format!("need at least 8 nodes, got {n}")));
        }
        if n % 2 != 0 {
            return Err(Error::invalid("n", format!("node count must be even, got {n}")));
        }
        let spacing = 2.0 * half_length / n as f64;
        let nodes = (0..n).map(|j| -half_length + j as f64 * spacing).collect();
        let dk = PI / half_length;
        let frequencies = (0..n)
            .map(|k| {
                let m = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
                m * dk
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Grid {
            data: Arc::new(GridData {
                half_length,
                n,
                spacing,
                nodes,
                frequencies,
                forward,
                inverse,
            }),
        })
    }

    pub fn half_length(&self) -> f64 {
        self.data.half_length
    }

    pub fn n(&self) -> usize {
        self.data.n
    }

    pub fn spacing(&self) -> f64 {
        self.data.spacing
    }

    pub fn nodes(&self) -> &[f64] {
        &self.data.nodes
    }

    /// Angular frequencies in FFT order; index `n/2` holds the Nyquist mode `-πn/(2L)`.
    pub fn frequencies(&self) -> &[f64] {
        &self.data.frequencies
    }

    /// Largest resolved momentum `πn/(2L)`.
    pub fn nyquist(&self) -> f64 {
        PI * self.data.n as f64 / (2.0 * self.data.half_length)
    }

    /// Index of the node nearest to `x = 0` mirrored through the origin.
    pub fn mirror(&self, j: usize) -> usize {
        (self.data.n - j) % self.data.n
    }

    /// Same geometry (pointer-equal or identical `L` and `n`).
    pub fn same(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
            || (self.data.n == other.data.n && self.data.half_length == other.data.half_length)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Unnormalized forward DFT in place.
    pub fn fft(&self, buf: &mut [C64]) {
        self.data.forward.process(buf);
    }

    /// Inverse DFT in place, including the `1/n` factor.
    pub fn ifft(&self, buf: &mut [C64]) {
        self.data.inverse.process(buf);
        let s = 1.0 / self.data.n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Multiply by `symbol[k]` in Fourier space, in place.
    pub fn multiply_in_place(&self, symbol: &[C64], buf: &mut [C64]) {
        self.fft(buf);
        for (v, s) in buf.iter_mut().zip(symbol) {
            *v *= s;
        }
        self.ifft(buf);
    }

    /// Same as [`Grid::multiply_in_place`] with a real symbol.
    pub fn multiply_real_in_place(&self, symbol: &[f64], buf: &mut [C64]) {
        self.fft(buf);
        for (v, s) in buf.iter_mut().zip(symbol) {
            *v *= *s;
        }
        self.ifft(buf);
    }

    /// Evaluate a symbol on the grid frequencies, rejecting non-finite values.
    pub fn sample_symbol<F: Fn(f64) -> C64>(&self, symbol: F) -> Result<Vec<C64>> {
        self.frequencies()
            .iter()
            .map(|&xi| {
                let v = symbol(xi);
                if v.re.is_finite() && v.im.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::invalid("symbol", format!("non-finite value at frequency {xi}")))
                }
            })
            .collect()
    }

    /// Spectral derivative of a real periodic sample.
    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let mut buf: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
        let n = self.n();
        self.fft(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            // The Nyquist mode has no odd counterpart; drop it for a real result.
            let xi = if k == n / 2 { 0.0 } else { self.frequencies()[k] };
            *v *= C64::new(0.0, xi);
        }
        self.ifft(&mut buf);
        buf.iter().map(|v| v.re).collect()
    }

    /// Fourier coefficients approximating the continuous transform
    /// `(2π)^{-1/2} ∫ f(x) e^{-iξx} dx`, so that `‖f‖² = Δξ Σ|f̂_k|²`.
    pub fn transform(&self, f: &StateVector) -> Result<Vec<C64>> {
        self.check_same(&f.grid)?;
        let mut buf = f.values.clone();
        self.fft(&mut buf);
        let s = self.spacing() / (2.0 * PI).sqrt();
        let phase0 = -self.half_length();
        for (k, v) in buf.iter_mut().enumerate() {
            let xi = self.frequencies()[k];
            *v *= C64::from_polar(s, -xi * phase0);
        }
        Ok(buf)
    }

    /// Norm of transform coefficients with the matching measure `Δξ = π/L`.
    pub fn transform_norm(&self, coeffs: &[C64]) -> f64 {
        let dk = PI / self.half_length();
        (dk * coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }
}

/// Complex samples of a wavefunction on a grid.
#[derive(Clone, Debug)]
pub struct StateVector {
    grid: Grid,
    values: Vec<C64>,
}

impl StateVector {
    pub fn new(grid: &Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::invalid(
                "values",
                format!("expected {} samples, got {}", grid.n(), values.len()),
            ));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::invalid("values", "non-finite sample"));
        }
        Ok(StateVector {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &Grid, values: Vec<C64>) -> Self {
        StateVector {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::from_vec_unchecked(grid, vec![C64::new(0.0, 0.0); grid.n()])
    }

    pub fn from_fn<F: Fn(f64) -> C64>(grid: &Grid, f: F) -> Self {
        let v = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::from_vec_unchecked(grid, v)
    }

    pub fn from_real(grid: &Grid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    /// `sqrt(h Σ|f_j|²)`.
    pub fn norm(&self) -> f64 {
        (self.grid.spacing() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `h Σ|f_j|` (discrete L¹ norm).
    pub fn norm_l1(&self) -> f64 {
        self.grid.spacing() * self.values.iter().map(|v| v.norm()).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self::from_vec_unchecked(&self.grid, self.values.iter().map(|v| v * c).collect())
    }

    /// Return a copy with unit L² norm (zero states are returned unchanged).
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self.clone()
        } else {
            self.scaled(C64::new(1.0 / n, 0.0))
        }
    }

    /// `self - other`.
    pub fn sub(&self, other: &StateVector) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_vec_unchecked(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: C64, other: &StateVector) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_vec_unchecked(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect(),
        ))
    }

    /// Pointwise product with a real field.
    pub fn mul_field(&self, field: &ScalarField) -> Result<Self> {
        self.grid.check_same(&field.grid)?;
        Ok(Self::from_vec_unchecked(
            &self.grid,
            self.values.iter().zip(&field.values).map(|(a, b)| a * *b).collect(),
        ))
    }

    /// Fraction of `‖f‖²` carried by nodes with `|x| < radius`.
    pub fn mass_fraction_inside(&self, radius: f64) -> f64 {
        let total: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let inside: f64 = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .filter(|(x, _)| x.abs() < radius)
            .map(|(_, v)| v.norm_sqr())
            .sum();
        inside / total
    }
}

/// Real samples of a function on a grid (potentials, weights, cutoffs).
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::invalid(
                "values",
                format!("expected {} samples, got {}", grid.n(), values.len()),
            ));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("non-finite sample at node {j}")));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.n()],
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &Grid, f: F) -> Result<Self> {
        Self::new(grid, grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True when `f(-x) = f(x)` on the grid up to `tol·max|f|`.
    pub fn is_even(&self, tol: f64) -> bool {
        let scale = self.max_abs().max(1e-300);
        (0..self.grid.n()).all(|j| {
            (self.values[j] - self.values[self.grid.mirror(j)]).abs() <= tol * scale
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Self::new(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Discrete L² pairing `h Σ conj(f_j) g_j`.
pub fn inner(f: &StateVector, g: &StateVector) -> Result<C64> {
    f.grid.check_same(&g.grid)?;
    Ok(inner_slices(f.grid.spacing(), &f.values, &g.values))
}

pub(crate) fn inner_slices(h: f64, f: &[C64], g: &[C64]) -> C64 {
    let s: C64 = f.iter().zip(g).map(|(a, b)| a.conj() * b).sum();
    s * h
}

/// Apply the Fourier multiplier `symbol(p)` to `f`.
pub fn apply_multiplier<F: Fn(f64) -> C64>(symbol: F, f: &StateVector) -> Result<StateVector> {
    let sym = f.grid.sample_symbol(symbol)?;
    let mut buf = f.values.clone();
    f.grid.multiply_in_place(&sym, &mut buf);
    Ok(StateVector::from_vec_unchecked(&f.grid, buf))
}

/// Apply a real Fourier multiplier.
pub fn apply_real_multiplier<F: Fn(f64) -> f64>(symbol: F, f: &StateVector) -> Result<StateVector> {
    apply_multiplier(|xi| C64::new(symbol(xi), 0.0), f)
}
