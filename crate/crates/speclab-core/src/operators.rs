//! Hamiltonians, conjugate operators, commutators, conjugation weights and
//! spectral projectors.

use std::fmt;
use std::sync::{Arc, OnceLock};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_slices, Grid, ScalarField, StateVector};
use crate::linalg;
use crate::par;
use crate::C64;

/// Largest grid on which dense matrices are materialized.
pub const DENSE_LIMIT: usize = 4096;

type ApplyFn = dyn Fn(&[C64]) -> Vec<C64> + Send + Sync;

#[derive(Clone)]
enum Structure {
    Diagonal(Arc<Vec<C64>>),
    Multiplier(Arc<Vec<C64>>),
    Dense,
    General,
}

/// Linear operator on grid states: a matvec closure, a Hermitian flag and a
/// lazily materialized dense matrix.
///
/// Cloning shares the closure and the dense cache.
#[derive(Clone)]
pub struct OperatorRep {
    grid: Grid,
    hermitian: bool,
    label: Arc<str>,
    apply: Arc<ApplyFn>,
    structure: Structure,
    dense: Arc<OnceLock<Arc<Mat<C64>>>>,
}

impl fmt::Debug for OperatorRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorRep")
            .field("label", &self.label)
            .field("hermitian", &self.hermitian)
            .field("n", &self.grid.n())
            .finish()
    }
}

impl OperatorRep {
    /// Wrap a matvec closure.
    pub fn from_fn<F>(grid: &Grid, hermitian: bool, label: &str, f: F) -> Self
    where
        F: Fn(&[C64]) -> Vec<C64> + Send + Sync + 'static,
    {
        OperatorRep {
            grid: grid.clone(),
            hermitian,
            label: label.into(),
            apply: Arc::new(f),
            structure: Structure::General,
            dense: Arc::new(OnceLock::new()),
        }
    }

    /// Operator given by an explicit matrix.
    pub fn from_dense(grid: &Grid, hermitian: bool, label: &str, m: Mat<C64>) -> Result<Self> {
        let n = grid.n();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::invalid("matrix", format!("expected {n}×{n}")));
        }
        let m = Arc::new(m);
        let mm = m.clone();
        let mut op = Self::from_fn(grid, hermitian, label, move |f| linalg::matvec(&mm, f));
        op.structure = Structure::Dense;
        let _ = op.dense.set(m);
        Ok(op)
    }

    pub fn identity(grid: &Grid) -> Self {
        Self::diagonal(grid, "id", vec![C64::new(1.0, 0.0); grid.n()])
    }

    /// Pointwise multiplication by complex samples.
    pub fn diagonal(grid: &Grid, label: &str, d: Vec<C64>) -> Self {
        let hermitian = d.iter().all(|v| v.im == 0.0);
        let d = Arc::new(d);
        let dd = d.clone();
        let mut op = Self::from_fn(grid, hermitian, label, move |f| {
            f.iter().zip(dd.iter()).map(|(a, b)| a * b).collect()
        });
        op.structure = Structure::Diagonal(d);
        op
    }

    /// Pointwise multiplication by a real field.
    pub fn multiplication(field: &ScalarField, label: &str) -> Self {
        Self::diagonal(
            field.grid(),
            label,
            field.values().iter().map(|&v| C64::new(v, 0.0)).collect(),
        )
    }

    /// Position operator `q`.
    pub fn position(grid: &Grid) -> Self {
        Self::diagonal(
            grid,
            "q",
            grid.nodes().iter().map(|&x| C64::new(x, 0.0)).collect(),
        )
    }

    /// Fourier multiplier with the given samples in FFT order.
    pub fn multiplier_values(grid: &Grid, label: &str, symbol: Vec<C64>) -> Self {
        let hermitian = symbol.iter().all(|v| v.im == 0.0);
        let s = Arc::new(symbol);
        let ss = s.clone();
        let g = grid.clone();
        let mut op = Self::from_fn(grid, hermitian, label, move |f| {
            let mut buf = f.to_vec();
            g.multiply_in_place(&ss, &mut buf);
            buf
        });
        op.structure = Structure::Multiplier(s);
        op
    }

    /// Fourier multiplier `symbol(p)`.
    pub fn multiplier<F: Fn(f64) -> C64>(grid: &Grid, label: &str, symbol: F) -> Result<Self> {
        Ok(Self::multiplier_values(grid, label, grid.sample_symbol(symbol)?))
    }

    /// Real Fourier multiplier `symbol(p)`.
    pub fn real_multiplier<F: Fn(f64) -> f64>(grid: &Grid, label: &str, symbol: F) -> Result<Self> {
        Self::multiplier(grid, label, |xi| C64::new(symbol(xi), 0.0))
    }

    /// Momentum `p = −i d/dx`.
    pub fn momentum(grid: &Grid) -> Self {
        Self::multiplier_values(
            grid,
            "p",
            grid.frequencies().iter().map(|&xi| C64::new(xi, 0.0)).collect(),
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    /// Override the Hermitian flag (used when the flag is known analytically).
    pub fn with_hermitian(mut self, hermitian: bool) -> Self {
        self.hermitian = hermitian;
        self
    }

    /// Matvec on raw samples.
    pub fn apply_values(&self, f: &[C64]) -> Vec<C64> {
        (self.apply)(f)
    }

    pub fn apply(&self, f: &StateVector) -> Result<StateVector> {
        self.grid.check_same(f.grid())?;
        Ok(StateVector::from_vec_unchecked(
            &self.grid,
            (self.apply)(f.values()),
        ))
    }

    /// Dense matrix, computed once and cached.
    pub fn dense(&self) -> Result<Arc<Mat<C64>>> {
        let n = self.grid.n();
        if n > DENSE_LIMIT {
            return Err(Error::DenseUnavailable {
                n,
                limit: DENSE_LIMIT,
            });
        }
        Ok(self.dense.get_or_init(|| Arc::new(self.build_dense())).clone())
    }

    fn build_dense(&self) -> Mat<C64> {
        let n = self.grid.n();
        match &self.structure {
            Structure::Diagonal(d) => Mat::from_fn(n, n, |i, j| {
                if i == j {
                    d[i]
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
            Structure::Multiplier(s) => {
                let mut c = s.to_vec();
                self.grid.ifft(&mut c);
                Mat::from_fn(n, n, |i, j| c[(i + n - j) % n])
            }
            Structure::Dense | Structure::General => {
                let cols = par::map_range(n, |j| {
                    let mut e = vec![C64::new(0.0, 0.0); n];
                    e[j] = C64::new(1.0, 0.0);
                    (self.apply)(&e)
                });
                Mat::from_fn(n, n, |i, j| cols[j][i])
            }
        }
    }

    /// `c · self`.
    pub fn scale(&self, c: C64) -> Self {
        let a = self.clone();
        let hermitian = self.hermitian && c.im == 0.0;
        let label = format!("({})·{}", c, self.label);
        Self::from_fn(&self.grid, hermitian, &label, move |f| {
            a.apply_values(f).into_iter().map(|v| v * c).collect()
        })
    }

    /// `self + other`.
    pub fn add(&self, other: &OperatorRep) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let a = self.clone();
        let b = other.clone();
        let label = format!("{} + {}", self.label, other.label);
        Ok(Self::from_fn(
            &self.grid,
            self.hermitian && other.hermitian,
            &label,
            move |f| {
                let mut x = a.apply_values(f);
                for (u, v) in x.iter_mut().zip(b.apply_values(f)) {
                    *u += v;
                }
                x
            },
        ))
    }

    /// `self − other`.
    pub fn sub(&self, other: &OperatorRep) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &OperatorRep) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let a = self.clone();
        let b = other.clone();
        let label = format!("{}·{}", self.label, other.label);
        Ok(Self::from_fn(&self.grid, false, &label, move |f| {
            a.apply_values(&b.apply_values(f))
        }))
    }

    /// Estimate of the operator norm by power iteration on `A*A` through the
    /// dense matrix when available, otherwise through matvecs with the
    /// adjoint approximated by the Hermitian flag.
    pub fn norm_estimate(&self) -> Result<f64> {
        if self.grid.n() <= DENSE_LIMIT {
            let m = self.dense()?;
            return Ok(linalg::spectral_norm(&m));
        }
        if !self.hermitian {
            return Err(Error::DenseUnavailable {
                n: self.grid.n(),
                limit: DENSE_LIMIT,
            });
        }
        let n = self.grid.n();
        let mut v: Vec<C64> = (0..n)
            .map(|j| C64::new(((j * 7919) % 997) as f64 / 997.0 - 0.5, 0.0))
            .collect();
        let mut est = 0.0;
        for _ in 0..200 {
            let w = self.apply_values(&v);
            let nw = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if nw == 0.0 {
                return Ok(0.0);
            }
            let new = nw / nv;
            v = w.into_iter().map(|x| x / nw).collect();
            if (new - est).abs() < 1e-10 * new {
                return Ok(new);
            }
            est = new;
        }
        Ok(est)
    }

    /// Relative Hermiticity defect `|⟨g,Af⟩ − conj⟨f,Ag⟩| / (‖A‖‖f‖‖g‖)`.
    pub fn hermiticity_defect(&self, f: &StateVector, g: &StateVector, norm: f64) -> Result<f64> {
        let af = self.apply(f)?;
        let ag = self.apply(g)?;
        let h = self.grid.spacing();
        let lhs = inner_slices(h, g.values(), af.values());
        let rhs = inner_slices(h, f.values(), ag.values()).conj();
        Ok((lhs - rhs).norm() / (norm * f.norm() * g.norm()).max(1e-300))
    }
}

/// `p² + V`.
pub fn build_hamiltonian(v: &ScalarField, grid: &Grid) -> Result<OperatorRep> {
    grid.check_same(v.grid())?;
    let kin: Vec<f64> = grid.frequencies().iter().map(|xi| xi * xi).collect();
    let pot = v.values().to_vec();
    let g = grid.clone();
    let op = OperatorRep::from_fn(grid, true, "H", move |f| {
        let mut buf = f.to_vec();
        g.multiply_real_in_place(&kin, &mut buf);
        for ((b, x), v) in buf.iter_mut().zip(f).zip(&pot) {
            *b += x * v;
        }
        buf
    });
    Ok(op)
}

/// Free Laplacian `p²`.
pub fn laplacian(grid: &Grid) -> OperatorRep {
    OperatorRep::multiplier_values(
        grid,
        "Δ",
        grid.frequencies().iter().map(|&xi| C64::new(xi * xi, 0.0)).collect(),
    )
}

/// Shape function `λ` of the conjugate operator `A_u`, `u(ξ) = ξλ(ξ)`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ConjugateSpec {
    /// `λ ≡ 1`: the generator of dilations.
    Dilation,
    /// `λ(ξ) = ⟨ξ⟩^{-1}`.
    BoundedStandard,
    /// `λ(ξ) = scale · ⟨ξ⟩^{exponent}` with `exponent ≤ 0`.
    Custom { scale: f64, exponent: f64 },
    /// Arbitrary `λ` given by `ξ ↦ (λ(ξ), λ'(ξ))`; checked numerically only.
    #[serde(skip)]
    Symbol(Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for ConjugateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConjugateSpec::Dilation => write!(f, "Dilation"),
            ConjugateSpec::BoundedStandard => write!(f, "BoundedStandard"),
            ConjugateSpec::Custom { scale, exponent } => {
                write!(f, "Custom {{ scale: {scale}, exponent: {exponent} }}")
            }
            ConjugateSpec::Symbol(_) => write!(f, "Symbol(..)"),
        }
    }
}

impl ConjugateSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ConjugateSpec::Dilation => "dilation",
            ConjugateSpec::BoundedStandard => "bounded_standard",
            ConjugateSpec::Custom { .. } => "custom",
            ConjugateSpec::Symbol(_) => "symbol",
        }
    }

    /// `(λ(ξ), λ'(ξ))`.
    pub fn lambda(&self, xi: f64) -> (f64, f64) {
        match self {
            ConjugateSpec::Dilation => (1.0, 0.0),
            ConjugateSpec::BoundedStandard => {
                let j2 = 1.0 + xi * xi;
                let j = j2.sqrt();
                (1.0 / j, -xi / (j2 * j))
            }
            ConjugateSpec::Custom { scale, exponent } => {
                let j2 = 1.0 + xi * xi;
                let v = scale * j2.powf(0.5 * exponent);
                (v, v * exponent * xi / j2)
            }
            ConjugateSpec::Symbol(f) => f(xi),
        }
    }

    /// True when `λ` is constant, so the `∇λ` terms vanish identically.
    pub fn is_constant(&self) -> bool {
        matches!(self, ConjugateSpec::Dilation)
            || matches!(self, ConjugateSpec::Custom { exponent, .. } if *exponent == 0.0)
    }

    /// Check positivity and finiteness of `λ` on the grid frequencies.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if let ConjugateSpec::Custom { scale, exponent } = self {
            if !(*scale > 0.0 && scale.is_finite()) {
                return Err(Error::invalid("conjugate.scale", "must be positive"));
            }
            if !(*exponent <= 0.0) {
                return Err(Error::invalid(
                    "conjugate.exponent",
                    "must be ≤ 0 so that λ stays bounded",
                ));
            }
        }
        let mut max: f64 = 0.0;
        for &xi in grid.frequencies() {
            let (l, dl) = self.lambda(xi);
            if !(l.is_finite() && dl.is_finite()) {
                return Err(Error::invalid("conjugate.lambda", format!("non-finite at ξ = {xi}")));
            }
            if l <= 0.0 {
                return Err(Error::invalid("conjugate.lambda", format!("λ({xi}) = {l} ≤ 0")));
            }
            max = max.max(l);
        }
        if max > 1e12 {
            return Err(Error::invalid("conjugate.lambda", "unbounded on the grid frequencies"));
        }
        Ok(())
    }

    /// `u(ξ) = ξλ(ξ)` on the grid.
    pub fn u_symbol(&self, grid: &Grid) -> Vec<f64> {
        grid.frequencies().iter().map(|&xi| xi * self.lambda(xi).0).collect()
    }

    /// `(div u)(ξ) = λ(ξ) + ξλ'(ξ)` on the grid.
    pub fn div_u_symbol(&self, grid: &Grid) -> Vec<f64> {
        grid.frequencies()
            .iter()
            .map(|&xi| {
                let (l, dl) = self.lambda(xi);
                l + xi * dl
            })
            .collect()
    }
}

/// `A_u = ½(q·u(p) + u(p)·q)`; Hermitian by construction.
pub fn build_conjugate(spec: &ConjugateSpec, grid: &Grid) -> Result<OperatorRep> {
    spec.validate(grid)?;
    let u = spec.u_symbol(grid);
    let x = grid.nodes().to_vec();
    let g = grid.clone();
    let label = format!("A[{}]", spec.name());
    Ok(OperatorRep::from_fn(grid, true, &label, move |f| {
        let mut uf = f.to_vec();
        g.multiply_real_in_place(&u, &mut uf);
        let mut uqf: Vec<C64> = f.iter().zip(&x).map(|(v, x)| v * *x).collect();
        g.multiply_real_in_place(&u, &mut uqf);
        uf.iter()
            .zip(&uqf)
            .zip(&x)
            .map(|((a, b), x)| 0.5 * (a * *x + b))
            .collect()
    }))
}

/// `λ(p)·A_D + (i/2)·λ'(p)·p`, the decomposition of `A_u` through the dilation generator.
pub fn conjugate_via_dilation(spec: &ConjugateSpec, grid: &Grid) -> Result<OperatorRep> {
    spec.validate(grid)?;
    let ad = build_conjugate(&ConjugateSpec::Dilation, grid)?;
    let lam = OperatorRep::real_multiplier(grid, "λ(p)", |xi| spec.lambda(xi).0)?;
    let dlp = OperatorRep::multiplier(grid, "(i/2)λ'(p)p", |xi| {
        C64::new(0.0, 0.5 * spec.lambda(xi).1 * xi)
    })?;
    Ok(lam.compose(&ad)?.add(&dlp)?.with_hermitian(true))
}

/// `2p·u(p)`, the commutator of the Laplacian with `iA_u` on the whole line.
pub fn free_commutator_symbol(spec: &ConjugateSpec, grid: &Grid) -> Result<OperatorRep> {
    spec.validate(grid)?;
    Ok(OperatorRep::real_multiplier(grid, "2p·u(p)", |xi| {
        2.0 * xi * xi * spec.lambda(xi).0
    })?)
}

/// `[A, B] = AB − BA`, times `i` when `scale_i`.
pub fn commutator(a: &OperatorRep, b: &OperatorRep, scale_i: bool) -> Result<OperatorRep> {
    a.grid().check_same(b.grid())?;
    let aa = a.clone();
    let bb = b.clone();
    let hermitian = a.is_hermitian() && b.is_hermitian() && scale_i;
    let label = if scale_i {
        format!("[{}, i{}]", a.label(), b.label())
    } else {
        format!("[{}, {}]", a.label(), b.label())
    };
    Ok(OperatorRep::from_fn(a.grid(), hermitian, &label, move |f| {
        let ab = aa.apply_values(&bb.apply_values(f));
        let ba = bb.apply_values(&aa.apply_values(f));
        ab.into_iter()
            .zip(ba)
            .map(|(x, y)| if scale_i { C64::new(0.0, 1.0) * (x - y) } else { x - y })
            .collect()
    }))
}

/// Conjugation weight family `F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    /// `F = τ ln(⟨x⟩ / (1 + ε⟨x⟩))`.
    LogType { tau: f64, epsilon: f64 },
    /// `F = α⟨x⟩^β + τ ln(1 + γ⟨x⟩^β / τ)`; `τ = 0` is allowed only with `γ = 0`.
    Subexp {
        alpha: f64,
        beta: f64,
        tau: f64,
        gamma: f64,
    },
}

impl WeightSpec {
    /// Pure sub-exponential weight `α⟨x⟩^β`.
    pub fn pure(alpha: f64, beta: f64) -> Self {
        WeightSpec::Subexp {
            alpha,
            beta,
            tau: 0.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightSpec::LogType { tau, epsilon } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(Error::invalid("weight.tau", "must be positive"));
                }
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid("weight.epsilon", "must be positive"));
                }
            }
            WeightSpec::Subexp {
                alpha,
                beta,
                tau,
                gamma,
            } => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::invalid("weight.alpha", "must be ≥ 0"));
                }
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::invalid("weight.beta", "must lie in (0, 1)"));
                }
                if !(gamma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::invalid("weight.gamma", "must be ≥ 0"));
                }
                if !(tau >= 0.0 && tau.is_finite()) || (tau == 0.0 && gamma != 0.0) {
                    return Err(Error::invalid(
                        "weight.tau",
                        "must be positive (zero only together with γ = 0)",
                    ));
                }
            }
        }
        Ok(())
    }

    /// `(F, F', g, F'')` at `x`, where `F' = x·g`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64, f64) {
        let r2 = 1.0 + x * x;
        let r = r2.sqrt();
        match *self {
            WeightSpec::LogType { tau, epsilon } => {
                let d = 1.0 + epsilon * r;
                let f = tau * (r / d).ln();
                let g = tau / (r2 * d);
                let gp = -tau * x * (2.0 + 3.0 * epsilon * r) / (r2 * r2 * d * d);
                (f, x * g, g, g + x * gp)
            }
            WeightSpec::Subexp {
                alpha,
                beta,
                tau,
                gamma,
            } => {
                let s = r.powf(beta);
                let ds = beta * x * r.powf(beta - 2.0);
                let d2s = beta * r.powf(beta - 2.0)
                    + beta * (beta - 2.0) * x * x * r.powf(beta - 4.0);
                let (log_part, c, dc_ds) = if gamma == 0.0 {
                    (0.0, 0.0, 0.0)
                } else {
                    let q = 1.0 + gamma * s / tau;
                    (tau * q.ln(), gamma / q, -gamma * gamma / (tau * q * q))
                };
                let f = alpha * s + log_part;
                let fp = ds * (alpha + c);
                let fpp = d2s * (alpha + c) + ds * ds * dc_ds;
                let g = beta * r.powf(beta - 2.0) * (alpha + c);
                (f, fp, g, fpp)
            }
        }
    }

    /// True when `F ≡ 0`.
    pub fn is_trivial(&self) -> bool {
        match *self {
            WeightSpec::LogType { .. } => false,
            WeightSpec::Subexp { alpha, gamma, .. } => alpha == 0.0 && gamma == 0.0,
        }
    }
}

/// Sampled weight `F`, its gradient `F' = x·g`, `g`, and the second derivative `F''`.
#[derive(Clone, Debug)]
pub struct WeightFields {
    pub f: ScalarField,
    pub grad: ScalarField,
    pub g: ScalarField,
    pub lapl: ScalarField,
}

/// Sample the weight family from its closed-form derivatives.
pub fn weight_field(spec: &WeightSpec, grid: &Grid) -> Result<WeightFields> {
    spec.validate()?;
    let vals: Vec<(f64, f64, f64, f64)> = grid.nodes().iter().map(|&x| spec.eval(x)).collect();
    Ok(WeightFields {
        f: ScalarField::new(grid, vals.iter().map(|v| v.0).collect())?,
        grad: ScalarField::new(grid, vals.iter().map(|v| v.1).collect())?,
        g: ScalarField::new(grid, vals.iter().map(|v| v.2).collect())?,
        lapl: ScalarField::new(grid, vals.iter().map(|v| v.3).collect())?,
    })
}

/// Largest exponent accepted in `e^{±F}` before reporting overflow.
pub const EXP_LIMIT: f64 = 700.0;

/// Reject weights whose exponential overflows at some node.
pub fn check_weight_overflow(w: &WeightFields) -> Result<()> {
    let grid = w.f.grid();
    for (j, (&v, &x)) in w.f.values().iter().zip(grid.nodes()).enumerate() {
        if v.abs() > EXP_LIMIT {
            return Err(Error::Overflow {
                node: j,
                x,
                value: v,
            });
        }
    }
    Ok(())
}

/// `H(F) = H − (F')² + i(p·F' + F'·p)`, built from the closed form.
pub fn conjugated_hamiltonian(
    h: &OperatorRep,
    spec: &WeightSpec,
    grid: &Grid,
) -> Result<OperatorRep> {
    grid.check_same(h.grid())?;
    let w = weight_field(spec, grid)?;
    check_weight_overflow(&w)?;
    let grad = w.grad.values().to_vec();
    let p: Vec<f64> = grid.frequencies().to_vec();
    let hh = h.clone();
    let g = grid.clone();
    Ok(OperatorRep::from_fn(grid, false, "H(F)", move |f| {
        let mut out = hh.apply_values(f);
        let mut pf = f.to_vec();
        g.multiply_real_in_place(&p, &mut pf);
        let mut pgf: Vec<C64> = f.iter().zip(&grad).map(|(v, d)| v * *d).collect();
        g.multiply_real_in_place(&p, &mut pgf);
        let i = C64::new(0.0, 1.0);
        for j in 0..out.len() {
            out[j] += -f[j] * (grad[j] * grad[j]) + i * (pgf[j] + pf[j] * grad[j]);
        }
        out
    }))
}

/// `e^{F} H e^{−F}` as an explicit similarity product (cross-check only).
pub fn similarity_conjugate(h: &OperatorRep, spec: &WeightSpec, grid: &Grid) -> Result<OperatorRep> {
    grid.check_same(h.grid())?;
    let w = weight_field(spec, grid)?;
    check_weight_overflow(&w)?;
    let ef: Vec<f64> = w.f.values().iter().map(|v| v.exp()).collect();
    let hh = h.clone();
    Ok(OperatorRep::from_fn(grid, false, "e^F H e^-F", move |f| {
        let scaled: Vec<C64> = f.iter().zip(&ef).map(|(v, e)| v / *e).collect();
        hh.apply_values(&scaled)
            .into_iter()
            .zip(&ef)
            .map(|(v, e)| v * *e)
            .collect()
    }))
}

/// Relative tolerance for eigenvalues on the endpoints of a closed interval.
const ENDPOINT_SLACK: f64 = 1e-12;

/// Spectral projector `E(I)` of a Hermitian operator on `[lo, hi]`.
pub fn spectral_projector(h: &OperatorRep, lo: f64, hi: f64) -> Result<OperatorRep> {
    if !h.is_hermitian() {
        return Err(Error::invalid("operator", "spectral projector needs a Hermitian operator"));
    }
    let m = h.dense()?;
    let eig = linalg::hermitian_eigen(&m, None)?;
    let scale = eig.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let slack = ENDPOINT_SLACK * scale;
    let cols: Vec<usize> = (0..eig.values.len())
        .filter(|&k| eig.values[k] >= lo - slack && eig.values[k] <= hi + slack)
        .collect();
    let n = h.grid().n();
    let basis = Mat::from_fn(n, cols.len(), |i, j| eig.vectors[(i, cols[j])]);
    let basis = Arc::new(basis);
    let b = basis.clone();
    let rank = cols.len();
    let label = format!("E[{lo}, {hi}]");
    Ok(OperatorRep::from_fn(h.grid(), true, &label, move |f| {
        let coeff: Vec<C64> = (0..rank)
            .map(|k| (0..n).map(|i| b[(i, k)].conj() * f[i]).sum())
            .collect();
        (0..n)
            .map(|i| (0..rank).map(|k| b[(i, k)] * coeff[k]).sum())
            .collect()
    }))
}
