//! Helffer–Sjöstrand functional calculus: symbol classes and seminorms,
//! almost-analytic extensions, quadrature evaluation of `φ(B)`, the
//! commutator expansion and its weighted remainder.

use std::fmt;
use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::OperatorRep;
use crate::par;
use crate::grid::Grid;
use crate::potentials;
use crate::C64;

/// Default half-width of the seminorm sample.
pub const SEMINORM_RADIUS: f64 = 1e3;

#[derive(Clone)]
enum Kind {
    /// `⟨t⟩^a`.
    Japanese { exponent: f64 },
    /// `e^{−t²}`.
    Gaussian,
    Constant { value: f64 },
    /// `(4(t−lo)(hi−t)/(hi−lo)²)^power` on `(lo, hi)`, zero outside.
    PolyBump { lo: f64, hi: f64, power: u32 },
    /// Chebyshev interpolant on `[−radius, radius]`, zero outside.
    Sampled { radius: f64, coeffs: Arc<Vec<f64>> },
}

/// Real symbol `φ` with derivatives up to `m_max` and declared order `ρ`.
#[derive(Clone)]
pub struct SymbolFunction {
    kind: Kind,
    shift: usize,
    rho: f64,
    m_max: usize,
    label: Arc<str>,
}

impl fmt::Debug for SymbolFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymbolFunction")
            .field("label", &self.label)
            .field("rho", &self.rho)
            .field("m_max", &self.m_max)
            .finish()
    }
}

/// Closed-form derivative depth offered by analytic symbols.
const CLOSED_FORM_DEPTH: usize = 40;

/// Symbol families accepted in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymbolSpec {
    Japanese { exponent: f64 },
    Gaussian,
    Constant { value: f64 },
    PolyBump { lo: f64, hi: f64, power: u32 },
}

impl SymbolSpec {
    pub fn build(&self) -> Result<SymbolFunction> {
        match *self {
            SymbolSpec::Japanese { exponent } => SymbolFunction::japanese(exponent),
            SymbolSpec::Gaussian => Ok(SymbolFunction::gaussian()),
            SymbolSpec::Constant { value } => SymbolFunction::constant(value),
            SymbolSpec::PolyBump { lo, hi, power } => SymbolFunction::poly_bump(lo, hi, power),
        }
    }
}

impl SymbolFunction {
    /// `⟨t⟩^a`, of order `ρ = a`.
    pub fn japanese(exponent: f64) -> Result<Self> {
        if !exponent.is_finite() {
            return Err(Error::invalid("exponent", "must be finite"));
        }
        Ok(SymbolFunction {
            kind: Kind::Japanese { exponent },
            shift: 0,
            rho: exponent,
            m_max: CLOSED_FORM_DEPTH,
            label: format!("<t>^{exponent}").into(),
        })
    }

    /// `e^{−t²}`, declared of order 0.
    pub fn gaussian() -> Self {
        SymbolFunction {
            kind: Kind::Gaussian,
            shift: 0,
            rho: 0.0,
            m_max: CLOSED_FORM_DEPTH,
            label: "exp(-t^2)".into(),
        }
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid("value", "must be finite"));
        }
        Ok(SymbolFunction {
            kind: Kind::Constant { value },
            shift: 0,
            rho: 0.0,
            m_max: CLOSED_FORM_DEPTH,
            label: format!("{value}").into(),
        })
    }

    /// Polynomial bump supported in `[lo, hi]`, of class `C^{power−1}`.
    pub fn poly_bump(lo: f64, hi: f64, power: u32) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("support", "need lo < hi"));
        }
        if power < 2 {
            return Err(Error::invalid("power", "must be at least 2"));
        }
        Ok(SymbolFunction {
            kind: Kind::PolyBump { lo, hi, power },
            shift: 0,
            rho: 0.0,
            m_max: power as usize - 1,
            label: format!("bump[{lo},{hi}]^{power}").into(),
        })
    }

    /// Chebyshev interpolant of `f` on `[−radius, radius]` with `nodes` points;
    /// derivatives come from spectral differentiation of the interpolant.
    pub fn sampled<F: Fn(f64) -> f64>(
        f: F,
        rho: f64,
        radius: f64,
        nodes: usize,
        m_max: usize,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        if nodes < 4 {
            return Err(Error::invalid("nodes", "need at least 4"));
        }
        let n = nodes;
        let vals: Vec<f64> = (0..n)
            .map(|j| f(radius * (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos()))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("f", "non-finite sample"));
        }
        let coeffs = chebyshev_coefficients(&vals);
        Ok(SymbolFunction {
            kind: Kind::Sampled {
                radius,
                coeffs: Arc::new(coeffs),
            },
            shift: 0,
            rho,
            m_max,
            label: "sampled".into(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `φ^{(j)}`, of order `ρ − j`.
    pub fn derivative(&self, j: usize) -> Result<Self> {
        if j > self.m_max {
            return Err(Error::invalid(
                "order",
                format!("derivative {j} exceeds m_max {}", self.m_max),
            ));
        }
        let constant = matches!(self.kind, Kind::Constant { .. }) && self.shift + j > 0;
        Ok(SymbolFunction {
            kind: if constant {
                Kind::Constant { value: 0.0 }
            } else {
                self.kind.clone()
            },
            shift: if constant { 0 } else { self.shift + j },
            rho: self.rho - j as f64,
            m_max: self.m_max - j,
            label: format!("d^{j} {}", self.label).into(),
        })
    }

    /// Closed support, when compact.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self.kind {
            Kind::PolyBump { lo, hi, .. } => Some((lo, hi)),
            Kind::Constant { value } if value == 0.0 => Some((0.0, 0.0)),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Constant { value } if value == 0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.raw_jet(t, self.shift)[self.shift]
    }

    /// `[φ(t), φ'(t), …, φ^{(order)}(t)]`.
    pub fn jet(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        if order > self.m_max {
            return Err(Error::invalid(
                "order",
                format!("derivative order {order} unavailable (m_max {})", self.m_max),
            ));
        }
        let full = self.raw_jet(t, self.shift + order);
        Ok(full[self.shift..].to_vec())
    }

    fn raw_jet(&self, t: f64, order: usize) -> Vec<f64> {
        match &self.kind {
            Kind::Japanese { exponent } => japanese_jet(t, *exponent, order),
            Kind::Gaussian => gaussian_jet(t, order),
            Kind::Constant { value } => {
                let mut v = vec![0.0; order + 1];
                v[0] = *value;
                v
            }
            Kind::PolyBump { lo, hi, power } => bump_jet(t, *lo, *hi, *power, order),
            Kind::Sampled { radius, coeffs } => chebyshev_jet(coeffs, *radius, t, order),
        }
    }
}

fn japanese_jet(t: f64, a: f64, order: usize) -> Vec<f64> {
    let c = 0.5 * a;
    let r2 = 1.0 + t * t;
    let mut f = Vec::with_capacity(order + 1);
    f.push(r2.powf(c));
    if order >= 1 {
        f.push(a * t * r2.powf(c - 1.0));
    }
    for n in 1..order {
        let nf = n as f64;
        let next = ((2.0 * c - 2.0 * nf) * t * f[n] + (2.0 * c * nf - nf * (nf - 1.0)) * f[n - 1]) / r2;
        f.push(next);
    }
    f
}

fn gaussian_jet(t: f64, order: usize) -> Vec<f64> {
    let e = (-t * t).exp();
    let mut h = vec![1.0, 2.0 * t];
    for n in 1..order {
        let next = 2.0 * t * h[n] - 2.0 * n as f64 * h[n - 1];
        h.push(next);
    }
    (0..=order)
        .map(|n| if n % 2 == 0 { h[n] * e } else { -h[n] * e })
        .collect()
}

fn falling(p: u32, i: usize) -> f64 {
    (0..i).map(|k| p as f64 - k as f64).product()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Derivatives of `u^p (1−u)^p` in `u` on `[0, 1]`.
fn beta_kernel_jet(u: f64, p: u32, order: usize) -> Vec<f64> {
    (0..=order)
        .map(|r| {
            let mut s = 0.0;
            for i in 0..=r {
                let j = r - i;
                if i as u32 > p || j as u32 > p {
                    continue;
                }
                let a = falling(p, i) * u.powi(p as i32 - i as i32);
                let b = falling(p, j) * (1.0 - u).powi(p as i32 - j as i32);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                s += binom(r, i) * a * b * sign;
            }
            s
        })
        .collect()
}

fn bump_jet(t: f64, lo: f64, hi: f64, power: u32, order: usize) -> Vec<f64> {
    if t <= lo || t >= hi {
        return vec![0.0; order + 1];
    }
    let w = hi - lo;
    let u = (t - lo) / w;
    let scale = 4f64.powi(power as i32);
    beta_kernel_jet(u, power, order)
        .into_iter()
        .enumerate()
        .map(|(r, v)| scale * v / w.powi(r as i32))
        .collect()
}

fn chebyshev_coefficients(vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    let m = n - 1;
    (0..n)
        .map(|k| {
            let mut s = 0.0;
            for (j, v) in vals.iter().enumerate() {
                let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                s += w * v * (std::f64::consts::PI * (j * k) as f64 / m as f64).cos();
            }
            let c = 2.0 * s / m as f64;
            if k == 0 || k == m {
                0.5 * c
            } else {
                c
            }
        })
        .collect()
}

fn chebyshev_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut d = vec![0.0; n];
    for k in (0..n - 1).rev() {
        d[k] = d.get(k + 2).copied().unwrap_or(0.0) + 2.0 * (k + 1) as f64 * c[k + 1];
    }
    d[0] *= 0.5;
    d.truncate(n - 1);
    d
}

fn clenshaw(c: &[f64], u: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * u * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    u * b1 - b2 + c[0]
}

fn chebyshev_jet(c: &[f64], radius: f64, t: f64, order: usize) -> Vec<f64> {
    if t.abs() > radius {
        return vec![0.0; order + 1];
    }
    let u = t / radius;
    let mut out = Vec::with_capacity(order + 1);
    let mut cur = c.to_vec();
    for r in 0..=order {
        out.push(clenshaw(&cur, u) / radius.powi(r as i32));
        cur = chebyshev_derivative(&cur);
    }
    out
}

/// `sup ⟨t⟩^{−ρ+k} |φ^{(k)}(t)|` over a log-spaced sample of `[−R, R]` (plus `t = 0`).
pub fn seminorm(phi: &SymbolFunction, k: usize, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius", "must be positive"));
    }
    let top = radius.log10();
    let count = 4000;
    let mut ts = vec![0.0];
    for i in 0..count {
        let t = 10f64.powf(-6.0 + (top + 6.0) * i as f64 / (count - 1) as f64);
        ts.push(t);
        ts.push(-t);
    }
    let mut best: f64 = 0.0;
    for t in ts {
        let d = phi.jet(t, k)?[k];
        let w = (1.0 + t * t).powf(0.5 * (k as f64 - phi.rho));
        best = best.max(w * d.abs());
    }
    Ok(best)
}

/// Smoothstep `S(u) = I_u(p+1, p+1)` on `[0, 1]` and its derivatives.
fn smoothstep_jet(u: f64, p: u32, order: usize) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    if u <= 0.0 {
        return out;
    }
    if u >= 1.0 {
        out[0] = 1.0;
        return out;
    }
    let n = 2 * p as usize + 1;
    out[0] = (p as usize + 1..=n)
        .map(|j| binom(n, j) * u.powi(j as i32) * (1.0 - u).powi((n - j) as i32))
        .sum();
    if order >= 1 {
        let norm = (p as usize + 1..=n).fold(1.0, |acc, _| acc)
            * binom(n - 1, p as usize)
            * n as f64;
        let kernel = beta_kernel_jet(u, p, order - 1);
        for r in 1..=order {
            out[r] = norm * kernel[r - 1];
        }
    }
    out
}

/// Cutoff `χ(s)`: 1 on `s ≤ 1/2`, 0 on `s ≥ 1`, with `χ'`.
fn strip_cutoff(s: f64) -> (f64, f64) {
    let j = smoothstep_jet(2.0 * s - 1.0, 4, 1);
    (1.0 - j[0], -2.0 * j[1])
}

/// Extension order in excess of `k` used for the remainder integral.
const REMAINDER_ORDER_GAP: usize = 5;

/// Smoothness margin of the spectral-hull cutoff beyond the extension order.
const HULL_EXTRA_SMOOTHNESS: u32 = 8;

/// Cutoff equal to 1 on `[lo, hi]`, 0 outside `[lo − d, hi + d]`, with derivatives.
fn hull_cutoff_jet(x: f64, lo: f64, hi: f64, d: f64, p: u32, order: usize) -> Vec<f64> {
    let up = smoothstep_jet((x - (lo - d)) / d, p, order);
    let dn = smoothstep_jet(((hi + d) - x) / d, p, order);
    let up: Vec<f64> = up.iter().enumerate().map(|(r, v)| v / d.powi(r as i32)).collect();
    let dn: Vec<f64> = dn
        .iter()
        .enumerate()
        .map(|(r, v)| v * (-1.0 / d).powi(r as i32))
        .collect();
    leibniz(&up, &dn)
}

fn leibniz(f: &[f64], g: &[f64]) -> Vec<f64> {
    (0..f.len())
        .map(|k| (0..=k).map(|i| binom(k, i) * f[i] * g[k - i]).sum())
        .collect()
}

#[derive(Clone, Debug)]
struct Hull {
    lo: f64,
    hi: f64,
    margin: f64,
    smoothness: u32,
}

/// Almost-analytic extension
/// `φ^ℂ(x+iy) = χ(|y|/(c₂⟨x⟩)) Σ_{j≤m} φ^{(j)}(x)(iy)^j/j!`, reflected to `y < 0`.
#[derive(Clone, Debug)]
pub struct AlmostAnalytic {
    symbol: SymbolFunction,
    order: usize,
    c2: f64,
    /// Measured constant of `|∂̄φ^ℂ| ≤ c₁⟨x⟩^{ρ−1−m}|y|^m` on the verification sample.
    pub c1: f64,
    hull: Option<Hull>,
}

impl AlmostAnalytic {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn support_slope(&self) -> f64 {
        self.c2
    }

    pub fn symbol(&self) -> &SymbolFunction {
        &self.symbol
    }

    fn taylor(&self, x: f64) -> Vec<f64> {
        let f = self
            .symbol
            .jet(x, self.order + 1)
            .expect("order validated at construction");
        match &self.hull {
            None => f,
            Some(h) => leibniz(
                &f,
                &hull_cutoff_jet(x, h.lo, h.hi, h.margin, h.smoothness, self.order + 1),
            ),
        }
    }

    fn in_x_support(&self, x: f64) -> bool {
        let s = self.symbol.support();
        let inside_symbol = s.map_or(true, |(a, b)| x > a && x < b);
        let inside_hull = self
            .hull
            .as_ref()
            .map_or(true, |h| x > h.lo - h.margin && x < h.hi + h.margin);
        inside_symbol && inside_hull
    }

    /// `φ^ℂ(x + iy)`.
    pub fn evaluate(&self, x: f64, y: f64) -> C64 {
        if !self.in_x_support(x) {
            return C64::new(0.0, 0.0);
        }
        let jx = (1.0 + x * x).sqrt();
        let (chi, _) = strip_cutoff(y.abs() / (self.c2 * jx));
        let f = self.taylor(x);
        let v = taylor_sum(&f, self.order, y.abs());
        let v = v * chi;
        if y < 0.0 {
            v.conj()
        } else {
            v
        }
    }

    /// `∂̄φ^ℂ(x + iy)` with `∂̄ = ½(∂_x + i∂_y)`.
    pub fn evaluate_dbar(&self, x: f64, y: f64) -> C64 {
        if y == 0.0 || !self.in_x_support(x) {
            return C64::new(0.0, 0.0);
        }
        let f = self.taylor(x);
        let v = self.dbar_from_jet(&f, x, y.abs());
        if y < 0.0 {
            v.conj()
        } else {
            v
        }
    }

    fn dbar_from_jet(&self, f: &[f64], x: f64, y: f64) -> C64 {
        let m = self.order;
        let jx = (1.0 + x * x).sqrt();
        let s = y / (self.c2 * jx);
        if s >= 1.0 {
            return C64::new(0.0, 0.0);
        }
        let (chi, dchi) = strip_cutoff(s);
        let iy_m = C64::new(0.0, y).powu(m as u32) / factorial(m);
        let top = 0.5 * f[m + 1] * iy_m;
        let sum = taylor_sum(f, m, y);
        let ds = C64::new(-y * x / (self.c2 * jx.powi(3)), 1.0 / (self.c2 * jx));
        chi * top + sum * (0.5 * dchi) * ds
    }
}

fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

fn taylor_sum(f: &[f64], m: usize, y: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    let mut pow = C64::new(1.0, 0.0);
    for (j, fj) in f.iter().enumerate().take(m + 1) {
        acc += pow * (*fj / factorial(j));
        pow *= C64::new(0.0, y);
    }
    acc
}

/// Build and verify the almost-analytic extension of order `m` with strip slope `c₂`.
pub fn build_extension(phi: &SymbolFunction, m: usize, c2: f64) -> Result<AlmostAnalytic> {
    make_extension(phi, m, c2, None)
}

fn make_extension(phi: &SymbolFunction, m: usize, c2: f64, hull: Option<Hull>) -> Result<AlmostAnalytic> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    if m + 1 > phi.m_max() {
        return Err(Error::invalid(
            "m",
            format!("needs m ≤ m_max − 1 = {}", phi.m_max() as i64 - 1),
        ));
    }
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::invalid("c2", "must be positive"));
    }
    let mut ext = AlmostAnalytic {
        symbol: phi.clone(),
        order: m,
        c2,
        c1: 0.0,
        hull,
    };
    ext.c1 = verify_extension(&ext)?;
    Ok(ext)
}

/// Check the extension invariants on a 10⁴-point sample; returns the measured `c₁`.
fn verify_extension(ext: &AlmostAnalytic) -> Result<f64> {
    let (xa, xb) = match (ext.symbol.support(), &ext.hull) {
        (Some((a, b)), _) => (a - 1.0, b + 1.0),
        (None, Some(h)) => (h.lo - h.margin - 1.0, h.hi + h.margin + 1.0),
        (None, None) => (-50.0, 50.0),
    };
    let nx = 100;
    let ny = 100;
    let rho = ext.symbol.rho();
    let m = ext.order as i32;
    let mut c1: f64 = 0.0;
    for i in 0..nx {
        let x = xa + (xb - xa) * (i as f64 + 0.5) / nx as f64;
        let jx = (1.0 + x * x).sqrt();
        let d0 = ext.evaluate_dbar(x, 0.0);
        if d0.norm() != 0.0 {
            return Err(Error::Numerical(format!(
                "extension not analytic on the real axis at x = {x}"
            )));
        }
        for k in 0..ny {
            let s = 1.25 * (k as f64 + 0.5) / ny as f64;
            let y = s * ext.c2 * jx;
            let d = ext.evaluate_dbar(x, y);
            if !d.re.is_finite() || !d.im.is_finite() {
                return Err(Error::Numerical(format!("non-finite ∂̄ at ({x}, {y})")));
            }
            if (s >= 1.0 || !ext.in_x_support(x)) && d.norm() != 0.0 {
                return Err(Error::Numerical(format!(
                    "∂̄ nonzero outside the support strip at ({x}, {y})"
                )));
            }
            let bound = jx.powf(rho - 1.0 - m as f64) * y.powi(m);
            if bound > 0.0 {
                c1 = c1.max(d.norm() / bound);
            }
        }
    }
    if !c1.is_finite() {
        return Err(Error::Numerical("unbounded c₁ on the verification sample".into()));
    }
    Ok(c1)
}

/// Tensor mesh for the Helffer–Sjöstrand integral in `(x, s = y/(c₂⟨x⟩))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Extension order `m`.
    pub order: usize,
    /// Strip slope `c₂`.
    pub c2: f64,
    /// Smallest `s`; panels double from here to 1/2, then `[1/2, 1]`.
    pub s_min: f64,
    /// Gauss–Legendre points per `s`-panel.
    pub gauss_points: usize,
    /// `x`-step as a multiple of `c₂ s₀` on the panel starting at `s₀`.
    pub step_ratio: f64,
    /// Upper bound on the `x`-step.
    pub step_max: f64,
    /// Width of the spectral-hull cutoff transition.
    pub margin: f64,
    /// Acceptance bound on the change under one refinement.
    pub tolerance: f64,
    /// Evaluate the refined mesh and enforce `tolerance`.
    pub gate: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            order: 6,
            c2: 0.5,
            s_min: 0.02,
            gauss_points: 8,
            step_ratio: 0.25,
            step_max: 0.05,
            margin: 3.0,
            tolerance: 1e-7,
            gate: true,
        }
    }
}

impl QuadratureSpec {
    /// Settings for compactly supported bumps: thin strip, low order.
    pub fn for_bump() -> Self {
        QuadratureSpec {
            order: 3,
            c2: 0.05,
            s_min: 0.01,
            gauss_points: 8,
            step_ratio: 0.4,
            step_max: 0.05,
            ..Self::default()
        }
    }

    /// One refinement level: finer `x`, more Gauss points, smaller `s_min`.
    pub fn refined(&self) -> Self {
        QuadratureSpec {
            s_min: 0.5 * self.s_min,
            gauss_points: self.gauss_points + 2,
            step_ratio: 0.75 * self.step_ratio,
            step_max: 0.5 * self.step_max,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::invalid("quadrature.order", "must be at least 1"));
        }
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::invalid("quadrature.c2", "must be positive"));
        }
        if !(self.s_min > 0.0 && self.s_min < 0.5) {
            return Err(Error::invalid("quadrature.s_min", "must lie in (0, 1/2)"));
        }
        if self.gauss_points == 0 || self.gauss_points > 64 {
            return Err(Error::invalid("quadrature.gauss_points", "must lie in 1..=64"));
        }
        for (name, v) in [
            ("quadrature.step_ratio", self.step_ratio),
            ("quadrature.step_max", self.step_max),
            ("quadrature.margin", self.margin),
            ("quadrature.tolerance", self.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// One row of quadrature nodes at fixed `s`: points `z` and weights
/// `−(1/π) · ∂̄φ^ℂ(z) · dx dy` (upper half-plane only).
struct Row {
    z: Vec<C64>,
    c: Vec<C64>,
}

fn s_panels(s_min: f64) -> Vec<(f64, f64)> {
    let mut p = Vec::new();
    let mut s = s_min;
    while s < 0.5 {
        p.push((s, (2.0 * s).min(0.5)));
        s *= 2.0;
    }
    p.push((0.5, 1.0));
    p
}

fn build_rows(ext: &AlmostAnalytic, xa: f64, xb: f64, q: &QuadratureSpec) -> Vec<Row> {
    let gl = gauss_legendre(q.gauss_points);
    let mut specs = Vec::new();
    for (s0, s1) in s_panels(q.s_min) {
        let h = (q.step_ratio * q.c2 * s0).min(q.step_max);
        let nx = ((xb - xa) / h).ceil().max(2.0) as usize;
        for &(g, w) in &gl {
            let s = 0.5 * (s1 - s0) * g + 0.5 * (s1 + s0);
            let ws = 0.5 * (s1 - s0) * w;
            specs.push((s, ws, nx));
        }
    }
    par::map(&specs, |&(s, ws, nx)| {
        let hx = (xb - xa) / nx as f64;
        let mut z = Vec::with_capacity(nx);
        let mut c = Vec::with_capacity(nx);
        for i in 1..nx {
            let x = xa + hx * i as f64;
            if !ext.in_x_support(x) {
                continue;
            }
            let jx = (1.0 + x * x).sqrt();
            let y = ext.c2 * jx * s;
            let f = ext.taylor(x);
            let d = ext.dbar_from_jet(&f, x, y);
            if d.norm() == 0.0 {
                continue;
            }
            z.push(C64::new(x, y));
            c.push(d * (-hx * ws * ext.c2 * jx / std::f64::consts::PI));
        }
        Row { z, c }
    })
}

/// Hermitian matrix reduced to real symmetric tridiagonal form `B = Q T Q*`.
struct Tridiagonal {
    q: Option<Mat<C64>>,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    fn is_diagonal(&self) -> bool {
        self.off.iter().all(|b| *b == 0.0)
    }

    /// Gershgorin enclosure of the spectrum.
    fn hull(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// Upper triangle (with diagonal) of `(z − T)^{-1}`, row-major in `out`.
    fn resolvent(&self, z: C64, out: &mut [C64]) {
        let n = self.diag.len();
        let mut fwd = vec![C64::new(0.0, 0.0); n];
        let mut bwd = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let base = z - self.diag[i];
            fwd[i] = if i == 0 {
                base
            } else {
                base - self.off[i - 1] * self.off[i - 1] / fwd[i - 1]
            };
        }
        for i in (0..n).rev() {
            let base = z - self.diag[i];
            bwd[i] = if i + 1 == n {
                base
            } else {
                base - self.off[i] * self.off[i] / bwd[i + 1]
            };
        }
        for j in 0..n {
            let gjj = 1.0 / (fwd[j] + bwd[j] - (z - self.diag[j]));
            out[j * n + j] = gjj;
            let mut g = gjj;
            for i in (0..j).rev() {
                g *= self.off[i] / fwd[i];
                out[i * n + j] = g;
            }
        }
    }

    fn dense_resolvent(&self, z: C64) -> Mat<C64> {
        let n = self.diag.len();
        let mut buf = vec![C64::new(0.0, 0.0); n * n];
        self.resolvent(z, &mut buf);
        Mat::from_fn(n, n, |i, j| if i <= j { buf[i * n + j] } else { buf[j * n + i] })
    }

    fn to_original(&self, x: &Mat<C64>) -> Mat<C64> {
        match &self.q {
            None => x.clone(),
            Some(q) => q * x * q.adjoint(),
        }
    }

    fn to_tridiagonal_basis(&self, x: &Mat<C64>) -> Mat<C64> {
        match &self.q {
            None => x.clone(),
            Some(q) => q.adjoint() * x * q,
        }
    }
}

/// Householder reduction of a Hermitian matrix.
fn tridiagonalize(b: &Mat<C64>) -> Result<Tridiagonal> {
    let n = b.nrows();
    if b.ncols() != n || n == 0 {
        return Err(Error::invalid("B", "must be a nonempty square matrix"));
    }
    let scale = linalg::max_abs(b).max(f64::MIN_POSITIVE);
    if linalg::hermitian_defect(b) > 1e-12 * scale {
        return Err(Error::invalid("B", "must be Hermitian"));
    }
    let offdiag_zero = (0..n).all(|j| (0..n).all(|i| i == j || b[(i, j)].norm() == 0.0));
    if offdiag_zero {
        return Ok(Tridiagonal {
            q: None,
            diag: (0..n).map(|i| b[(i, i)].re).collect(),
            off: vec![0.0; n.saturating_sub(1)],
        });
    }
    let mut a = b.clone();
    let mut q = Mat::<C64>::identity(n, n);
    let zero = C64::new(0.0, 0.0);
    for k in 0..n.saturating_sub(2) {
        let norm: f64 = (k + 1..n).map(|i| a[(i, k)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let phase = if x0.norm() == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;
        let mut v: Vec<C64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vn: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if vn == 0.0 {
            continue;
        }
        for c in v.iter_mut() {
            *c /= vn;
        }
        let m = v.len();
        let off = k + 1;
        // A ← H A H with H = I − 2vv*, acting on rows/columns k+1..n.
        let mut w = vec![zero; n];
        for (j, wj) in w.iter_mut().enumerate() {
            let mut s = zero;
            for t in 0..m {
                s += v[t].conj() * a[(off + t, j)];
            }
            *wj = s;
        }
        for t in 0..m {
            for j in 0..n {
                let upd = 2.0 * v[t] * w[j];
                a[(off + t, j)] -= upd;
            }
        }
        for i in 0..n {
            let mut s = zero;
            for t in 0..m {
                s += a[(i, off + t)] * v[t];
            }
            for t in 0..m {
                let upd = 2.0 * s * v[t].conj();
                a[(i, off + t)] -= upd;
            }
        }
        for i in 0..n {
            let mut s = zero;
            for t in 0..m {
                s += q[(i, off + t)] * v[t];
            }
            for t in 0..m {
                let upd = 2.0 * s * v[t].conj();
                q[(i, off + t)] -= upd;
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    let mut d = vec![C64::new(1.0, 0.0); n];
    for k in 0..n.saturating_sub(1) {
        let e = a[(k + 1, k)];
        let r = e.norm();
        off.push(r);
        d[k + 1] = if r == 0.0 { d[k] } else { d[k] * e / r };
    }
    let q = Mat::from_fn(n, n, |i, j| q[(i, j)] * d[j]);
    Ok(Tridiagonal {
        q: Some(q),
        diag,
        off,
    })
}

fn pairwise_sum(parts: Vec<Mat<C64>>) -> Mat<C64> {
    let mut layer = parts;
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        layer = next;
    }
    layer.pop().unwrap_or_else(|| Mat::zeros(0, 0))
}

fn extension_for(phi: &SymbolFunction, tri: &Tridiagonal, q: &QuadratureSpec) -> Result<(AlmostAnalytic, f64, f64)> {
    let (lo, hi) = tri.hull();
    let hull = if phi.support().is_some() {
        None
    } else {
        Some(Hull {
            lo,
            hi,
            margin: q.margin,
            smoothness: q.order as u32 + 1 + HULL_EXTRA_SMOOTHNESS,
        })
    };
    let ext = make_extension(phi, q.order, q.c2, hull)?;
    let (xa, xb) = match phi.support() {
        Some((a, b)) => (a, b),
        None => (lo - q.margin, hi + q.margin),
    };
    Ok((ext, xa, xb))
}

/// Quadrature value of `φ(B)` in the tridiagonal basis.
fn plain_integral(phi: &SymbolFunction, tri: &Tridiagonal, q: &QuadratureSpec) -> Result<(Mat<C64>, usize)> {
    let n = tri.diag.len();
    if phi.is_zero() {
        return Ok((Mat::zeros(n, n), 0));
    }
    let (ext, xa, xb) = extension_for(phi, tri, q)?;
    let rows = build_rows(&ext, xa, xb, q);
    let nodes: usize = rows.iter().map(|r| r.z.len()).sum();
    let diagonal = tri.is_diagonal();
    let parts: Vec<Mat<C64>> = par::map(&rows, |row| {
        let mut acc = vec![C64::new(0.0, 0.0); n * n];
        if diagonal {
            for (z, c) in row.z.iter().zip(&row.c) {
                for i in 0..n {
                    acc[i * n + i] += c / (z - tri.diag[i]);
                }
            }
        } else {
            let mut g = vec![C64::new(0.0, 0.0); n * n];
            for (z, c) in row.z.iter().zip(&row.c) {
                tri.resolvent(*z, &mut g);
                for i in 0..n {
                    for j in i..n {
                        acc[i * n + j] += c * g[i * n + j];
                    }
                }
            }
        }
        Mat::from_fn(n, n, |i, j| if i <= j { acc[i * n + j] } else { acc[j * n + i] })
    });
    let x = pairwise_sum(parts);
    let full = Mat::from_fn(n, n, |i, j| x[(i, j)] + x[(j, i)].conj());
    Ok((full, nodes))
}

/// Result of a gated quadrature evaluation.
#[derive(Clone, Debug)]
pub struct HsMatrix {
    pub matrix: Mat<C64>,
    /// Operator-norm change between the base and refined meshes (0 without gate).
    pub refinement_change: f64,
    pub nodes: usize,
}

/// Evaluate on `q` and, with the gate on, on `q.refined()`; the change must stay
/// below `tolerance · max(1, scale)`, `scale` being the norm of the integrand's operator factor.
fn gated<F>(q: &QuadratureSpec, scale: f64, eval: F) -> Result<HsMatrix>
where
    F: Fn(&QuadratureSpec) -> Result<(Mat<C64>, usize)>,
{
    q.validate()?;
    let (base, nodes) = eval(q)?;
    if !q.gate {
        return Ok(HsMatrix {
            matrix: base,
            refinement_change: 0.0,
            nodes,
        });
    }
    let (fine, fine_nodes) = eval(&q.refined())?;
    let change = linalg::spectral_norm(&(&fine - &base));
    let target = q.tolerance * scale.max(1.0);
    if !(change <= target) {
        return Err(Error::NoConvergence {
            what: "Helffer–Sjöstrand quadrature".into(),
            achieved: change,
            target,
        });
    }
    Ok(HsMatrix {
        matrix: fine,
        refinement_change: change,
        nodes: nodes + fine_nodes,
    })
}

/// `φ(B)` for a Hermitian matrix by Helffer–Sjöstrand quadrature.
pub fn hs_apply_matrix(phi: &SymbolFunction, b: &Mat<C64>, q: &QuadratureSpec) -> Result<HsMatrix> {
    check_symbol_class(phi)?;
    let tri = tridiagonalize(b)?;
    let mut out = gated(q, 1.0, |qq| plain_integral(phi, &tri, qq))?;
    out.matrix = tri.to_original(&out.matrix);
    Ok(out)
}

fn check_symbol_class(phi: &SymbolFunction) -> Result<()> {
    if phi.rho() >= 0.0 && phi.support().is_none() && !matches!(phi.kind, Kind::Gaussian) && !phi.is_zero() {
        return Err(Error::invalid(
            "phi",
            "symbol order must be negative (integrable class)",
        ));
    }
    Ok(())
}

/// `φ(B)` as an operator; `order` overrides the extension order of `q`.
pub fn hs_apply(phi: &SymbolFunction, b: &OperatorRep, order: usize, q: &QuadratureSpec) -> Result<OperatorRep> {
    if !b.is_hermitian() {
        return Err(Error::invalid("B", "must be Hermitian"));
    }
    let spec = QuadratureSpec { order, ..*q };
    let m = hs_apply_matrix(phi, &*b.dense()?, &spec)?;
    OperatorRep::from_dense(b.grid(), true, &format!("{}(B)", phi.label()), m.matrix)
}

/// Quadrature of `−(1/π)∫ ∂̄φ^ℂ (z−B)^{−k} Y (z−B)^{−1}` over both half-planes,
/// with `Y` given in the tridiagonal basis.
/// Extension order for the `I_k` integrand, which vanishes like `|y|^{m−k}` at the axis.
fn remainder_order(phi: &SymbolFunction, k: usize, order: usize) -> usize {
    order.max(k + REMAINDER_ORDER_GAP).min(phi.m_max().saturating_sub(1)).max(order)
}

fn remainder_integral(
    phi: &SymbolFunction,
    tri: &Tridiagonal,
    y: &Mat<C64>,
    k: usize,
    q: &QuadratureSpec,
) -> Result<(Mat<C64>, usize)> {
    let n = tri.diag.len();
    if phi.is_zero() {
        return Ok((Mat::zeros(n, n), 0));
    }
    let q = &QuadratureSpec {
        order: remainder_order(phi, k, q.order),
        ..*q
    };
    let (ext, xa, xb) = extension_for(phi, tri, q)?;
    let rows = build_rows(&ext, xa, xb, q);
    let nodes: usize = rows.iter().map(|r| r.z.len()).sum();
    let parts: Vec<Mat<C64>> = if tri.is_diagonal() {
        par::map(&rows, |row| {
            let cnt = row.z.len();
            let left = Mat::<C64>::from_fn(n, cnt, |i, v| {
                row.c[v] * (row.z[v] - tri.diag[i]).inv().powu(k as u32)
            });
            let right = Mat::<C64>::from_fn(cnt, n, |v, j| (row.z[v] - tri.diag[j]).inv());
            let w = &left * &right;
            Mat::from_fn(n, n, |i, j| y[(i, j)] * (2.0 * w[(i, j)].re))
        })
    } else {
        par::map(&rows, |row| {
            let mut acc = Mat::<C64>::zeros(n, n);
            for (z, c) in row.z.iter().zip(&row.c) {
                let g = tri.dense_resolvent(*z);
                let gc = Mat::from_fn(n, n, |i, j| g[(i, j)].conj());
                for (gm, cc) in [(&g, *c), (&gc, c.conj())] {
                    let mut left = gm.clone();
                    for _ in 1..k {
                        left = &left * gm;
                    }
                    let term = &(&left * y) * gm;
                    acc += Mat::from_fn(n, n, |i, j| cc * term[(i, j)]);
                }
            }
            acc
        })
    };
    Ok((pairwise_sum(parts), nodes))
}

/// `ad_B(T) = [T, B]`.
pub fn ad(t: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    t * b - b * t
}

/// `ad_B^j(T)`.
pub fn ad_power(t: &Mat<C64>, b: &Mat<C64>, j: usize) -> Mat<C64> {
    let mut out = t.clone();
    for _ in 0..j {
        out = ad(&out, b);
    }
    out
}

/// Commutator expansion
/// `[T, φ(B)] = Σ_{j<k} (1/j!) φ^{(j)}(B) ad_B^j(T) + I_k` with `ad_B(T) = [T, B]`.
#[derive(Clone, Debug)]
pub struct Expansion {
    pub k: usize,
    /// `(1/j!) φ^{(j)}(B) ad_B^j(T)` for `j = 1, …, k−1`.
    pub terms: Vec<Mat<C64>>,
    /// `[T, φ(B)]` with `φ(B)` from quadrature.
    pub commutator: Mat<C64>,
    /// `I_k` from its defining integral.
    pub remainder_quadrature: Mat<C64>,
    /// `I_k` as `[T, φ(B)] − Σ terms`.
    pub remainder_closure: Mat<C64>,
    /// `‖remainder_quadrature − remainder_closure‖`.
    pub discrepancy: f64,
}

impl Expansion {
    /// `Σ_{j<k'} terms + I_{k'}` must reproduce the full commutator for every `k' ≤ k`.
    pub fn telescoping_defect(&self) -> f64 {
        let mut acc = self.remainder_closure.clone();
        for t in &self.terms {
            acc += t;
        }
        linalg::spectral_norm(&(&acc - &self.commutator))
    }
}

/// Expansion on dense matrices.
pub fn hs_commutator_expansion_matrix(
    phi: &SymbolFunction,
    b: &Mat<C64>,
    t: &Mat<C64>,
    k: usize,
    q: &QuadratureSpec,
) -> Result<Expansion> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if k + 1 > phi.m_max() {
        return Err(Error::invalid("k", "needs k ≤ m_max − 1"));
    }
    if t.nrows() != b.nrows() || t.ncols() != b.ncols() {
        return Err(Error::invalid("T", "dimension mismatch with B"));
    }
    check_symbol_class(phi)?;
    let tri = tridiagonalize(b)?;
    let phi_b = tri.to_original(&gated(q, 1.0, |qq| plain_integral(phi, &tri, qq))?.matrix);
    let commutator = ad(t, &phi_b);
    let mut terms = Vec::with_capacity(k.saturating_sub(1));
    for j in 1..k {
        let dj = phi.derivative(j)?;
        let fj = tri.to_original(&gated(q, 1.0, |qq| plain_integral(&dj, &tri, qq))?.matrix);
        let adj = ad_power(t, b, j);
        let term = &fj * &adj;
        let inv = 1.0 / factorial(j);
        terms.push(Mat::from_fn(term.nrows(), term.ncols(), |r, c| term[(r, c)] * inv));
    }
    let mut closure = commutator.clone();
    for term in &terms {
        closure -= term;
    }
    let adk = tri.to_tridiagonal_basis(&ad_power(t, b, k));
    let rem = gated(q, linalg::spectral_norm(&adk), |qq| remainder_integral(phi, &tri, &adk, k, qq))?;
    let remainder_quadrature = tri.to_original(&rem.matrix);
    let discrepancy = linalg::spectral_norm(&(&remainder_quadrature - &closure));
    Ok(Expansion {
        k,
        terms,
        commutator,
        remainder_quadrature,
        remainder_closure: closure,
        discrepancy,
    })
}

/// Expansion for grid operators.
pub fn hs_commutator_expansion(
    phi: &SymbolFunction,
    b: &OperatorRep,
    t: &OperatorRep,
    k: usize,
    q: &QuadratureSpec,
) -> Result<Expansion> {
    b.grid().check_same(t.grid())?;
    if !b.is_hermitian() {
        return Err(Error::invalid("B", "must be Hermitian"));
    }
    hs_commutator_expansion_matrix(phi, &*b.dense()?, &*t.dense()?, k, q)
}

/// `‖⟨B⟩^s I_k ⟨B⟩^{s'}‖` with the admissible-parameter conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedRemainder {
    pub norm: f64,
    pub s: f64,
    pub s_prime: f64,
    pub k: usize,
    pub rho: f64,
    /// `s' < 1`, `s < k` and `ρ + s + s' < k` all hold.
    pub in_regime: bool,
    /// Violated conditions, by name.
    pub violations: Vec<String>,
}

/// Conditions `s' < 1`, `s < k`, `ρ + s + s' < k`; returns the violated ones.
pub fn remainder_conditions(s: f64, s_prime: f64, k: usize, rho: f64) -> Vec<String> {
    let mut v = Vec::new();
    if !(s_prime < 1.0) {
        v.push("s' < 1".to_string());
    }
    if !(s < k as f64) {
        v.push("s < k".to_string());
    }
    if !(rho + s + s_prime < k as f64) {
        v.push("rho + s + s' < k".to_string());
    }
    v
}

/// Weighted operator norm of a remainder; `⟨B⟩^s` comes from the spectral calculus of `B`.
pub fn remainder_weighted_norm(
    remainder: &Mat<C64>,
    b: &Mat<C64>,
    s: f64,
    s_prime: f64,
    k: usize,
    rho: f64,
) -> Result<WeightedRemainder> {
    if !(s.is_finite() && s_prime.is_finite()) {
        return Err(Error::invalid("s", "must be finite"));
    }
    let violations = remainder_conditions(s, s_prime, k, rho);
    let eig = linalg::hermitian_eigen(b, None)?;
    let left = linalg::spectral_function(&eig, |l| C64::new((1.0 + l * l).powf(0.5 * s), 0.0));
    let right = linalg::spectral_function(&eig, |l| C64::new((1.0 + l * l).powf(0.5 * s_prime), 0.0));
    let w = &(&left * remainder) * &right;
    Ok(WeightedRemainder {
        norm: linalg::spectral_norm(&w),
        s,
        s_prime,
        k,
        rho,
        in_regime: violations.is_empty(),
        violations,
    })
}

/// Seeded random Hermitian matrix with spectrum roughly in `[center − radius, center + radius]`.
pub fn random_hermitian(n: usize, seed: u64, center: f64, radius: f64) -> Mat<C64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let scale = radius / (2.0 * (2.0 / 3.0f64).sqrt() * (n as f64).sqrt());
    let mut b = Mat::<C64>::zeros(n, n);
    for i in 0..n {
        b[(i, i)] = C64::new(center + scale * rng.gen_range(-1.0..1.0), 0.0);
        for j in 0..i {
            let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
            b[(i, j)] = v;
            b[(j, i)] = v.conj();
        }
    }
    b
}

/// Quadrature against eigendecomposition on one matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalculusCheck {
    pub n: usize,
    /// `‖φ(B)_quadrature − φ(B)_eigen‖`.
    pub error: f64,
    pub refinement_change: f64,
    pub nodes: usize,
    /// `‖X − X*‖` of the quadrature result.
    pub hermitian_defect: f64,
}

/// Compare [`hs_apply_matrix`] with the spectral-decomposition route.
pub fn calculus_check(phi: &SymbolFunction, b: &Mat<C64>, q: &QuadratureSpec) -> Result<CalculusCheck> {
    let hs = hs_apply_matrix(phi, b, q)?;
    let eig = linalg::hermitian_eigen(b, None)?;
    let exact = linalg::spectral_function(&eig, |l| C64::new(phi.eval(l), 0.0));
    Ok(CalculusCheck {
        n: b.nrows(),
        error: linalg::spectral_norm(&(&hs.matrix - &exact)),
        refinement_change: hs.refinement_change,
        nodes: hs.nodes,
        hermitian_defect: linalg::hermitian_defect(&hs.matrix),
    })
}

/// Position operator `B = q` and `T = u(p)` with `u(ξ) = ξ⟨ξ⟩^{−1}`.
///
/// The symbol is rolled off smoothly between half and 90% of the Nyquist
/// frequency, and `T` is compressed to the box from a periodic grid of twice
/// the length, so its kernel decays rapidly and has no wrap-around.
pub fn position_commutator_pair(grid: &Grid) -> Result<(OperatorRep, OperatorRep)> {
    let n = grid.n();
    let nyq = grid.nyquist();
    let wide = Grid::new(2.0 * grid.half_length(), 2 * n)?;
    let u = OperatorRep::real_multiplier(&wide, "u(p)", |xi| {
        let roll = potentials::smooth_step_down((xi.abs() / nyq - 0.5) / 0.4);
        roll * xi / (1.0 + xi * xi).sqrt()
    })?;
    let offset = n / 2;
    let columns: Vec<Vec<C64>> = par::map_range(n, |j| {
        let mut e = vec![C64::new(0.0, 0.0); 2 * n];
        e[offset + j] = C64::new(1.0, 0.0);
        u.apply_values(&e)[offset..offset + n].to_vec()
    });
    let t = Mat::from_fn(n, n, |i, j| 0.5 * (columns[j][i] + columns[i][j].conj()));
    let t = OperatorRep::from_dense(grid, true, "u(p)", t)?;
    Ok((OperatorRep::position(grid), t))
}

/// One evaluation of the weighted remainder in a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub half_length: f64,
    pub n: usize,
    pub quadrature: QuadratureSpec,
    pub weighted: WeightedRemainder,
    /// Disagreement of the two remainder routes.
    pub discrepancy: f64,
}

/// Stability of `‖⟨q⟩^s I_k ⟨q⟩^{s'}‖` under mesh refinement and box doubling;
/// bounded stability is the finite-grid surrogate for boundedness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderStudy {
    pub base: StudyPoint,
    pub mesh_refined: StudyPoint,
    pub box_doubled: StudyPoint,
    /// Relative change under mesh refinement.
    pub mesh_change: f64,
    /// Relative change under doubling `L` and `n`.
    pub box_change: f64,
    /// `box_doubled / base`.
    pub growth_factor: f64,
    /// Both relative changes below `threshold`.
    pub stable: bool,
    pub threshold: f64,
}

fn study_point(
    phi: &SymbolFunction,
    grid: &Grid,
    k: usize,
    s: f64,
    s_prime: f64,
    q: &QuadratureSpec,
) -> Result<StudyPoint> {
    let (b, t) = position_commutator_pair(grid)?;
    let e = hs_commutator_expansion(phi, &b, &t, k, q)?;
    let weighted = remainder_weighted_norm(&e.remainder_quadrature, &*b.dense()?, s, s_prime, k, phi.rho())?;
    Ok(StudyPoint {
        half_length: grid.half_length(),
        n: grid.n(),
        quadrature: *q,
        weighted,
        discrepancy: e.discrepancy,
    })
}

/// Weighted-remainder study for `B = q` on `grid`, its refined mesh and the doubled box.
pub fn remainder_study(
    phi: &SymbolFunction,
    grid: &Grid,
    k: usize,
    s: f64,
    s_prime: f64,
    q: &QuadratureSpec,
    threshold: f64,
) -> Result<RemainderStudy> {
    let doubled = Grid::new(2.0 * grid.half_length(), 2 * grid.n())?;
    let base = study_point(phi, grid, k, s, s_prime, q)?;
    let mesh_refined = study_point(phi, grid, k, s, s_prime, &q.refined())?;
    let box_doubled = study_point(phi, &doubled, k, s, s_prime, q)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let mesh_change = rel(mesh_refined.weighted.norm, base.weighted.norm);
    let box_change = rel(box_doubled.weighted.norm, base.weighted.norm);
    let growth_factor = box_doubled.weighted.norm / base.weighted.norm.max(f64::MIN_POSITIVE);
    Ok(RemainderStudy {
        stable: mesh_change < threshold && box_change < threshold,
        base,
        mesh_refined,
        box_doubled,
        mesh_change,
        box_change,
        growth_factor,
        threshold,
    })
}

/// Measured exponent of `|∂̄φ^ℂ(x, y)|` in `y` by log-log regression over `[y_lo, y_hi]`.
pub fn dbar_decay_exponent(ext: &AlmostAnalytic, x: f64, y_lo: f64, y_hi: f64, samples: usize) -> Result<f64> {
    if !(y_lo > 0.0 && y_lo < y_hi) || samples < 2 {
        return Err(Error::invalid("y range", "need 0 < y_lo < y_hi and two samples"));
    }
    let mut pts = Vec::with_capacity(samples);
    for i in 0..samples {
        let y = y_lo * (y_hi / y_lo).powf(i as f64 / (samples - 1) as f64);
        let d = ext.evaluate_dbar(x, y).norm();
        if d > 0.0 {
            pts.push((y.ln(), d.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::Numerical("∂̄ vanishes on the sample".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let gl = gauss_legendre(6);
        let s: f64 = gl.iter().map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        let s: f64 = gl.iter().map(|(_, w)| w).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn japanese_jet_matches_finite_differences() {
        let h = 1e-5;
        for &t in &[-2.0, 0.3, 1.7] {
            let j = japanese_jet(t, -2.0, 4);
            let jp = japanese_jet(t + h, -2.0, 4);
            let jm = japanese_jet(t - h, -2.0, 4);
            for r in 0..4 {
                let fd = (jp[r] - jm[r]) / (2.0 * h);
                assert!((fd - j[r + 1]).abs() < 1e-6 * (1.0 + j[r + 1].abs()), "t={t} r={r}");
            }
        }
    }

    #[test]
    fn gaussian_and_bump_jets() {
        let g = gaussian_jet(0.5, 2);
        let e = (-0.25f64).exp();
        assert!((g[1] + e).abs() < 1e-15);
        assert!((g[2] - (4.0 * 0.25 - 2.0) * e).abs() < 1e-15);
        let b = bump_jet(1.5, 1.0, 2.0, 3, 1);
        assert!((b[0] - 1.0).abs() < 1e-14 && b[1].abs() < 1e-12);
    }

    #[test]
    fn smoothstep_is_a_step() {
        let s = smoothstep_jet(0.5, 4, 2);
        assert!((s[0] - 0.5).abs() < 1e-14);
        let h = 1e-6;
        let fd = (smoothstep_jet(0.3 + h, 4, 0)[0] - smoothstep_jet(0.3 - h, 4, 0)[0]) / (2.0 * h);
        assert!((fd - smoothstep_jet(0.3, 4, 1)[1]).abs() < 1e-7);
        let fd2 = (smoothstep_jet(0.3 + h, 4, 1)[1] - smoothstep_jet(0.3 - h, 4, 1)[1]) / (2.0 * h);
        assert!((fd2 - smoothstep_jet(0.3, 4, 2)[2]).abs() < 1e-6);
    }

    #[test]
    fn chebyshev_fallback_matches_closed_form() {
        let s = SymbolFunction::sampled(|t| (1.0 + t * t).recip(), -2.0, 8.0, 257, 4).unwrap();
        let c = SymbolFunction::japanese(-2.0).unwrap();
        for &t in &[-3.0, 0.0, 0.7, 5.0] {
            let a = s.jet(t, 3).unwrap();
            let b = c.jet(t, 3).unwrap();
            for r in 0..=3 {
                assert!((a[r] - b[r]).abs() < 1e-6, "t={t} r={r}: {} vs {}", a[r], b[r]);
            }
        }
    }

    #[test]
    fn tridiagonal_resolvent_matches_dense_inverse() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let mut b = Mat::<C64>::zeros(n, n);
        for i in 0..n {
            b[(i, i)] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                b[(i, j)] = v;
                b[(j, i)] = v.conj();
            }
        }
        let tri = tridiagonalize(&b).unwrap();
        let z = C64::new(0.3, 0.2);
        let r = tri.to_original(&tri.dense_resolvent(z));
        let zb = Mat::from_fn(n, n, |i, j| if i == j { z - b[(i, j)] } else { -b[(i, j)] });
        let prod = &zb * &r;
        let err = linalg::max_abs(&(&prod - &Mat::<C64>::identity(n, n)));
        assert!(err < 1e-12, "{err}");
    }
}
