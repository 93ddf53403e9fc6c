//! Potential families, the smooth radial cutoff and the oscillating
//! antiderivative decomposition.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::C64;

/// Largest phase advance of an oscillating potential across one cell.
pub const PHASE_LIMIT: f64 = PI / 4.0;

/// Radii of the smooth cutoff: `κ = 1` on `|x| ≤ r₀`, `κ = 0` for `|x| ≥ r₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl CutoffSpec {
    pub fn new(inner_radius: f64, outer_radius: f64) -> Result<Self> {
        let s = CutoffSpec {
            inner_radius,
            outer_radius,
        };
        s.validate()?;
        Ok(s)
    }

    /// Cutoff used by the oscillating families: radii `(r, 2r)`.
    pub fn from_radius(r: f64) -> Result<Self> {
        Self::new(r, 2.0 * r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius.is_finite()) {
            return Err(Error::invalid("cutoff.inner_radius", "must be positive"));
        }
        if !(self.outer_radius > self.inner_radius && self.outer_radius.is_finite()) {
            return Err(Error::invalid(
                "cutoff.outer_radius",
                "must exceed the inner radius",
            ));
        }
        Ok(())
    }

    /// `κ(r)` for `r ≥ 0`.
    pub fn value(&self, r: f64) -> f64 {
        let r = r.abs();
        if r <= self.inner_radius {
            1.0
        } else if r >= self.outer_radius {
            0.0
        } else {
            let t = (r - self.inner_radius) / (self.outer_radius - self.inner_radius);
            smooth_step_down(t)
        }
    }
}

fn bump_tail(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// C^∞ transition from 1 at `t ≤ 0` to 0 at `t ≥ 1`.
pub fn smooth_step_down(t: f64) -> f64 {
    let a = bump_tail(1.0 - t);
    let b = bump_tail(t);
    if a + b == 0.0 {
        return if t < 0.5 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Sample the cutoff on the grid.
pub fn smooth_cutoff(spec: &CutoffSpec, grid: &Grid) -> Result<ScalarField> {
    spec.validate()?;
    if spec.outer_radius >= grid.half_length() {
        return Err(Error::invalid(
            "cutoff.outer_radius",
            format!(
                "{} must lie inside the box half-length {}",
                spec.outer_radius,
                grid.half_length()
            ),
        ));
    }
    ScalarField::from_fn(grid, |x| spec.value(x))
}

/// Taper equal to 1 on `|x| ≤ 0.85L`, vanishing for `|x| ≥ 0.95L`.
///
/// Multiplying a non-periodic sample by this taper removes the jump at the
/// periodic wrap, so spectral derivatives stay accurate on the interior.
pub fn edge_taper(grid: &Grid) -> Vec<f64> {
    let l = grid.half_length();
    grid.nodes()
        .iter()
        .map(|&x| {
            let t = (x.abs() - 0.85 * l) / (0.10 * l);
            smooth_step_down(t)
        })
        .collect()
}

/// Potential families with their parameters.
///
/// JSON encoding: `{"family": "<name>", "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `w sin(k|x|)/|x|`, value `w k` at the origin.
    WignerVonNeumann { w: f64, k: f64 },
    /// `w (1 − κ(|x|)) sin(k|x|^ζ)/|x|^θ` with cutoff radii `(r, 2r)`.
    Oscillating {
        w: f64,
        k: f64,
        zeta: f64,
        theta: f64,
        cutoff_radius: f64,
    },
    /// `w (1 − κ(|x|)) cos(k|x|^ζ)/|x|^γ` with cutoff radii `(r, 2r)`.
    TildeOscillating {
        w: f64,
        k: f64,
        zeta: f64,
        gamma: f64,
        cutoff_radius: f64,
    },
    /// `w (1 − κ(|x|)) e^{3|x|/4} sin(e^{|x|})` with cutoff radii `(r, 2r)`.
    ExpOscillation { w: f64, cutoff_radius: f64 },
    /// `amplitude · ⟨x⟩^{−1−ρ}`.
    ShortRange { amplitude: f64, rho: f64 },
    /// `amplitude · ⟨x⟩^{−ρ}`.
    LongRange { amplitude: f64, rho: f64 },
    /// `−depth` on `|x| < radius`, zero outside.
    SquareWell { depth: f64, radius: f64 },
    Zero,
    Sum { parts: Vec<PotentialSpec> },
}

fn japanese(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be finite"))
    }
}

impl PotentialSpec {
    pub fn family(&self) -> &'static str {
        match self {
            PotentialSpec::WignerVonNeumann { .. } => "wigner_von_neumann",
            PotentialSpec::Oscillating { .. } => "oscillating",
            PotentialSpec::TildeOscillating { .. } => "tilde_oscillating",
            PotentialSpec::ExpOscillation { .. } => "exp_oscillation",
            PotentialSpec::ShortRange { .. } => "short_range",
            PotentialSpec::LongRange { .. } => "long_range",
            PotentialSpec::SquareWell { .. } => "square_well",
            PotentialSpec::Zero => "zero",
            PotentialSpec::Sum { .. } => "sum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::WignerVonNeumann { w, k } => {
                finite("w", *w)?;
                positive("k", *k)
            }
            PotentialSpec::Oscillating {
                w,
                k,
                zeta,
                theta,
                cutoff_radius,
            } => {
                finite("w", *w)?;
                positive("k", *k)?;
                positive("zeta", *zeta)?;
                finite("theta", *theta)?;
                positive("cutoff_radius", *cutoff_radius)
            }
            PotentialSpec::TildeOscillating {
                w,
                k,
                zeta,
                gamma,
                cutoff_radius,
            } => {
                finite("w", *w)?;
                positive("k", *k)?;
                positive("zeta", *zeta)?;
                finite("gamma", *gamma)?;
                positive("cutoff_radius", *cutoff_radius)
            }
            PotentialSpec::ExpOscillation { w, cutoff_radius } => {
                finite("w", *w)?;
                positive("cutoff_radius", *cutoff_radius)
            }
            PotentialSpec::ShortRange { amplitude, rho } => {
                finite("amplitude", *amplitude)?;
                positive("rho", *rho)
            }
            PotentialSpec::LongRange { amplitude, rho } => {
                finite("amplitude", *amplitude)?;
                positive("rho", *rho)
            }
            PotentialSpec::SquareWell { depth, radius } => {
                positive("depth", *depth)?;
                positive("radius", *radius)
            }
            PotentialSpec::Zero => Ok(()),
            PotentialSpec::Sum { parts } => parts.iter().try_for_each(|p| p.validate()),
        }
    }

    /// Closed-form value at `x`.
    pub fn value_at(&self, x: f64) -> f64 {
        let r = x.abs();
        match *self {
            PotentialSpec::WignerVonNeumann { w, k } => {
                if r == 0.0 {
                    w * k
                } else {
                    w * (k * r).sin() / r
                }
            }
            PotentialSpec::Oscillating {
                w,
                k,
                zeta,
                theta,
                cutoff_radius,
            } => {
                let c = 1.0 - cutoff(cutoff_radius).value(r);
                if c == 0.0 {
                    0.0
                } else {
                    w * c * (k * r.powf(zeta)).sin() / r.powf(theta)
                }
            }
            PotentialSpec::TildeOscillating {
                w,
                k,
                zeta,
                gamma,
                cutoff_radius,
            } => {
                let c = 1.0 - cutoff(cutoff_radius).value(r);
                if c == 0.0 {
                    0.0
                } else {
                    w * c * (k * r.powf(zeta)).cos() / r.powf(gamma)
                }
            }
            PotentialSpec::ExpOscillation { w, cutoff_radius } => {
                let c = 1.0 - cutoff(cutoff_radius).value(r);
                if c == 0.0 {
                    0.0
                } else {
                    w * c * (0.75 * r).exp() * r.exp().sin()
                }
            }
            PotentialSpec::ShortRange { amplitude, rho } => {
                amplitude * japanese(x).powf(-1.0 - rho)
            }
            PotentialSpec::LongRange { amplitude, rho } => amplitude * japanese(x).powf(-rho),
            PotentialSpec::SquareWell { depth, radius } => {
                if r < radius {
                    -depth
                } else {
                    0.0
                }
            }
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Sum { ref parts } => parts.iter().map(|p| p.value_at(x)).sum(),
        }
    }

    /// Largest phase advance per cell of the oscillating parts (0 if none).
    pub fn phase_increment(&self, grid: &Grid) -> f64 {
        let h = grid.spacing();
        let l = grid.half_length();
        let power_rate = |k: f64, zeta: f64, r0: f64| {
            // Local frequency k ζ r^{ζ−1} is largest at the box edge for ζ ≥ 1
            // and at the cutoff radius otherwise.
            let r = if zeta >= 1.0 { l } else { r0.min(l) };
            k * zeta * r.powf(zeta - 1.0)
        };
        match *self {
            PotentialSpec::WignerVonNeumann { k, .. } => k * h,
            PotentialSpec::Oscillating {
                k,
                zeta,
                cutoff_radius,
                ..
            }
            | PotentialSpec::TildeOscillating {
                k,
                zeta,
                cutoff_radius,
                ..
            } => power_rate(k, zeta, cutoff_radius) * h,
            PotentialSpec::ExpOscillation { .. } => l.exp() * h,
            PotentialSpec::Sum { ref parts } => parts
                .iter()
                .map(|p| p.phase_increment(grid))
                .fold(0.0, f64::max),
            _ => 0.0,
        }
    }

    /// Reject grids on which the oscillation aliases.
    pub fn check_resolution(&self, grid: &Grid) -> Result<()> {
        let inc = self.phase_increment(grid);
        if inc >= PHASE_LIMIT {
            Err(Error::UnderResolved {
                increment: inc,
                limit: PHASE_LIMIT,
            })
        } else {
            Ok(())
        }
    }

    /// True when the family is even in `x` (all closed forms here are).
    pub fn is_even(&self) -> bool {
        true
    }
}

fn cutoff(r: f64) -> CutoffSpec {
    CutoffSpec {
        inner_radius: r,
        outer_radius: 2.0 * r,
    }
}

/// Fraction of the Nyquist frequency kept in the square-well projection.
pub const SQUARE_WELL_BAND: f64 = 2.0 / 3.0;

/// Band-limited samples of the square well: the exact Fourier series of the
/// step truncated to `|ξ| ≤ SQUARE_WELL_BAND · nyquist`.
fn square_well_samples(depth: f64, radius: f64, grid: &Grid) -> Vec<f64> {
    let l = grid.half_length();
    let band = SQUARE_WELL_BAND * grid.nyquist();
    let mut buf: Vec<C64> = grid
        .frequencies()
        .iter()
        .map(|&xi| {
            let c = if xi.abs() > band {
                0.0
            } else if xi == 0.0 {
                -depth * radius / l
            } else {
                -depth * (xi * radius).sin() / (xi * l)
            };
            C64::from_polar(c, -xi * l)
        })
        .collect();
    // Undo the 1/n of the inverse transform: we want Σ_k c_k e^{iξ_k x_j}.
    grid.ifft(&mut buf);
    let n = grid.n() as f64;
    buf.iter().map(|v| v.re * n).collect()
}

/// Sample a potential on the grid.
///
/// Smooth families are sampled pointwise. The square well is sampled through
/// its band-limited Fourier projection, which keeps the discrete spectrum
/// accurate despite the discontinuity.
pub fn build_potential(spec: &PotentialSpec, grid: &Grid) -> Result<ScalarField> {
    spec.validate()?;
    spec.check_resolution(grid)?;
    let values = sample(spec, grid);
    ScalarField::new(grid, values)
}

fn sample(spec: &PotentialSpec, grid: &Grid) -> Vec<f64> {
    match spec {
        PotentialSpec::SquareWell { depth, radius } => square_well_samples(*depth, *radius, grid),
        PotentialSpec::Sum { parts } => {
            let mut acc = vec![0.0; grid.n()];
            for p in parts {
                for (a, v) in acc.iter_mut().zip(sample(p, grid)) {
                    *a += v;
                }
            }
            acc
        }
        other => grid.nodes().iter().map(|&x| other.value_at(x)).collect(),
    }
}

/// Gaussian-smoothed step rising from 0 to 1 around `r/2`, equal to 1 in double
/// precision for `|x| ≥ r` and band-limited far better than a compactly supported cutoff.
fn inner_step(r: f64) -> impl Fn(f64) -> f64 {
    move |t: f64| 0.5 * libm::erfc((0.5 * r - t) / (r / 12.0))
}

/// Sup-norm residual of the decomposition of the oscillating potential
/// through the derivative of its cosine antiderivative, using cutoff radii `(1, 2)`.
pub fn antiderivative_decomposition_residual(
    zeta: f64,
    theta: f64,
    k: f64,
    w: f64,
    grid: &Grid,
) -> Result<f64> {
    antiderivative_residual_with_cutoff(zeta, theta, k, w, 1.0, grid)
}

/// Residual of
/// `W = −(1−κ)/(kζ) · sign(x) ∂ₓŴ − (1−κ) γ/(kζ|x|) · Ŵ`, `γ = θ + ζ − 1`,
/// where `W` is the oscillating potential with cutoff radius `r` and `Ŵ` the
/// tilde profile `w cos(k|x|^ζ)/|x|^γ` switched on by a smoothed step that equals 1
/// wherever `1 − κ` is nonzero. `∂ₓŴ` is a spectral derivative of the tapered samples.
/// The sup-norm is taken over nodes with `2r ≤ |x| ≤ 0.8L`.
pub fn antiderivative_residual_with_cutoff(
    zeta: f64,
    theta: f64,
    k: f64,
    w: f64,
    cutoff_radius: f64,
    grid: &Grid,
) -> Result<f64> {
    if !(zeta + theta > 1.0) {
        return Err(Error::invalid("zeta+theta", "must exceed 1 so that γ > 0"));
    }
    let gamma = theta + zeta - 1.0;
    let osc = PotentialSpec::Oscillating {
        w,
        k,
        zeta,
        theta,
        cutoff_radius,
    };
    let tilde = PotentialSpec::TildeOscillating {
        w,
        k,
        zeta,
        gamma,
        cutoff_radius: 0.5 * cutoff_radius,
    };
    osc.validate()?;
    osc.check_resolution(grid)?;
    tilde.check_resolution(grid)?;
    let outer = 2.0 * cutoff_radius;
    if outer >= 0.8 * grid.half_length() {
        return Err(Error::invalid(
            "cutoff_radius",
            "comparison window [2r, 0.8L] is empty",
        ));
    }
    let taper = edge_taper(grid);
    let inner = inner_step(cutoff_radius);
    let what: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(&taper)
        .map(|(&x, t)| {
            let step = inner(x.abs());
            if step == 0.0 || x == 0.0 {
                0.0
            } else {
                let r = x.abs();
                w * (k * r.powf(zeta)).cos() / r.powf(gamma) * step * t
            }
        })
        .collect();
    let dwhat = grid.derivative(&what);
    let kappa = cutoff(cutoff_radius);
    let mut worst: f64 = 0.0;
    for (j, &x) in grid.nodes().iter().enumerate() {
        let r = x.abs();
        if r < outer || r > 0.8 * grid.half_length() {
            continue;
        }
        let one_minus = 1.0 - kappa.value(r);
        let rhs = -one_minus / (k * zeta) * x.signum() * dwhat[j]
            - one_minus * gamma / (k * zeta * r) * what[j];
        worst = worst.max((osc.value_at(x) - rhs).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_plateau_and_support() {
        let g = Grid::new(10.0, 512).unwrap();
        let spec = CutoffSpec::new(1.0, 2.0).unwrap();
        let k = smooth_cutoff(&spec, &g).unwrap();
        let j0 = g.n() / 2;
        assert_eq!(k.values()[j0], 1.0);
        assert_eq!(spec.value(2.0 + g.spacing()), 0.0);
        for (x, v) in g.nodes().iter().zip(k.values()) {
            assert!((0.0..=1.0).contains(v));
            if x.abs() >= 2.0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn cutoff_monotone_on_transition() {
        let g = Grid::new(10.0, 2048).unwrap();
        let spec = CutoffSpec::new(1.0, 2.0).unwrap();
        let k = smooth_cutoff(&spec, &g).unwrap();
        let pts: Vec<(f64, f64)> = g
            .nodes()
            .iter()
            .zip(k.values())
            .filter(|(x, _)| **x >= 1.0 && **x <= 2.0)
            .map(|(x, v)| (*x, *v))
            .collect();
        for w in pts.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn cutoff_rejects_large_radius() {
        let g = Grid::new(2.0, 64).unwrap();
        assert!(smooth_cutoff(&CutoffSpec::new(1.0, 2.5).unwrap(), &g).is_err());
        assert!(CutoffSpec::new(2.0, 1.0).is_err());
    }

    #[test]
    fn zero_and_wvn_values() {
        let g = Grid::new(5.0, 64).unwrap();
        let z = build_potential(&PotentialSpec::Zero, &g).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        let w = PotentialSpec::WignerVonNeumann { w: 1.0, k: 2.0 };
        assert_eq!(w.value_at(0.0), 2.0);
        assert!((w.value_at(0.7) - (1.4f64).sin() / 0.7).abs() < 1e-15);
        assert!((w.value_at(-0.7) - w.value_at(0.7)).abs() < 1e-15);
    }

    #[test]
    fn oscillating_vanishes_inside_cutoff() {
        let spec = PotentialSpec::Oscillating {
            w: 1.0,
            k: 1.0,
            zeta: 2.0,
            theta: 0.5,
            cutoff_radius: 1.0,
        };
        for x in [-1.0, -0.5, 0.0, 0.3, 1.0] {
            assert_eq!(spec.value_at(x), 0.0);
        }
    }

    #[test]
    fn resolution_guard_trips() {
        let g = Grid::new(40.0, 256).unwrap();
        let spec = PotentialSpec::Oscillating {
            w: 1.0,
            k: 1.0,
            zeta: 2.0,
            theta: 0.5,
            cutoff_radius: 1.0,
        };
        match build_potential(&spec, &g) {
            Err(Error::UnderResolved { increment, .. }) => assert!(increment > PHASE_LIMIT),
            other => panic!("expected under-resolution error, got {other:?}"),
        }
    }

    #[test]
    fn json_encoding_is_tagged() {
        let spec = PotentialSpec::SquareWell {
            depth: 2.0,
            radius: 1.0,
        };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"family":"square_well","params":{"depth":2.0,"radius":1.0}}"#);
        let back: PotentialSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        let zero: PotentialSpec = serde_json::from_str(r#"{"family":"zero"}"#).unwrap();
        assert_eq!(zero, PotentialSpec::Zero);
    }

    #[test]
    fn square_well_projection_approximates_step() {
        let g = Grid::new(10.0, 1024).unwrap();
        let spec = PotentialSpec::SquareWell {
            depth: 2.0,
            radius: 1.0,
        };
        let v = build_potential(&spec, &g).unwrap();
        assert!(v.is_even(1e-10));
        for (x, val) in g.nodes().iter().zip(v.values()) {
            if (x.abs() - 1.0).abs() > 0.3 {
                assert!((val - spec.value_at(*x)).abs() < 0.05, "x = {x}, v = {val}");
            }
        }
    }

    #[test]
    fn sum_is_nodewise() {
        let g = Grid::new(8.0, 128).unwrap();
        let a = PotentialSpec::ShortRange {
            amplitude: 1.0,
            rho: 0.5,
        };
        let b = PotentialSpec::LongRange {
            amplitude: -2.0,
            rho: 0.3,
        };
        let s = PotentialSpec::Sum {
            parts: vec![a.clone(), b.clone()],
        };
        let vs = build_potential(&s, &g).unwrap();
        let va = build_potential(&a, &g).unwrap();
        let vb = build_potential(&b, &g).unwrap();
        for j in 0..g.n() {
            assert!((vs.values()[j] - va.values()[j] - vb.values()[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn decomposition_residual_zero_amplitude() {
        let g = Grid::new(40.0, 1024).unwrap();
        let r = antiderivative_decomposition_residual(1.0, 1.0, 1.0, 0.0, &g).unwrap();
        assert_eq!(r, 0.0);
    }
}
