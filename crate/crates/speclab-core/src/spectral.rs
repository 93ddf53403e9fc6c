//! Eigensolvers, embedded-eigenvalue detection and the weighted-resolvent
//! (limiting absorption) probe.

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_slices, Grid, StateVector};
use crate::linalg;
use crate::operators::{build_hamiltonian, OperatorRep, DENSE_LIMIT};
use crate::par;
use crate::potentials::{build_potential, PotentialSpec};
use crate::C64;

/// Part of the spectrum requested from an eigensolver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    /// All eigenvalues in `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// The `count` lowest eigenvalues.
    Lowest { count: usize },
}

impl Window {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Window::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::invalid("window", "need finite lo ≤ hi"));
                }
            }
            Window::Lowest { count } => {
                if count == 0 {
                    return Err(Error::invalid("window.count", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Eigenvalue with unit-norm eigenvector and residual `‖Hψ − Eψ‖`.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub eigenvalue: f64,
    pub vector: StateVector,
    pub residual: f64,
}

/// Eigensolver route.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    /// Dense when `n ≤ DENSE_LIMIT`, iterative otherwise.
    Auto,
    Dense,
    Iterative,
}

/// Settings of the shift-invert Lanczos path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativeOptions {
    /// Initial Krylov dimension; doubled until the window converges.
    pub krylov_dim: usize,
    /// Largest Krylov dimension tried.
    pub max_krylov_dim: usize,
    /// Relative tolerance of the inner MINRES solves.
    pub inner_tol: f64,
    /// Iteration cap of each inner solve.
    pub inner_max_iter: usize,
    /// Accepted eigen-residual `‖Hψ − Eψ‖` relative to `max(1, |E|)`.
    pub residual_tol: f64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        IterativeOptions {
            krylov_dim: 40,
            max_krylov_dim: 640,
            inner_tol: 1e-13,
            inner_max_iter: 50_000,
            residual_tol: 1e-8,
        }
    }
}

/// Eigenpairs of a Hermitian operator in a window, sorted ascending.
pub fn eigenpairs(h: &OperatorRep, window: Window) -> Result<Vec<EigenPair>> {
    eigenpairs_with(h, window, SolverPath::Auto, &IterativeOptions::default())
}

/// Eigenpairs with an explicit solver route.
pub fn eigenpairs_with(
    h: &OperatorRep,
    window: Window,
    path: SolverPath,
    opts: &IterativeOptions,
) -> Result<Vec<EigenPair>> {
    if !h.is_hermitian() {
        return Err(Error::invalid("operator", "eigenpairs needs a Hermitian operator"));
    }
    window.validate()?;
    let dense = match path {
        SolverPath::Auto => h.grid().n() <= DENSE_LIMIT,
        SolverPath::Dense => true,
        SolverPath::Iterative => false,
    };
    if dense {
        dense_eigenpairs(h, window)
    } else {
        iterative_eigenpairs(h, window, opts)
    }
}

fn make_pair(h: &OperatorRep, eigenvalue: f64, mut v: Vec<C64>) -> EigenPair {
    let grid = h.grid();
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(C64::new(1.0, 0.0));
    let phase = if pivot.norm() > 0.0 {
        pivot.conj() / pivot.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let scale = (grid.spacing() * v.iter().map(|x| x.norm_sqr()).sum::<f64>()).sqrt();
    v.iter_mut().for_each(|x| *x = *x * phase / scale);
    let hv = h.apply_values(&v);
    let r: f64 = hv
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - b * eigenvalue).norm_sqr())
        .sum::<f64>();
    EigenPair {
        eigenvalue,
        residual: (grid.spacing() * r).sqrt(),
        vector: StateVector::from_vec_unchecked(grid, v),
    }
}

fn dense_eigenpairs(h: &OperatorRep, window: Window) -> Result<Vec<EigenPair>> {
    let m = h.dense()?;
    let grid = h.grid().clone();
    let mirror = move |j: usize| grid.mirror(j);
    let eig = linalg::hermitian_eigen(&m, Some(&mirror))?;
    let n = eig.values.len();
    let chosen: Vec<usize> = match window {
        Window::Interval { lo, hi } => (0..n)
            .filter(|&k| eig.values[k] >= lo && eig.values[k] <= hi)
            .collect(),
        Window::Lowest { count } => (0..count.min(n)).collect(),
    };
    Ok(par::map(&chosen, |&k| {
        let v: Vec<C64> = (0..n).map(|i| eig.vectors[(i, k)]).collect();
        make_pair(h, eig.values[k], v)
    }))
}

/// MINRES for Hermitian `A x = b` with `A = H − σ`. Returns `(x, relative residual estimate)`.
fn minres<F: Fn(&[C64]) -> Vec<C64>>(a: F, b: &[C64], tol: f64, max_iter: usize) -> (Vec<C64>, f64) {
    let n = b.len();
    let zero = C64::new(0.0, 0.0);
    let norm = |v: &[C64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let beta1 = norm(b);
    let mut x = vec![zero; n];
    if beta1 == 0.0 {
        return (x, 0.0);
    }
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let mut w = vec![zero; n];
    let mut w2 = vec![zero; n];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0, 0.0);
    for itn in 1..=max_iter {
        let v: Vec<C64> = y.iter().map(|t| t / beta).collect();
        y = a(&v);
        if itn >= 2 {
            let c = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(t, r)| *t -= r * c);
        }
        let alfa = v.iter().zip(&y).map(|(p, q)| p.conj() * q).sum::<C64>().re;
        let c = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(t, r)| *t -= r * c);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = norm(&y);
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(1e-300);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for i in 0..n {
            w[i] = (v[i] - w1[i] * oldeps - w2[i] * delta) / gamma;
            x[i] += w[i] * phi;
        }
        if phibar <= tol * beta1 || beta == 0.0 {
            break;
        }
    }
    (x, phibar / beta1)
}

/// Krylov basis and tridiagonal coefficients of a Lanczos run.
struct Lanczos {
    basis: Vec<Vec<C64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    exhausted: bool,
}

impl Lanczos {
    fn new(n: usize) -> Self {
        let mut q = linalg::start_vector(n);
        let nq = q.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        q.iter_mut().for_each(|x| *x /= nq);
        Lanczos {
            basis: vec![q],
            alpha: Vec::new(),
            beta: Vec::new(),
            exhausted: false,
        }
    }

    fn extend<F: Fn(&[C64]) -> Vec<C64>>(&mut self, op: &F, steps: usize) {
        let n = self.basis[0].len();
        while self.alpha.len() < steps && !self.exhausted {
            let j = self.alpha.len();
            let mut w = op(&self.basis[j]);
            let a = self.basis[j]
                .iter()
                .zip(&w)
                .map(|(p, q)| p.conj() * q)
                .sum::<C64>()
                .re;
            self.alpha.push(a);
            for _ in 0..2 {
                for v in &self.basis {
                    let c: C64 = v.iter().zip(&w).map(|(p, q)| p.conj() * q).sum();
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if b < 1e-13 * a.abs().max(1e-300) || j + 1 == n {
                self.exhausted = true;
                break;
            }
            self.beta.push(b);
            self.basis.push(w.into_iter().map(|x| x / b).collect());
        }
    }

    /// Ritz values and Ritz vectors of the current Krylov space.
    fn ritz(&self) -> Result<Vec<(f64, Vec<C64>)>> {
        let m = self.alpha.len();
        let t = Mat::<f64>::from_fn(m, m, |i, j| {
            if i == j {
                self.alpha[i]
            } else if i + 1 == j {
                self.beta[i]
            } else if j + 1 == i {
                self.beta[j]
            } else {
                0.0
            }
        });
        let e = t
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Numerical(format!("Lanczos tridiagonal eigensolve: {e:?}")))?;
        let n = self.basis[0].len();
        Ok((0..m)
            .map(|k| {
                let mut v = vec![C64::new(0.0, 0.0); n];
                for (j, q) in self.basis.iter().take(m).enumerate() {
                    let c = e.U()[(j, k)];
                    v.iter_mut().zip(q).for_each(|(x, y)| *x += y * c);
                }
                (e.S()[k], v)
            })
            .collect())
    }
}

fn iterative_eigenpairs(
    h: &OperatorRep,
    window: Window,
    opts: &IterativeOptions,
) -> Result<Vec<EigenPair>> {
    let grid = h.grid();
    let n = grid.n();
    let sigma = match window {
        Window::Interval { lo, hi } => 0.5 * (lo + hi) + 1e-7 * (hi - lo).max(1e-3),
        Window::Lowest { .. } => lower_bound(h) - 1.0,
    };
    let shifted = |v: &[C64]| -> Vec<C64> {
        let mut y = h.apply_values(v);
        y.iter_mut().zip(v).for_each(|(a, b)| *a -= b * sigma);
        y
    };
    let op = |v: &[C64]| minres(shifted, v, opts.inner_tol, opts.inner_max_iter).0;
    let mut lz = Lanczos::new(n);
    let mut dim = opts.krylov_dim.max(4).min(n);
    let mut worst: f64;
    loop {
        lz.extend(&op, dim);
        let ritz = lz.ritz()?;
        let mut cands: Vec<(f64, Vec<C64>)> = ritz
            .into_iter()
            .filter(|(t, _)| t.abs() > 1e-300)
            .map(|(t, v)| (sigma + 1.0 / t, v))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let wanted: Vec<(f64, Vec<C64>)> = match window {
            Window::Interval { lo, hi } => cands
                .into_iter()
                .filter(|(e, _)| *e >= lo && *e <= hi)
                .collect(),
            Window::Lowest { count } => cands.into_iter().take(count).collect(),
        };
        let pairs: Vec<EigenPair> = wanted.into_iter().map(|(e, v)| make_pair(h, e, v)).collect();
        let ok = |p: &EigenPair| p.residual <= opts.residual_tol * p.eigenvalue.abs().max(1.0);
        worst = pairs
            .iter()
            .map(|p| p.residual / p.eigenvalue.abs().max(1.0))
            .fold(0.0, f64::max);
        let enough = match window {
            Window::Lowest { count } => pairs.len() >= count.min(n),
            Window::Interval { .. } => true,
        };
        if enough && pairs.iter().all(ok) {
            return Ok(pairs);
        }
        if lz.exhausted || dim >= opts.max_krylov_dim.min(n) {
            break;
        }
        dim = (dim * 2).min(opts.max_krylov_dim).min(n);
    }
    Err(Error::NoConvergence {
        what: "shift-invert Lanczos".into(),
        achieved: worst,
        target: opts.residual_tol,
    })
}

/// Lower bound of `p² + V` from the potential part: `⟨δ_j, Hδ_j⟩` minimum minus the kinetic diagonal.
fn lower_bound(h: &OperatorRep) -> f64 {
    let grid = h.grid();
    let n = grid.n();
    let kin_diag: f64 = grid.frequencies().iter().map(|x| x * x).sum::<f64>() / n as f64;
    let mut best = f64::INFINITY;
    for j in (0..n).step_by((n / 256).max(1)) {
        let mut e = vec![C64::new(0.0, 0.0); n];
        e[j] = C64::new(1.0, 0.0);
        best = best.min(h.apply_values(&e)[j].re - kin_diag);
    }
    best.min(0.0)
}

/// Outcome of the finite-volume embedded-eigenvalue test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Embedded,
    ScatteringArtifact,
    Inconclusive,
}

/// Thresholds of [`detect_embedded`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedOptions {
    /// Largest eigenvalue shift under box doubling for an embedded verdict.
    pub drift_tol: f64,
    /// Minimum localization for an embedded verdict.
    pub localization_embedded: f64,
    /// Localization below which a candidate is an artifact.
    pub localization_artifact: f64,
    /// Drift above `drift_factor · drift_tol` marks an artifact.
    pub drift_factor: f64,
    /// Pairing guard band in units of the doubled-box level gap.
    pub guard_gaps: f64,
}

impl Default for EmbeddedOptions {
    fn default() -> Self {
        EmbeddedOptions {
            drift_tol: 1e-3,
            localization_embedded: 0.99,
            localization_artifact: 0.5,
            drift_factor: 10.0,
            guard_gaps: 3.0,
        }
    }
}

impl EmbeddedOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be positive"))
            }
        };
        pos("drift_tol", self.drift_tol)?;
        pos("localization_embedded", self.localization_embedded)?;
        pos("localization_artifact", self.localization_artifact)?;
        pos("drift_factor", self.drift_factor)?;
        pos("guard_gaps", self.guard_gaps)?;
        if self.localization_embedded > 1.0 || self.localization_artifact >= self.localization_embedded {
            return Err(Error::invalid(
                "localization thresholds",
                "need artifact < embedded ≤ 1",
            ));
        }
        Ok(())
    }

    fn classify(&self, localization: f64, drift: Option<f64>) -> Verdict {
        let Some(drift) = drift else {
            return Verdict::Inconclusive;
        };
        if localization > self.localization_embedded && drift < self.drift_tol {
            Verdict::Embedded
        } else if localization < self.localization_artifact
            || drift > self.drift_factor * self.drift_tol
        {
            Verdict::ScatteringArtifact
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Positive eigenvalue of the base box with its robustness evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedCandidate {
    pub eigenvalue: f64,
    /// Fraction of `‖ψ‖²` inside `|x| < L/2`, the smaller of the two boxes.
    pub localization: f64,
    /// Eigenvalue shift when the box is doubled; `None` when unpaired.
    pub drift: Option<f64>,
    /// Paired eigenvalue on the doubled box.
    pub paired_eigenvalue: Option<f64>,
    /// Overlap `|⟨ψ_base, ψ_doubled⟩|` of the paired eigenvectors.
    pub overlap: Option<f64>,
    pub verdict: Verdict,
}

/// Positive eigenvalues in `(0, e_max]` on the base box and on the box of
/// twice the length at the same spacing, paired and classified.
pub fn detect_embedded(
    spec: &PotentialSpec,
    e_max: f64,
    base: &Grid,
    opts: &EmbeddedOptions,
) -> Result<Vec<EmbeddedCandidate>> {
    opts.validate()?;
    let nyq = base.nyquist();
    if !(e_max > 0.0 && e_max < 0.25 * nyq * nyq) {
        return Err(Error::invalid(
            "energy_range",
            format!("E_max must lie in (0, {:.4})", 0.25 * nyq * nyq),
        ));
    }
    let l = base.half_length();
    let doubled = Grid::new(2.0 * l, 2 * base.n())?;
    let v_base = build_potential(spec, base)?;
    let v_doubled = build_potential(spec, &doubled)?;
    let guard = |e: f64| opts.guard_gaps * std::f64::consts::PI * e.max(0.0).sqrt().max(1.0 / l) / l;
    let top = e_max + guard(e_max);
    let (rb, rd) = par::join(
        || {
            let h = build_hamiltonian(&v_base, base)?;
            eigenpairs(&h, Window::Interval { lo: f64::MIN_POSITIVE, hi: e_max })
        },
        || {
            let h = build_hamiltonian(&v_doubled, &doubled)?;
            eigenpairs(&h, Window::Interval { lo: -guard(0.0), hi: top })
        },
    );
    let (base_pairs, doubled_pairs) = (rb?, rd?);
    let offset = base.n() / 2;
    let h = base.spacing();
    let overlap = |a: &EigenPair, b: &EigenPair| {
        let bv = &b.vector.values()[offset..offset + base.n()];
        inner_slices(h, a.vector.values(), bv).norm()
    };
    let gap = |e: f64| std::f64::consts::PI * e.max(0.0).sqrt().max(1.0 / l) / l;
    Ok(base_pairs
        .iter()
        .map(|p| {
            let band = guard(p.eigenvalue);
            let mut near: Vec<&EigenPair> = doubled_pairs
                .iter()
                .filter(|d| (d.eigenvalue - p.eigenvalue).abs() <= band)
                .collect();
            near.sort_by(|a, b| {
                (a.eigenvalue - p.eigenvalue)
                    .abs()
                    .total_cmp(&(b.eigenvalue - p.eigenvalue).abs())
            });
            let tie = 0.1 * gap(p.eigenvalue);
            let best = near.first().map(|first| {
                let d0 = (first.eigenvalue - p.eigenvalue).abs();
                near.iter()
                    .take_while(|d| (d.eigenvalue - p.eigenvalue).abs() <= d0 + tie)
                    .copied()
                    .max_by(|a, b| overlap(p, a).total_cmp(&overlap(p, b)))
                    .unwrap_or(first)
            });
            let loc_base = p.vector.mass_fraction_inside(0.5 * l);
            let (localization, drift, paired, ov) = match best {
                Some(d) => (
                    loc_base.min(d.vector.mass_fraction_inside(0.5 * l)),
                    Some((d.eigenvalue - p.eigenvalue).abs()),
                    Some(d.eigenvalue),
                    Some(overlap(p, d)),
                ),
                None => (loc_base, None, None, None),
            };
            EmbeddedCandidate {
                eigenvalue: p.eigenvalue,
                localization,
                drift,
                paired_eigenvalue: paired,
                overlap: ov,
                verdict: opts.classify(localization, drift),
            }
        })
        .collect())
}

/// Complex absorbing layer `−iη((|x| − x₀)/(L − x₀))²` for `|x| > x₀ = start_fraction · L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Absorber {
    pub start_fraction: f64,
    /// `η`; zero disables the layer.
    pub strength: f64,
}

impl Default for Absorber {
    fn default() -> Self {
        Absorber {
            start_fraction: 0.75,
            strength: 1.0,
        }
    }
}

impl Absorber {
    pub fn disabled() -> Self {
        Absorber {
            start_fraction: 0.75,
            strength: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_fraction > 0.0 && self.start_fraction < 1.0) {
            return Err(Error::invalid("absorber.start_fraction", "must lie in (0, 1)"));
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::invalid("absorber.strength", "must be ≥ 0"));
        }
        Ok(())
    }

    /// Layer profile (without the `−i`) at the grid nodes.
    pub fn profile(&self, grid: &Grid) -> Vec<f64> {
        let l = grid.half_length();
        let x0 = self.start_fraction * l;
        grid.nodes()
            .iter()
            .map(|&x| {
                if x.abs() > x0 {
                    let t = (x.abs() - x0) / (l - x0);
                    self.strength * t * t
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Classification of a weighted-resolvent sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LapClass {
    Convergent,
    Divergent,
    Inconclusive,
}

/// Weighted resolvent norms along a decreasing `μ` sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapReport {
    pub energy: f64,
    pub s: f64,
    pub mu_sequence: Vec<f64>,
    pub norms: Vec<f64>,
    pub classified: LapClass,
    /// `norms.last / norms.first`.
    pub growth_factor: f64,
    pub absorber: Absorber,
}

/// Default `μ` sequence: 8 points geometric from `1e-1` to `1e-3`.
pub fn default_mu_sequence() -> Vec<f64> {
    (0..8).map(|k| 10f64.powf(-1.0 - 2.0 * k as f64 / 7.0)).collect()
}

/// Weighted resolvent probe with the default absorbing layer.
pub fn lap_probe(h: &OperatorRep, lambda: f64, s: f64, mu_sequence: &[f64]) -> Result<LapReport> {
    lap_probe_with(h, lambda, s, mu_sequence, Absorber::default())
}

fn classify_lap(norms: &[f64]) -> (LapClass, f64) {
    let growth = norms[norms.len() - 1] / norms[0];
    if growth > 10.0 {
        return (LapClass::Divergent, growth);
    }
    if norms.len() >= 3 {
        let t = &norms[norms.len() - 3..];
        let close = |a: f64, b: f64| (a - b).abs() < 0.05 * a.abs().max(b.abs());
        if close(t[0], t[1]) && close(t[1], t[2]) && close(t[0], t[2]) {
            return (LapClass::Convergent, growth);
        }
    }
    (LapClass::Inconclusive, growth)
}

/// Largest singular value of `⟨q⟩^{-s}(H − iηW − λ − iμ)^{-1}⟨q⟩^{-s}` for each `μ`.
pub fn lap_probe_with(
    h: &OperatorRep,
    lambda: f64,
    s: f64,
    mu_sequence: &[f64],
    absorber: Absorber,
) -> Result<LapReport> {
    if !h.is_hermitian() {
        return Err(Error::invalid("operator", "LAP probe needs a Hermitian operator"));
    }
    if !(s > 0.5 && s.is_finite()) {
        return Err(Error::invalid("s", "must exceed 1/2"));
    }
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda", "must be finite"));
    }
    if mu_sequence.is_empty() {
        return Err(Error::invalid("mu_sequence", "must be non-empty"));
    }
    if mu_sequence.iter().any(|&m| !(m > 0.0 && m.is_finite()))
        || mu_sequence.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::invalid("mu_sequence", "must be positive and strictly decreasing"));
    }
    absorber.validate()?;
    let grid = h.grid().clone();
    let n = grid.n();
    let m = h.dense()?;
    let layer = absorber.profile(&grid);
    let mut full = (*m).clone();
    for j in 0..n {
        full[(j, j)] -= C64::new(0.0, layer[j]);
    }
    let weight: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| (1.0 + x * x).powf(-0.5 * s))
        .collect();
    let g2 = grid.clone();
    let mirror = move |j: usize| g2.mirror(j);
    let even_weight = layer.iter().enumerate().all(|(j, v)| *v == layer[grid.mirror(j)]);
    let sectors: Vec<(Mat<C64>, Vec<f64>)> = match linalg::parity_sectors(&full, &mirror) {
        Some(bases) if even_weight => bases
            .iter()
            .map(|b| (linalg::compress(&full, b), b.iter().map(|sup| weight[sup[0].0]).collect()))
            .collect(),
        _ => vec![(full, weight)],
    };
    let norms: Vec<Result<f64>> = par::map(mu_sequence, |&mu| {
        let z = C64::new(lambda, mu);
        let mut best: f64 = 0.0;
        for (block, w) in &sectors {
            let d = block.nrows();
            let mut a = block.clone();
            for j in 0..d {
                a[(j, j)] -= z;
            }
            let lu = a.partial_piv_lu();
            let solve = |y: &[C64], adjoint: bool| -> Vec<C64> {
                let mut rhs = Mat::from_fn(d, 1, |i, _| y[i] * w[i]);
                if adjoint {
                    lu.solve_adjoint_in_place(rhs.as_mut());
                } else {
                    lu.solve_in_place(rhs.as_mut());
                }
                (0..d).map(|i| rhs[(i, 0)] * w[i]).collect()
            };
            let (sigma, _, ok) = linalg::top_singular(d, |y| solve(y, false), |y| solve(y, true), 1e-11, 400);
            if !sigma.is_finite() || sigma * mu > 1e14 {
                return Err(Error::Numerical(format!(
                    "λ + iμ numerically singular at μ = {mu:e}"
                )));
            }
            if !ok {
                return Err(Error::NoConvergence {
                    what: format!("weighted resolvent norm at μ = {mu:e}"),
                    achieved: sigma,
                    target: 1e-11,
                });
            }
            best = best.max(sigma);
        }
        Ok(best)
    });
    let norms: Vec<f64> = norms.into_iter().collect::<Result<_>>()?;
    let (classified, growth_factor) = classify_lap(&norms);
    Ok(LapReport {
        energy: lambda,
        s,
        mu_sequence: mu_sequence.to_vec(),
        norms,
        classified,
        growth_factor,
        absorber,
    })
}
