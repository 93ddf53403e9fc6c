//! Measurable versions of the decay, commutator and regularity statements:
//! virial and weighted-commutator identities, tail fits, Mourre probes,
//! hypothesis functionals with their linear-programming fit, and the
//! double-difference regularity integrand.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_slices, Grid, ScalarField, StateVector};
use crate::linalg;
use crate::operators::{
    build_conjugate, check_weight_overflow, commutator, conjugated_hamiltonian,
    free_commutator_symbol, weight_field, ConjugateSpec, OperatorRep, WeightFields, WeightSpec,
};
use crate::par;
use crate::spectral::EigenPair;
use crate::C64;

/// Denominator floor for relative residuals.
pub const FLOOR: f64 = 1e-300;

/// One flat output row: parameter tuple, quantity name and value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub params: String,
    pub quantity: String,
    pub value: f64,
}

impl Row {
    pub fn new(params: impl Into<String>, quantity: impl Into<String>, value: f64) -> Self {
        Row {
            params: params.into(),
            quantity: quantity.into(),
            value,
        }
    }
}

/// Reports that flatten into `(parameters, quantity, value)` rows.
pub trait FlatRows {
    fn rows(&self) -> Vec<Row>;
}

fn h_of(grid: &Grid) -> f64 {
    grid.spacing()
}

fn dot(grid: &Grid, f: &[C64], g: &[C64]) -> C64 {
    inner_slices(h_of(grid), f, g)
}

fn l2(grid: &Grid, f: &[C64]) -> f64 {
    (h_of(grid) * f.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
}

/// Normalized virial defect `|⟨ψ,[H,iA]ψ⟩| / (‖[H,iA]ψ‖·‖ψ‖ + floor)`.
pub fn virial_check(h: &OperatorRep, a: &OperatorRep, pair: &EigenPair) -> Result<f64> {
    let c = commutator(h, a, true)?;
    let psi = &pair.vector;
    let cpsi = c.apply(psi)?;
    let num = crate::inner(psi, &cpsi)?.norm();
    Ok(num / (cpsi.norm() * psi.norm() + FLOOR))
}

/// Both sides of the weighted commutator identity, term by term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedCommutatorTerms {
    /// `(ψ_F, [H, iA_u] ψ_F)`.
    pub lhs: f64,
    /// `(ψ_F, [(F')² − x g', iA_u] ψ_F)`.
    pub weight_commutator: f64,
    /// `−4 ‖λ(p)^{1/2} g^{1/2} A_D ψ_F‖²`.
    pub dilation_square: f64,
    /// `−2 Re(g A_D ψ_F, i λ'(p) p ψ_F)`.
    pub lambda_gradient: f64,
    /// `+4 Re([g^{1/2}, λ(p)] g^{1/2} A_D ψ_F, A_D ψ_F)`.
    pub root_commutator: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / (|lhs| + |rhs| + floor)`.
    pub residual: f64,
    /// `|lhs − rhs| / (|lhs| + |rhs| + ‖[H,iA_u]ψ_F‖·‖ψ_F‖ + floor)`, well defined when both sides vanish.
    pub scaled_residual: f64,
    /// Form-sense `(ψ_F, [H(F), iA_u] ψ_F) = −2 Im(H(F)ψ_F, A_u ψ_F)`, zero for exact eigenvectors.
    pub conjugated_virial: f64,
}

/// `ψ_F = e^F ψ` with overflow checking.
pub fn weighted_state(psi: &StateVector, w: &WeightFields) -> Result<StateVector> {
    check_weight_overflow(w)?;
    let vals: Vec<C64> = psi
        .values()
        .iter()
        .zip(w.f.values())
        .map(|(v, f)| v * f.exp())
        .collect();
    StateVector::new(psi.grid(), vals)
}

/// Assemble both sides of the weighted commutator identity.
pub fn weighted_commutator_terms(
    h: &OperatorRep,
    v: &ScalarField,
    spec: &ConjugateSpec,
    weight: &WeightSpec,
    pair: &EigenPair,
) -> Result<WeightedCommutatorTerms> {
    let grid = h.grid().clone();
    grid.check_same(v.grid())?;
    grid.check_same(pair.vector.grid())?;
    let w = weight_field(weight, &grid)?;
    let psi_f = weighted_state(&pair.vector, &w)?;
    let pf = psi_f.values();
    let au = build_conjugate(spec, &grid)?;
    let ad = build_conjugate(&ConjugateSpec::Dilation, &grid)?;

    let c_h = commutator(h, &au, true)?;
    let c_h_psi = c_h.apply_values(pf);
    let lhs = dot(&grid, pf, &c_h_psi).re;

    let xg: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(w.lapl.values().iter().zip(w.g.values()))
        .map(|(_, (lapl, g))| lapl - g)
        .collect();
    let m_vals: Vec<f64> = w
        .grad
        .values()
        .iter()
        .zip(&xg)
        .map(|(d, xg)| d * d - xg)
        .collect();
    let m = OperatorRep::multiplication(&ScalarField::new(&grid, m_vals)?, "(F')² − x g'");
    let c_m = commutator(&m, &au, true)?;
    let weight_commutator = dot(&grid, pf, &c_m.apply_values(pf)).re;

    let adpsi = ad.apply_values(pf);
    let sqrt_g: Vec<f64> = w.g.values().iter().map(|g| g.max(0.0).sqrt()).collect();
    let ga: Vec<C64> = adpsi.iter().zip(&sqrt_g).map(|(a, s)| a * *s).collect();
    let mut lam_half = ga.clone();
    let sqrt_lam: Vec<f64> = grid.frequencies().iter().map(|&xi| spec.lambda(xi).0.sqrt()).collect();
    grid.multiply_real_in_place(&sqrt_lam, &mut lam_half);
    let dilation_square = -4.0 * l2(&grid, &lam_half).powi(2);

    let dlam_p: Vec<f64> = grid.frequencies().iter().map(|&xi| spec.lambda(xi).1 * xi).collect();
    let mut grad_p = pf.to_vec();
    grid.multiply_real_in_place(&dlam_p, &mut grad_p);
    let i = C64::new(0.0, 1.0);
    let grad_p: Vec<C64> = grad_p.into_iter().map(|v| v * i).collect();
    let g_ad: Vec<C64> = adpsi.iter().zip(w.g.values()).map(|(a, g)| a * *g).collect();
    let lambda_gradient = -2.0 * dot(&grid, &g_ad, &grad_p).re;

    let lam: Vec<f64> = grid.frequencies().iter().map(|&xi| spec.lambda(xi).0).collect();
    let mut lam_ga = ga.clone();
    grid.multiply_real_in_place(&lam, &mut lam_ga);
    let g_lam_ga: Vec<C64> = lam_ga.iter().zip(&sqrt_g).map(|(a, s)| a * *s).collect();
    let sq_ga: Vec<C64> = ga.iter().zip(&sqrt_g).map(|(a, s)| a * *s).collect();
    let mut lam_sq_ga = sq_ga;
    grid.multiply_real_in_place(&lam, &mut lam_sq_ga);
    let comm: Vec<C64> = g_lam_ga.iter().zip(&lam_sq_ga).map(|(a, b)| a - b).collect();
    let root_commutator = 4.0 * dot(&grid, &comm, &adpsi).re;

    let rhs = weight_commutator + dilation_square + lambda_gradient + root_commutator;
    let diff = (lhs - rhs).abs();
    let scale = l2(&grid, &c_h_psi) * psi_f.norm();

    let hf = conjugated_hamiltonian(h, weight, &grid)?;
    let hf_psi = hf.apply_values(pf);
    let au_psi = au.apply_values(pf);
    let conjugated_virial = -2.0 * dot(&grid, &hf_psi, &au_psi).im;

    Ok(WeightedCommutatorTerms {
        lhs,
        weight_commutator,
        dilation_square,
        lambda_gradient,
        root_commutator,
        rhs,
        residual: diff / (lhs.abs() + rhs.abs() + FLOOR),
        scaled_residual: diff / (lhs.abs() + rhs.abs() + scale + FLOOR),
        conjugated_virial,
    })
}

/// Relative residual of the weighted commutator identity.
pub fn lemma41_residual(
    h: &OperatorRep,
    v: &ScalarField,
    spec: &ConjugateSpec,
    weight: &WeightSpec,
    pair: &EigenPair,
) -> Result<f64> {
    Ok(weighted_commutator_terms(h, v, spec, weight, pair)?.residual)
}

/// Residuals of `H(F)ψ_F = Eψ_F` and of `(ψ_F,Hψ_F) = (ψ_F,((F')²+E)ψ_F)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugationCheck {
    /// `‖H(F)ψ_F − Eψ_F‖ / ‖ψ_F‖`.
    pub eigen_residual: f64,
    /// `|(ψ_F,Hψ_F) − (ψ_F,((F')²+E)ψ_F)| / ‖ψ_F‖²`.
    pub form_residual: f64,
}

/// Check the conjugated eigen-relation and its quadratic form.
pub fn conjugation_check(h: &OperatorRep, weight: &WeightSpec, pair: &EigenPair) -> Result<ConjugationCheck> {
    let grid = h.grid().clone();
    let w = weight_field(weight, &grid)?;
    let psi_f = weighted_state(&pair.vector, &w)?;
    let pf = psi_f.values();
    let e = pair.eigenvalue;
    let hf = conjugated_hamiltonian(h, weight, &grid)?;
    let r: Vec<C64> = hf.apply_values(pf).iter().zip(pf).map(|(a, b)| a - b * e).collect();
    let n2 = psi_f.norm().powi(2);
    let hp = h.apply_values(pf);
    let lhs = dot(&grid, pf, &hp);
    let rhs_vec: Vec<C64> = pf
        .iter()
        .zip(w.grad.values())
        .map(|(v, d)| v * (d * d + e))
        .collect();
    let rhs = dot(&grid, pf, &rhs_vec);
    Ok(ConjugationCheck {
        eigen_residual: l2(&grid, &r) / psi_f.norm().max(FLOOR),
        form_residual: (lhs - rhs).norm() / n2.max(FLOOR),
    })
}

/// Tail-decay fit of an eigenfunction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub energy: f64,
    pub beta_grid: Vec<f64>,
    /// Accepted rate per `β` (0 when the fit is rejected or the slope is negative).
    pub alpha_star: Vec<f64>,
    /// Raw least-squares slope per `β`.
    pub alpha_fit: Vec<f64>,
    /// Relative fit residual per `β`: rms residual over the range of `−log|ψ|`.
    pub fit_residual: Vec<f64>,
    pub fit_window: (f64, f64),
    /// Number of samples in the window above the noise floor.
    pub fit_points: usize,
    /// `max_β (alpha_star² + E)`.
    pub s_e_estimate: f64,
    /// Quadratic extrapolation of `alpha_star` to `β = 1` from the three largest `β`.
    pub alpha_limit: Option<f64>,
    /// `|ψ|` at `|x| ≥ 0.9L` exceeds `1e-10 · max|ψ|`.
    pub boundary_limited: bool,
    /// Super-exponential tail: the rate grows across the window or the
    /// signal drops below the noise floor before the window starts.
    pub unbounded: bool,
    /// Ratio of the late to early linear decay rates in the window.
    pub tail_rate_ratio: f64,
}

/// Options of [`decay_profile`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    pub window_lo: f64,
    pub window_hi: f64,
    /// Relative noise floor below which samples are ignored.
    pub noise_floor: f64,
    /// Samples below this multiple of the median `|ψ|` on `|x| ≥ 0.95L` are
    /// treated as solver noise when that median is itself below `1e-9 · max|ψ|`.
    pub noise_margin: f64,
    /// Fit acceptance threshold on the relative residual.
    pub residual_gate: f64,
    /// Rate-growth ratio above which the tail counts as super-exponential.
    pub super_exp_ratio: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            window_lo: 0.4,
            window_hi: 0.85,
            noise_floor: 1e-12,
            noise_margin: 100.0,
            residual_gate: 0.05,
            super_exp_ratio: 1.2,
        }
    }
}

/// Default `β` grid of the probes.
pub fn default_beta_grid() -> Vec<f64> {
    vec![0.7, 0.8, 0.9, 0.95]
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - icpt - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icpt, rms)
}

/// Fit `−log|ψ| ≈ c + α⟨x⟩^β` on the tail window of both half-lines.
pub fn decay_profile(pair: &EigenPair, beta_grid: &[f64], grid: &Grid) -> Result<DecayReport> {
    decay_profile_with(pair, beta_grid, grid, &DecayOptions::default())
}

pub fn decay_profile_with(
    pair: &EigenPair,
    beta_grid: &[f64],
    grid: &Grid,
    opts: &DecayOptions,
) -> Result<DecayReport> {
    grid.check_same(pair.vector.grid())?;
    if beta_grid.is_empty() || beta_grid.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
        return Err(Error::invalid("beta_grid", "needs values in (0, 1)"));
    }
    if !(0.0 < opts.window_lo && opts.window_lo < opts.window_hi && opts.window_hi <= 0.85) {
        return Err(Error::invalid("fit_window", "must lie inside [0.4L, 0.85L]"));
    }
    if !(opts.window_lo >= 0.4) {
        return Err(Error::invalid("fit_window", "must lie inside [0.4L, 0.85L]"));
    }
    if pair.residual >= 1e-8 {
        return Err(Error::invalid(
            "pair",
            format!("eigen-residual {:.3e} exceeds 1e-8", pair.residual),
        ));
    }
    let l = grid.half_length();
    let amp: Vec<f64> = pair.vector.values().iter().map(|v| v.norm()).collect();
    let peak = amp.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::invalid("pair", "zero eigenvector"));
    }
    let boundary_limited = grid
        .nodes()
        .iter()
        .zip(&amp)
        .any(|(x, a)| x.abs() >= 0.9 * l && *a > 1e-10 * peak);
    let mut outer: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(&amp)
        .filter(|(x, _)| x.abs() >= 0.95 * l)
        .map(|(_, a)| *a)
        .collect();
    outer.sort_by(f64::total_cmp);
    let noise = outer.get(outer.len() / 2).copied().unwrap_or(0.0);
    let floor = if noise <= 1e-9 * peak {
        (opts.noise_floor * peak).max(opts.noise_margin * noise)
    } else {
        opts.noise_floor * peak
    };
    let (lo, hi) = (opts.window_lo * l, opts.window_hi * l);
    let pts: Vec<(f64, f64)> = grid
        .nodes()
        .iter()
        .zip(&amp)
        .filter(|(x, a)| x.abs() >= lo && x.abs() <= hi && **a > floor)
        .map(|(x, a)| (x.abs(), -(a / peak).ln()))
        .collect();

    let mut alpha_fit = Vec::new();
    let mut alpha_star = Vec::new();
    let mut fit_residual = Vec::new();
    let mut tail_rate_ratio = f64::NAN;
    let unbounded;
    if pts.len() < 8 {
        unbounded = grid
            .nodes()
            .iter()
            .zip(&amp)
            .all(|(x, a)| x.abs() < lo || *a <= floor);
        for _ in beta_grid {
            alpha_fit.push(0.0);
            alpha_star.push(0.0);
            fit_residual.push(f64::INFINITY);
        }
    } else {
        let xmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
        let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let mid = 0.5 * (xmin + xmax);
        let half = |first: bool| -> f64 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts
                .iter()
                .filter(|p| (p.0 <= mid) == first)
                .map(|p| (p.0, p.1))
                .unzip();
            if xs.len() < 3 {
                f64::NAN
            } else {
                least_squares(&xs, &ys).0
            }
        };
        let (early, late) = (half(true), half(false));
        tail_rate_ratio = late / early;
        unbounded = early > 0.0 && tail_rate_ratio > opts.super_exp_ratio;
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let range = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - ys.iter().copied().fold(f64::INFINITY, f64::min);
        for &beta in beta_grid {
            let xs: Vec<f64> = pts.iter().map(|p| (1.0 + p.0 * p.0).powf(0.5 * beta)).collect();
            let (slope, _, rms) = least_squares(&xs, &ys);
            let rel = rms / range.max(FLOOR);
            alpha_fit.push(slope);
            fit_residual.push(rel);
            alpha_star.push(if rel < opts.residual_gate && slope > 0.0 { slope } else { 0.0 });
        }
    }
    let e = pair.eigenvalue;
    let s_e_estimate = alpha_star
        .iter()
        .map(|a| a * a + e)
        .fold(f64::NEG_INFINITY, f64::max);
    let alpha_limit = extrapolate_to_one(beta_grid, &alpha_star);
    Ok(DecayReport {
        energy: e,
        beta_grid: beta_grid.to_vec(),
        alpha_star,
        alpha_fit,
        fit_residual: fit_residual
            .into_iter()
            .map(|r| if r.is_finite() { r } else { f64::MAX })
            .collect(),
        fit_window: (lo, hi),
        fit_points: pts.len(),
        s_e_estimate,
        alpha_limit,
        boundary_limited,
        unbounded,
        tail_rate_ratio: if tail_rate_ratio.is_finite() { tail_rate_ratio } else { 0.0 },
    })
}

fn extrapolate_to_one(beta: &[f64], alpha: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..beta.len()).collect();
    idx.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]));
    match idx.len() {
        0 => None,
        1 | 2 => Some(alpha[idx[0]]),
        _ => {
            let (x0, x1, x2) = (beta[idx[0]], beta[idx[1]], beta[idx[2]]);
            let (y0, y1, y2) = (alpha[idx[0]], alpha[idx[1]], alpha[idx[2]]);
            let t = 1.0;
            let l0 = (t - x1) * (t - x2) / ((x0 - x1) * (x0 - x2));
            let l1 = (t - x0) * (t - x2) / ((x1 - x0) * (x1 - x2));
            let l2 = (t - x0) * (t - x1) / ((x2 - x0) * (x2 - x1));
            Some((y0 * l0 + y1 * l1 + y2 * l2).max(0.0))
        }
    }
}

impl FlatRows for DecayReport {
    fn rows(&self) -> Vec<Row> {
        let mut rows = Vec::new();
        for (k, b) in self.beta_grid.iter().enumerate() {
            let p = format!("E={};beta={}", self.energy, b);
            rows.push(Row::new(&p, "alpha_star", self.alpha_star[k]));
            rows.push(Row::new(&p, "alpha_fit", self.alpha_fit[k]));
            rows.push(Row::new(&p, "fit_residual", self.fit_residual[k]));
        }
        let p = format!("E={}", self.energy);
        rows.push(Row::new(&p, "s_e_estimate", self.s_e_estimate));
        if let Some(a) = self.alpha_limit {
            rows.push(Row::new(&p, "alpha_limit", a));
        }
        rows.push(Row::new(&p, "boundary_limited", self.boundary_limited as u8 as f64));
        rows.push(Row::new(&p, "unbounded", self.unbounded as u8 as f64));
        rows
    }
}

/// Compressed commutator on a spectral window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MourreReport {
    pub interval: (f64, f64),
    pub conjugate: String,
    /// `(r+1)`-th lowest eigenvalue of the compressed commutator.
    pub c0_estimate: f64,
    /// Lowest eigenvalue of the compressed commutator.
    pub raw_bottom: f64,
    pub discard_r: usize,
    pub rank_i: usize,
    /// Lowest few eigenvalues of the compressed commutator.
    pub spectrum_bottom: Vec<f64>,
}

impl FlatRows for MourreReport {
    fn rows(&self) -> Vec<Row> {
        let p = format!("I=[{},{}];r={}", self.interval.0, self.interval.1, self.discard_r);
        vec![
            Row::new(&p, "raw_bottom", self.raw_bottom),
            Row::new(&p, "c0_estimate", self.c0_estimate),
            Row::new(&p, "rank_I", self.rank_i as f64),
        ]
    }
}

/// `2p·u(p) + [V, iA_u]`: the commutator `[H, iA_u]` with its kinetic part in closed form.
pub fn formal_commutator(v: &ScalarField, spec: &ConjugateSpec) -> Result<OperatorRep> {
    let grid = v.grid();
    let kin = free_commutator_symbol(spec, grid)?;
    let au = build_conjugate(spec, grid)?;
    let vm = OperatorRep::multiplication(v, "V");
    let cv = commutator(&vm, &au, true)?;
    Ok(kin.add(&cv)?.with_hermitian(true).with_label("[H, iA_u]"))
}

/// Spectrum bottom of `E(I)[H,iA_u]E(I)` restricted to the range of `E(I)`.
pub fn mourre_probe(
    h: &OperatorRep,
    v: &ScalarField,
    spec: &ConjugateSpec,
    interval: (f64, f64),
    discard_r: usize,
) -> Result<MourreReport> {
    let grid = h.grid().clone();
    grid.check_same(v.grid())?;
    let (a, b) = interval;
    let nyq2 = grid.nyquist().powi(2);
    if !(a > 0.0 && b > a && b < nyq2) {
        return Err(Error::invalid(
            "interval",
            format!("must satisfy 0 < a < b < {nyq2:.4}"),
        ));
    }
    let pairs = crate::spectral::eigenpairs(h, crate::spectral::Window::Interval { lo: a, hi: b })?;
    let rank = pairs.len();
    if rank == 0 {
        return Err(Error::invalid("interval", "empty spectral window"));
    }
    if discard_r >= rank {
        return Err(Error::invalid(
            "discard_r",
            format!("must be below rank {rank}"),
        ));
    }
    let c = formal_commutator(v, spec)?;
    let hgrid = grid.spacing();
    let images: Vec<Vec<C64>> = par::map(&pairs, |p| c.apply_values(p.vector.values()));
    let m = Mat::<C64>::from_fn(rank, rank, |i, j| {
        inner_slices(hgrid, pairs[i].vector.values(), &images[j])
    });
    let herm = Mat::<C64>::from_fn(rank, rank, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
    let eig = linalg::hermitian_eigen(&herm, None)?;
    Ok(MourreReport {
        interval,
        conjugate: spec.name().to_string(),
        c0_estimate: eig.values[discard_r],
        raw_bottom: eig.values[0],
        discard_r,
        rank_i: rank,
        spectrum_bottom: eig.values.iter().take(8).copied().collect(),
    })
}

/// Scalars entering the hypothesis functionals at one `(α, β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisProbe {
    pub alpha: f64,
    pub beta: f64,
    /// `(ψ_F, [V, iA_D] ψ_F)` by operator composition.
    pub t_comm: f64,
    /// `(ψ_F, Δ ψ_F)`.
    pub t_kin: f64,
    /// `(ψ_F, (F')² ψ_F)`.
    pub t_grad: f64,
    /// `‖ψ_F‖²`.
    pub t_norm: f64,
    /// `‖g^{1/2} A_D ψ_F‖²`.
    pub t_gad: f64,
    /// `2 Re(qVψ_F, ∇ψ_F)`.
    pub t_cross: f64,
    /// `t_cross + (ψ_F, Vψ_F)`, the integration-by-parts form of `t_comm`.
    pub t_comm_alt: f64,
}

impl HypothesisProbe {
    /// Relative disagreement of the two expressions for `t_comm`.
    pub fn consistency(&self) -> f64 {
        (self.t_comm - self.t_comm_alt).abs() / (self.t_comm.abs() + self.t_comm_alt.abs() + FLOOR)
    }
}

impl FlatRows for HypothesisProbe {
    fn rows(&self) -> Vec<Row> {
        let p = format!("alpha={};beta={}", self.alpha, self.beta);
        vec![
            Row::new(&p, "t_comm", self.t_comm),
            Row::new(&p, "t_kin", self.t_kin),
            Row::new(&p, "t_grad", self.t_grad),
            Row::new(&p, "t_norm", self.t_norm),
            Row::new(&p, "t_gAD", self.t_gad),
            Row::new(&p, "t_cross", self.t_cross),
            Row::new(&p, "t_comm_alt", self.t_comm_alt),
        ]
    }
}

/// Evaluate the hypothesis functionals for `F = α⟨x⟩^β`.
pub fn hypothesis_probe(
    h: &OperatorRep,
    v: &ScalarField,
    pair: &EigenPair,
    alpha: f64,
    beta: f64,
    grid: &Grid,
) -> Result<HypothesisProbe> {
    grid.check_same(h.grid())?;
    grid.check_same(v.grid())?;
    let spec = WeightSpec::pure(alpha, beta);
    let w = weight_field(&spec, grid)?;
    let psi_f = weighted_state(&pair.vector, &w)?;
    let pf = psi_f.values();
    let ad = build_conjugate(&ConjugateSpec::Dilation, grid)?;
    let vm = OperatorRep::multiplication(v, "V");
    let cv = commutator(&vm, &ad, true)?;
    let t_comm = dot(grid, pf, &cv.apply_values(pf)).re;
    let mut lap = pf.to_vec();
    let k2: Vec<f64> = grid.frequencies().iter().map(|x| x * x).collect();
    grid.multiply_real_in_place(&k2, &mut lap);
    let t_kin = dot(grid, pf, &lap).re;
    let gvec: Vec<C64> = pf
        .iter()
        .zip(w.grad.values())
        .map(|(f, d)| f * (d * d))
        .collect();
    let t_grad = dot(grid, pf, &gvec).re;
    let t_norm = psi_f.norm().powi(2);
    let adp = ad.apply_values(pf);
    let gad: Vec<C64> = adp
        .iter()
        .zip(w.g.values())
        .map(|(a, g)| a * g.max(0.0).sqrt())
        .collect();
    let t_gad = l2(grid, &gad).powi(2);
    let ik: Vec<C64> = grid.frequencies().iter().map(|&x| C64::new(0.0, x)).collect();
    let mut dpsi = pf.to_vec();
    grid.multiply_in_place(&ik, &mut dpsi);
    let qv: Vec<C64> = pf
        .iter()
        .zip(grid.nodes().iter().zip(v.values()))
        .map(|(f, (x, vv))| f * (x * vv))
        .collect();
    let t_cross = 2.0 * dot(grid, &qv, &dpsi).re;
    let vpsi: Vec<C64> = pf.iter().zip(v.values()).map(|(f, vv)| f * *vv).collect();
    let t_v = dot(grid, pf, &vpsi).re;
    Ok(HypothesisProbe {
        alpha,
        beta,
        t_comm,
        t_kin,
        t_grad,
        t_norm,
        t_gad,
        t_cross,
        t_comm_alt: t_cross + t_v,
    })
}

/// Options of [`hypothesis_fit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Box bound on `|δ′|, |σ|, |σ′|` (and `|δ″|`); zero fixes them at 0.
    pub nuisance_bound: f64,
    /// Include the `‖g^{1/2}A_Dψ_F‖²` column with coefficient `δ″`.
    pub include_gad: bool,
    /// Box bound on `|δ|`; reaching it means the data do not bound `δ`.
    pub delta_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            nuisance_bound: 0.0,
            include_gad: false,
            delta_bound: 1e6,
        }
    }
}

/// Outcome of the linear program over a probe set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Fitted constants and the feasibility flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFit {
    pub delta: f64,
    pub delta_prime: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
    pub delta_second: Option<f64>,
    pub status: LpStatus,
    /// `δ > −2`.
    pub delta_ok: bool,
    /// `δ + δ′ > −2`.
    pub sum_ok: bool,
    /// `δ″ > −4` when the column is included.
    pub delta_second_ok: Option<bool>,
    /// All flags hold.
    pub feasible: bool,
    /// `δ` sits on its box bound.
    pub delta_at_bound: bool,
    pub options: FitOptions,
    pub probes: usize,
}

impl FlatRows for HypothesisFit {
    fn rows(&self) -> Vec<Row> {
        let p = format!("probes={}", self.probes);
        let mut rows = vec![
            Row::new(&p, "delta", self.delta),
            Row::new(&p, "delta_prime", self.delta_prime),
            Row::new(&p, "sigma", self.sigma),
            Row::new(&p, "sigma_prime", self.sigma_prime),
            Row::new(&p, "feasible", self.feasible as u8 as f64),
        ];
        if let Some(d) = self.delta_second {
            rows.push(Row::new(&p, "delta_second", d));
        }
        rows
    }
}

/// Maximize `δ` subject to
/// `t_comm ≥ δ t_kin + δ′ t_grad + (σα + σ′) t_norm (+ δ″ t_gAD)` over all probes.
pub fn hypothesis_fit(probes: &[HypothesisProbe], opts: &FitOptions) -> Result<HypothesisFit> {
    if probes.len() < 8 {
        return Err(Error::invalid("probes", "need at least 8 probes"));
    }
    if !(opts.nuisance_bound >= 0.0 && opts.nuisance_bound.is_finite()) {
        return Err(Error::invalid("nuisance_bound", "must be ≥ 0"));
    }
    if !(opts.delta_bound > 0.0 && opts.delta_bound.is_finite()) {
        return Err(Error::invalid("delta_bound", "must be positive"));
    }
    let nv = if opts.include_gad { 5 } else { 4 };
    let lo: Vec<f64> = (0..nv)
        .map(|k| if k == 0 { -opts.delta_bound } else { -opts.nuisance_bound })
        .collect();
    let hi: Vec<f64> = lo.iter().map(|l| -l).collect();
    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for p in probes {
        let mut row = vec![p.t_kin, p.t_grad, p.alpha * p.t_norm, p.t_norm];
        if opts.include_gad {
            row.push(p.t_gad);
        }
        let scale = row.iter().map(|v| v.abs()).sum::<f64>() + p.t_comm.abs() + FLOOR;
        let shift: f64 = row.iter().zip(&lo).map(|(r, l)| r * l).sum();
        b.push((p.t_comm - shift) / scale);
        a.push(row.into_iter().map(|v| v / scale).collect());
    }
    for k in 0..nv {
        let mut row = vec![0.0; nv];
        row[k] = 1.0;
        a.push(row);
        b.push(hi[k] - lo[k]);
    }
    let mut c = vec![0.0; nv];
    c[0] = 1.0;
    let (status, y) = simplex::maximize(&c, &a, &b);
    let x: Vec<f64> = match &y {
        Some(y) => y.iter().zip(&lo).map(|(y, l)| y + l).collect(),
        None => vec![f64::NAN; nv],
    };
    let clean = |k: usize| {
        let resolution = 1e-12 * (hi[k] - lo[k]).max(1.0);
        if x[k].abs() < resolution { 0.0 } else { x[k] }
    };
    let delta = clean(0);
    let delta_prime = clean(1);
    let sigma = clean(2);
    let sigma_prime = clean(3);
    let delta_second = opts.include_gad.then(|| clean(4));
    let optimal = status == LpStatus::Optimal;
    let delta_ok = optimal && delta > -2.0;
    let sum_ok = optimal && delta + delta_prime > -2.0;
    let delta_second_ok = delta_second.map(|d| optimal && d > -4.0);
    let delta_at_bound = optimal && (delta - lo[0]).abs() < 1e-9 * opts.delta_bound;
    Ok(HypothesisFit {
        delta,
        delta_prime,
        sigma,
        sigma_prime,
        delta_second,
        status,
        delta_ok,
        sum_ok,
        delta_second_ok,
        feasible: delta_ok && sum_ok && delta_second_ok.unwrap_or(true) && !delta_at_bound,
        delta_at_bound,
        options: *opts,
        probes: probes.len(),
    })
}

/// Dense two-phase simplex for `max cᵀy, Ay ≤ b, y ≥ 0` with Bland's rule.
pub(crate) mod simplex {
    use super::LpStatus;

    const EPS: f64 = 1e-11;

    struct Tableau {
        t: Vec<Vec<f64>>,
        basis: Vec<usize>,
        cols: usize,
    }

    impl Tableau {
        fn pivot(&mut self, r: usize, c: usize) {
            let p = self.t[r][c];
            for v in self.t[r].iter_mut() {
                *v /= p;
            }
            let pivot_row = self.t[r].clone();
            for (i, row) in self.t.iter_mut().enumerate() {
                if i != r {
                    let f = row[c];
                    if f != 0.0 {
                        for (v, pv) in row.iter_mut().zip(&pivot_row) {
                            *v -= f * pv;
                        }
                    }
                }
            }
            self.basis[r] = c;
        }

        /// Optimize the objective stored in the last row over the allowed columns.
        fn run(&mut self, allowed: &dyn Fn(usize) -> bool) -> bool {
            let m = self.basis.len();
            let rhs = self.cols;
            loop {
                let obj = &self.t[m];
                let Some(c) = (0..rhs).find(|&j| allowed(j) && obj[j] < -EPS) else {
                    return true;
                };
                let mut best: Option<(usize, f64)> = None;
                for i in 0..m {
                    let a = self.t[i][c];
                    if a > EPS {
                        let ratio = self.t[i][rhs] / a;
                        match best {
                            None => best = Some((i, ratio)),
                            Some((bi, br)) => {
                                if ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < self.basis[bi]) {
                                    best = Some((i, ratio));
                                }
                            }
                        }
                    }
                }
                match best {
                    Some((r, _)) => self.pivot(r, c),
                    None => return false,
                }
            }
        }
    }

    pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> (LpStatus, Option<Vec<f64>>) {
        let n = c.len();
        let m = b.len();
        let n_art = b.iter().filter(|v| **v < 0.0).count();
        let cols = n + m + n_art;
        let mut t = vec![vec![0.0; cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let mut art = n + m;
        for i in 0..m {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = sign * a[i][j];
            }
            t[i][n + i] = sign;
            t[i][cols] = sign * b[i];
            if b[i] < 0.0 {
                t[i][art] = 1.0;
                basis[i] = art;
                art += 1;
            } else {
                basis[i] = n + i;
            }
        }
        let mut tab = Tableau { t, basis, cols };
        if n_art > 0 {
            for j in n + m..cols {
                tab.t[m][j] = 1.0;
            }
            for i in 0..m {
                if tab.basis[i] >= n + m {
                    let row = tab.t[i].clone();
                    for (v, r) in tab.t[m].iter_mut().zip(&row) {
                        *v -= r;
                    }
                }
            }
            tab.run(&|_| true);
            if tab.t[m][cols] < -1e-9 {
                return (LpStatus::Infeasible, None);
            }
            for i in 0..m {
                if tab.basis[i] >= n + m {
                    if let Some(j) = (0..n + m).find(|&j| tab.t[i][j].abs() > EPS) {
                        tab.pivot(i, j);
                    }
                }
            }
        }
        for v in tab.t[m].iter_mut() {
            *v = 0.0;
        }
        for j in 0..n {
            tab.t[m][j] = -c[j];
        }
        for i in 0..m {
            let bj = tab.basis[i];
            if bj < n && c[bj] != 0.0 {
                let f = c[bj];
                let row = tab.t[i].clone();
                for (v, r) in tab.t[m].iter_mut().zip(&row) {
                    *v += f * r;
                }
            }
        }
        if !tab.run(&|j| j < n + m) {
            return (LpStatus::Unbounded, None);
        }
        let mut y = vec![0.0; n];
        for i in 0..m {
            if tab.basis[i] < n {
                y[tab.basis[i]] = tab.t[i][cols];
            }
        }
        (LpStatus::Optimal, Some(y))
    }
}

/// Double-difference integrand `d(τ)` of the regularity criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub conjugate: String,
    /// `(τ, d(τ))` sorted by `τ`.
    pub samples: Vec<(f64, f64)>,
    /// Slope of `log d` against `log τ` over the positive samples.
    pub log_slope: Option<f64>,
}

impl FlatRows for RegularityReport {
    fn rows(&self) -> Vec<Row> {
        let mut rows: Vec<Row> = self
            .samples
            .iter()
            .map(|(t, d)| Row::new(format!("tau={t}"), "d", *d))
            .collect();
        if let Some(s) = self.log_slope {
            rows.push(Row::new("all", "log_slope", s));
        }
        rows
    }
}

/// Slope of `log y` against `log x`, ignoring non-positive samples.
pub fn log_log_slope(samples: &[(f64, f64)]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|(t, d)| *t > 0.0 && *d > 0.0)
        .map(|(t, d)| (t.ln(), d.ln()))
        .unzip();
    (xs.len() >= 2).then(|| least_squares(&xs, &ys).0)
}

/// `d(τ) = ‖⟨p⟩^{-1}(V_τ + V_{−τ} − 2V)⟨p⟩^{-1}‖` with `V_τ = e^{iτA_u} V e^{−iτA_u}`.
pub fn regularity_probe(
    v: &ScalarField,
    spec: &ConjugateSpec,
    tau_list: &[f64],
    grid: &Grid,
) -> Result<RegularityReport> {
    grid.check_same(v.grid())?;
    if tau_list.is_empty() || tau_list.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::invalid("tau_list", "values must lie in (0, 1]"));
    }
    let au = build_conjugate(spec, grid)?;
    let am = au.dense()?;
    let g = grid.clone();
    let mirror = move |j: usize| g.mirror(j);
    let eig = linalg::hermitian_eigen(&am, Some(&mirror))?;
    let n = grid.n();
    let u = &eig.vectors;
    let vd = Mat::<C64>::from_fn(n, n, |i, j| u[(i, j)] * v.values()[i]);
    let w = u.adjoint() * &vd;
    let jp: Vec<f64> = grid.frequencies().iter().map(|x| (1.0 + x * x).powf(-0.5)).collect();
    let jp_op = OperatorRep::multiplier_values(
        grid,
        "⟨p⟩^-1",
        jp.iter().map(|&s| C64::new(s, 0.0)).collect(),
    );
    let jp_m = jp_op.dense()?;
    let left = &*jp_m * u;
    let right = u.adjoint() * &*jp_m;
    let mut taus: Vec<f64> = tau_list.to_vec();
    taus.sort_by(f64::total_cmp);
    let samples: Vec<Result<(f64, f64)>> = par::map(&taus, |&tau| {
        let d = Mat::<C64>::from_fn(n, n, |j, k| {
            let c = 2.0 * (tau * (eig.values[j] - eig.values[k])).cos() - 2.0;
            w[(j, k)] * c
        });
        let full = &left * &d * &right;
        let norm = linalg::spectral_norm(&full);
        if !norm.is_finite() {
            return Err(Error::NoConvergence {
                what: "matrix exponential".into(),
                achieved: norm,
                target: 0.0,
            });
        }
        Ok((tau, norm))
    });
    let samples: Vec<(f64, f64)> = samples.into_iter().collect::<Result<_>>()?;
    let log_slope = log_log_slope(&samples);
    Ok(RegularityReport {
        conjugate: spec.name().to_string(),
        samples,
        log_slope,
    })
}

/// `max |e^{-iτA}(e^{iτA} V e^{-iτA})e^{iτA} − V|` relative to `max |V|`.
pub fn conjugation_roundtrip_error(
    v: &ScalarField,
    spec: &ConjugateSpec,
    tau: f64,
    grid: &Grid,
) -> Result<f64> {
    let au = build_conjugate(spec, grid)?;
    let eig = linalg::hermitian_eigen(&*au.dense()?, None)?;
    let up = linalg::unitary_flow(&eig, tau);
    let um = linalg::unitary_flow(&eig, -tau);
    let n = grid.n();
    let vd = Mat::<C64>::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(v.values()[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let vt = &up * &vd * &um;
    let back = &um * &vt * &up;
    let mut err: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            err = err.max((back[(i, j)] - vd[(i, j)]).norm());
        }
    }
    Ok(err / v.max_abs().max(FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(alpha: f64, kin: f64, grad: f64, norm: f64, comm: f64) -> HypothesisProbe {
        HypothesisProbe {
            alpha,
            beta: 0.9,
            t_comm: comm,
            t_kin: kin,
            t_grad: grad,
            t_norm: norm,
            t_gad: 0.0,
            t_cross: 0.0,
            t_comm_alt: comm,
        }
    }

    #[test]
    fn simplex_small_problem() {
        let (s, y) = simplex::maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        );
        assert_eq!(s, LpStatus::Optimal);
        let y = y.unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_needs_phase_one() {
        let (s, y) = simplex::maximize(&[-1.0], &[vec![-1.0]], &[-2.0]);
        assert_eq!(s, LpStatus::Optimal);
        assert!((y.unwrap()[0] - 2.0).abs() < 1e-12);
        let (s, _) = simplex::maximize(&[1.0], &[vec![1.0], vec![-1.0]], &[1.0, -2.0]);
        assert_eq!(s, LpStatus::Infeasible);
        let (s, _) = simplex::maximize(&[1.0], &[vec![-1.0]], &[1.0]);
        assert_eq!(s, LpStatus::Unbounded);
    }

    #[test]
    fn fit_zero_potential_is_origin() {
        let probes: Vec<_> = (0..8).map(|k| probe(k as f64 * 0.5, 1.0 + k as f64, 0.1 * k as f64, 2.0, 0.0)).collect();
        let f = hypothesis_fit(&probes, &FitOptions::default()).unwrap();
        assert_eq!((f.delta, f.delta_prime, f.sigma, f.sigma_prime), (0.0, 0.0, 0.0, 0.0));
        assert!(f.feasible);
    }

    #[test]
    fn fit_adversarial_is_infeasible() {
        let probes: Vec<_> = (0..8).map(|k| probe(k as f64, 2.0 + k as f64, 0.3, 1.0, -10.0 * (2.0 + k as f64))).collect();
        let f = hypothesis_fit(&probes, &FitOptions::default()).unwrap();
        assert!((f.delta + 10.0).abs() < 1e-9);
        assert!(!f.feasible && !f.delta_ok);
    }

    #[test]
    fn fit_requires_enough_probes() {
        let probes: Vec<_> = (0..3).map(|k| probe(k as f64, 1.0, 0.0, 1.0, 0.0)).collect();
        assert!(hypothesis_fit(&probes, &FitOptions::default()).is_err());
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let b = [0.7, 0.8, 0.9];
        let a: Vec<f64> = b.iter().map(|x| 1.0 + 2.0 * x - x * x).collect();
        assert!((extrapolate_to_one(&b, &a).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn slope_of_power_law() {
        let s: Vec<(f64, f64)> = [0.01, 0.1, 1.0].iter().map(|&t| (t, 3.0 * t * t)).collect();
        assert!((log_log_slope(&s).unwrap() - 2.0).abs() < 1e-12);
    }
}
