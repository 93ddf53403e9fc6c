#[path = "../../speclab-core/tests/common/mod.rs"]
mod oracles;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use faer::{Mat, Side};
use speclab_cli::output::ResultsDocument;
use speclab_core::diagnostics::{
    conjugation_check, decay_profile, hypothesis_fit, hypothesis_probe, weighted_commutator_terms, mourre_probe,
    virial_check, FitOptions, HypothesisProbe, LpStatus,
};
use speclab_core::hscalc::{
    hs_apply_matrix, hs_commutator_expansion_matrix, random_hermitian, remainder_study, QuadratureSpec,
    SymbolFunction,
};
use speclab_core::operators::{
    build_conjugate, build_hamiltonian, commutator, conjugate_via_dilation, free_commutator_symbol, laplacian,
    ConjugateSpec, OperatorRep, WeightSpec,
};
use speclab_core::potentials::{build_potential, PotentialSpec};
use speclab_core::spectral::{
    default_mu_sequence, detect_embedded, eigenpairs, lap_probe, EigenPair, EmbeddedOptions, LapClass, Verdict,
    Window,
};
use speclab_core::{Grid, ScalarField, StateVector, C64};

const WVN_W: f64 = -10.008621489710045;
const WVN_K: f64 = 2.0;

struct System {
    grid: Grid,
    v: ScalarField,
    h: OperatorRep,
}

fn system(spec: &PotentialSpec, l: f64, n: usize) -> System {
    let grid = Grid::new(l, n).unwrap();
    let v = build_potential(spec, &grid).unwrap();
    let h = build_hamiltonian(&v, &grid).unwrap();
    System { grid, v, h }
}

fn ground(s: &System) -> EigenPair {
    eigenpairs(&s.h, Window::Lowest { count: 1 }).unwrap().remove(0)
}

fn packet(grid: &Grid, x0: f64, sigma: f64, k: f64) -> StateVector {
    StateVector::from_fn(grid, |x| C64::from_polar((-(x - x0) * (x - x0) / (2.0 * sigma * sigma)).exp(), k * x))
}

fn rel(a: &StateVector, b: &StateVector) -> f64 {
    a.sub(b).unwrap().norm() / b.norm()
}

struct Verdict_ {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict_ {
    Verdict_ { pass, detail }
}

fn operator_identities() -> Verdict_ {
    let start = Instant::now();
    let g = Grid::new(40.0, 2048).unwrap();
    let lap = laplacian(&g);
    let mut worst_comm: f64 = 0.0;
    let mut worst_dec: f64 = 0.0;
    for spec in [ConjugateSpec::Dilation, ConjugateSpec::BoundedStandard] {
        let au = build_conjugate(&spec, &g).unwrap();
        let comm = commutator(&lap, &au, true).unwrap();
        let symbol = free_commutator_symbol(&spec, &g).unwrap();
        let via = conjugate_via_dilation(&spec, &g).unwrap();
        for i in 0..10 {
            let t = i as f64;
            let f = packet(&g, -8.0 + 1.7 * t, 1.0 + 0.2 * t, -3.0 + 0.6 * t);
            worst_comm = worst_comm.max(rel(&comm.apply(&f).unwrap(), &symbol.apply(&f).unwrap()));
            worst_dec = worst_dec.max(rel(&au.apply(&f).unwrap(), &via.apply(&f).unwrap()));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst_comm < 1e-8 && worst_dec < 1e-8 && elapsed < Duration::from_secs(10),
        format!("[Δ, iA_u] residual {worst_comm:.1e}, decomposition residual {worst_dec:.1e}, {elapsed:.1?}"),
    )
}

fn virial() -> Verdict_ {
    let start = Instant::now();
    let specs = [
        PotentialSpec::SquareWell { depth: 2.0, radius: 1.0 },
        PotentialSpec::ShortRange { amplitude: -3.0, rho: 1.0 },
        PotentialSpec::WignerVonNeumann { w: WVN_W, k: WVN_K },
        PotentialSpec::LongRange { amplitude: 1.0, rho: 0.5 },
    ];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for spec in &specs {
        let s = system(spec, 20.0, 512);
        let pairs = eigenpairs(&s.h, Window::Lowest { count: 512 }).unwrap();
        for conj in [ConjugateSpec::Dilation, ConjugateSpec::BoundedStandard] {
            let a = build_conjugate(&conj, &s.grid).unwrap();
            for p in &pairs {
                worst = worst.max(virial_check(&s.h, &a, p).unwrap());
                count += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-10 && elapsed < Duration::from_secs(60),
        format!("max normalized defect {worst:.1e} over {count} pairs, {elapsed:.1?}"),
    )
}

fn weights() -> [WeightSpec; 2] {
    [
        WeightSpec::LogType { tau: 1.0, epsilon: 0.1 },
        WeightSpec::Subexp { alpha: 0.5, beta: 0.5, tau: 1.0, gamma: 0.5 },
    ]
}

fn weighted_identity() -> Verdict_ {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for spec in [
        PotentialSpec::SquareWell { depth: 2.0, radius: 1.0 },
        PotentialSpec::ShortRange { amplitude: -2.0, rho: 1.0 },
    ] {
        let s = system(&spec, 40.0, 2048);
        let pair = ground(&s);
        for w in weights() {
            for conj in [ConjugateSpec::Dilation, ConjugateSpec::BoundedStandard] {
                worst = worst.max(weighted_commutator_terms(&s.h, &s.v, &conj, &w, &pair).unwrap().residual);
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-6 && elapsed < Duration::from_secs(120),
        format!("max relative residual {worst:.1e} over 8 cases, {elapsed:.1?}"),
    )
}

fn conjugation() -> Verdict_ {
    let s = system(&PotentialSpec::SquareWell { depth: 2.0, radius: 1.0 }, 40.0, 2048);
    let pair = ground(&s);
    let mut eig: f64 = 0.0;
    let mut form: f64 = 0.0;
    for w in weights() {
        let c = conjugation_check(&s.h, &w, &pair).unwrap();
        eig = eig.max(c.eigen_residual);
        form = form.max(c.form_residual);
    }
    verdict(eig < 1e-6 && form < 1e-6, format!("H(F) residual {eig:.1e}, form residual {form:.1e}"))
}

fn square_well_decay() -> Verdict_ {
    let oracle = (-oracles::square_well_ground(2.0, 1.0)).sqrt();
    let betas = [0.9, 0.95, 0.99, 0.999];
    let mut errors = Vec::new();
    let mut values = Vec::new();
    for l in [20.0, 30.0, 40.0] {
        let n = (2048.0 * l / 40.0) as usize;
        let s = system(&PotentialSpec::SquareWell { depth: 2.0, radius: 1.0 }, l, n);
        let rep = decay_profile(&ground(&s), &betas, &s.grid).unwrap();
        let a = rep.alpha_limit.unwrap_or(f64::NAN);
        values.push(a);
        errors.push((a - oracle).abs() / oracle);
    }
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let last = *errors.last().unwrap();
    verdict(
        last < 0.02 && monotone,
        format!(
            "alpha(β→1) {:.5}/{:.5}/{:.5} for L = 20/30/40 vs √(−E) = {oracle:.5}, error {:.2}%",
            values[0],
            values[1],
            values[2],
            100.0 * last
        ),
    )
}

fn wvn_embedded() -> Verdict_ {
    let pinned = oracles::pin_wvn_amplitude(-10.1, -9.9, WVN_K, 1.0, 400.0, 0.002);
    let spec = PotentialSpec::WignerVonNeumann { w: WVN_W, k: WVN_K };
    let g = Grid::new(40.0, 2048).unwrap();
    let cands = detect_embedded(&spec, 2.0, &g, &EmbeddedOptions::default()).unwrap();
    let target = WVN_K * WVN_K / 4.0;
    let embedded: Vec<_> = cands.iter().filter(|c| c.verdict == Verdict::Embedded).collect();
    let near = embedded.iter().any(|c| (c.eigenvalue - target).abs() < 0.01 * target);
    let s = system(&spec, 40.0, 2048);
    let pair = eigenpairs(&s.h, Window::Interval { lo: 0.95 * target, hi: 1.05 * target })
        .unwrap()
        .into_iter()
        .max_by(|a, b| a.vector.mass_fraction_inside(20.0).total_cmp(&b.vector.mass_fraction_inside(20.0)))
        .unwrap();
    let rep = decay_profile(&pair, &[0.7, 0.8, 0.9, 0.95], &s.grid).unwrap();
    let zero = rep.alpha_star.iter().all(|a| *a == 0.0);
    let pin_ok = (pinned - WVN_W).abs() < 1e-6 * WVN_W.abs();
    let energy = embedded.first().map_or(f64::NAN, |c| c.eigenvalue);
    verdict(
        near && embedded.len() == 1 && zero && pin_ok,
        format!(
            "{} embedded verdict(s), E = {energy:.6} vs k²/4 = {target}, alpha_star {:?}, shooting w = {pinned:.9}",
            embedded.len(),
            rep.alpha_star
        ),
    )
}

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const SWEEP_CONFIG: &str = r#"{
  "experiment": "scan",
  "grid": {"half_length": 40.0, "n": 2048},
  "scan": {
    "zeta": {"lo": 1.2, "hi": 2.2, "step": 0.25},
    "theta": {"lo": 0.1, "hi": 1.1, "step": 0.25},
    "k": 1.0,
    "w": 1.0,
    "e_max": 4.0
  }
}"#;

fn run_sweep(name: &str) -> (PathBuf, Option<i32>, Duration) {
    let dir = workdir(name);
    let cfg = dir.join("scan.json");
    fs::write(&cfg, SWEEP_CONFIG).unwrap();
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_speclab"))
        .arg("scan")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    (dir.join("out"), status.code(), start.elapsed())
}

fn phase_map(out: &Path) -> Verdict_ {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (dir, code, elapsed) = run_sweep_cached(out);
    if code != Some(0) {
        return verdict(false, format!("sweep exited with {code:?}"));
    }
    let doc: ResultsDocument =
        serde_json::from_str(&fs::read_to_string(dir.join("results.json")).unwrap()).unwrap();
    let cells = doc.report["scan"]["cells"].as_array().unwrap().clone();
    let mut checked = 0;
    let mut offending = Vec::new();
    let mut ok_cells = 0;
    for c in &cells {
        let zeta = c["zeta"].as_f64().unwrap();
        let theta = c["theta"].as_f64().unwrap();
        if c["status"] == "ok" {
            ok_cells += 1;
        }
        if zeta + theta > 2.0 {
            checked += 1;
            if c["status"] != "ok" || c["embedded"].as_u64() != Some(0) {
                offending.push(format!("({zeta}, {theta}): {} {}", c["status"], c["embedded"]));
            }
        }
    }
    verdict(
        cells.len() == 25 && offending.is_empty() && elapsed < Duration::from_secs(1800),
        format!(
            "{} cells ({ok_cells} ok), {checked} with ζ+θ > 2, offending {offending:?}, {elapsed:.1?} on {workers} worker(s)",
            cells.len()
        ),
    )
}

fn run_sweep_cached(_: &Path) -> (PathBuf, Option<i32>, Duration) {
    run_sweep("sweep_first")
}

fn mourre() -> Verdict_ {
    let s = system(&PotentialSpec::Zero, 40.0, 1024);
    let spectrum = oracles::free_spectrum(40.0, 1024);
    let mut worst: f64 = 0.0;
    for (a, b) in [(0.5, 1.0), (1.0, 2.0), (2.0, 4.0)] {
        let r = mourre_probe(&s.h, &s.v, &ConjugateSpec::Dilation, (a, b), 0).unwrap();
        let inf = spectrum.iter().copied().find(|e| *e >= a).unwrap();
        worst = worst.max((r.raw_bottom - 2.0 * inf).abs());
    }
    let r = mourre_probe(&s.h, &s.v, &ConjugateSpec::BoundedStandard, (1.0, 2.0), 0).unwrap();
    let oracle = spectrum
        .iter()
        .filter(|e| (1.0..=2.0).contains(*e))
        .map(|e| 2.0 * e / (1.0 + e).sqrt())
        .fold(f64::INFINITY, f64::min);
    let bounded = (r.raw_bottom - oracle).abs();
    verdict(
        worst < 1e-8 && bounded < 1e-8,
        format!("dilation bottom error {worst:.1e} on 3 windows, bounded_standard error {bounded:.1e}"),
    )
}

fn lap() -> Verdict_ {
    let free = system(&PotentialSpec::Zero, 40.0, 2048);
    let rep = lap_probe(&free.h, 1.0, 1.0, &default_mu_sequence()).unwrap();
    let oracle = oracles::free_weighted_resolvent_norm(1.0, 1.0, 100.0, 2000);
    let last = *rep.norms.last().unwrap();
    let err = (last - oracle).abs() / oracle;
    let wvn = system(&PotentialSpec::WignerVonNeumann { w: WVN_W, k: WVN_K }, 40.0, 2048);
    let div = lap_probe(&wvn.h, WVN_K * WVN_K / 4.0, 1.0, &default_mu_sequence()).unwrap();
    verdict(
        rep.classified == LapClass::Convergent
            && err < 0.05
            && div.classified == LapClass::Divergent
            && div.growth_factor > 10.0,
        format!(
            "free {:?} terminal {last:.4} vs kernel {oracle:.4} ({:.1}%), WvN {:?} growth {:.1}",
            rep.classified,
            100.0 * err,
            div.classified,
            div.growth_factor
        ),
    )
}

fn spectral_norm(m: &Mat<C64>) -> f64 {
    m.singular_values().unwrap()[0]
}

fn eigen_oracle(b: &Mat<C64>, f: impl Fn(f64) -> f64) -> Mat<C64> {
    let e = b.self_adjoint_eigen(Side::Lower).unwrap();
    let s = e.S();
    let u = e.U();
    let n = b.nrows();
    let vals: Vec<f64> = (0..n).map(|k| f(s[k].re)).collect();
    Mat::from_fn(n, n, |i, j| (0..n).map(|k| u[(i, k)] * u[(j, k)].conj() * vals[k]).sum())
}

fn hs_calculus() -> Verdict_ {
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let q = QuadratureSpec::default();
    let mut oracle_err: f64 = 0.0;
    for i in 0..20 {
        let n = 10 + (190 * i) / 19;
        let b = random_hermitian(n, 1000 + i as u64, 0.0, 3.0);
        let out = hs_apply_matrix(&phi, &b, &q).unwrap();
        let exact = eigen_oracle(&b, |t| 1.0 / (1.0 + t * t));
        oracle_err = oracle_err.max(spectral_norm(&(&out.matrix - &exact)));
    }
    let mut telescoping: f64 = 0.0;
    for (i, k) in [(0u64, 1usize), (1, 2), (2, 3)] {
        let b = random_hermitian(20, 2000 + i, 0.0, 2.0);
        let t = random_hermitian(20, 3000 + i, 0.0, 1.0);
        let e = hs_commutator_expansion_matrix(&phi, &b, &t, k, &q).unwrap();
        telescoping = telescoping.max(e.telescoping_defect());
    }
    let g = Grid::new(10.0, 128).unwrap();
    let inside = remainder_study(&phi, &g, 2, 1.5, 0.5, &q, 0.05).unwrap();
    let outside = remainder_study(&phi, &g, 2, 4.5, 0.5, &q, 0.05).unwrap();
    let pass = oracle_err < 1e-6
        && telescoping < 1e-8
        && inside.base.weighted.in_regime
        && inside.stable
        && !outside.base.weighted.in_regime
        && outside.growth_factor > 1.0 + outside.threshold;
    verdict(
        pass,
        format!(
            "oracle {oracle_err:.1e}, telescoping {telescoping:.1e}, in-regime mesh/box change {:.1e}/{:.1e}, violated ({}) growth {:.2}",
            inside.mesh_change,
            inside.box_change,
            outside.base.weighted.violations.join(", "),
            outside.growth_factor
        ),
    )
}

fn probe_set(s: &System, pair: &EigenPair) -> Vec<HypothesisProbe> {
    let mut out = Vec::new();
    for &a in &[0.25, 0.5, 0.75, 1.0] {
        for &b in &[0.7, 0.8, 0.9, 0.95] {
            out.push(hypothesis_probe(&s.h, &s.v, pair, a, b, &s.grid).unwrap());
        }
    }
    out
}

fn hypothesis() -> Verdict_ {
    let free = system(&PotentialSpec::Zero, 20.0, 512);
    let fp = ground(&free);
    let f0 = hypothesis_fit(&probe_set(&free, &fp), &FitOptions::default()).unwrap();
    let zero = f0.status == LpStatus::Optimal
        && (f0.delta, f0.delta_prime, f0.sigma, f0.sigma_prime) == (0.0, 0.0, 0.0, 0.0)
        && f0.feasible;
    let lr = system(&PotentialSpec::LongRange { amplitude: 1.0, rho: 0.5 }, 20.0, 512);
    let lp = ground(&lr);
    let f1 = hypothesis_fit(&probe_set(&lr, &lp), &FitOptions::default()).unwrap();
    let slice = f1.feasible && f1.delta_ok && f1.sum_ok && (f1.delta_prime, f1.sigma, f1.sigma_prime) == (0.0, 0.0, 0.0);
    let adversarial: Vec<HypothesisProbe> = (0..8)
        .map(|k| {
            let kin = 1.0 + k as f64;
            HypothesisProbe {
                alpha: 0.5 + 0.1 * k as f64,
                beta: 0.9,
                t_comm: -10.0 * kin,
                t_kin: kin,
                t_grad: 0.2,
                t_norm: 1.0,
                t_gad: 0.0,
                t_cross: 0.0,
                t_comm_alt: -10.0 * kin,
            }
        })
        .collect();
    let f2 = hypothesis_fit(&adversarial, &FitOptions::default()).unwrap();
    verdict(
        zero && slice && !f2.feasible,
        format!(
            "V = 0 ({}, {}, {}, {}) feasible {}, long-range δ = {:.3} feasible {}, adversarial feasible {}",
            f0.delta, f0.delta_prime, f0.sigma, f0.sigma_prime, f0.feasible, f1.delta, f1.feasible, f2.feasible
        ),
    )
}

fn determinism(first: &Path) -> Verdict_ {
    let (second, code, _) = run_sweep("sweep_second");
    if code != Some(0) {
        return verdict(false, format!("second sweep exited with {code:?}"));
    }
    let a = fs::read(first.join("results.csv")).unwrap_or_default();
    let b = fs::read(second.join("results.csv")).unwrap_or_default();
    verdict(!a.is_empty() && a == b, format!("results.csv {} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let first = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("sweep_first").join("out");
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict_>)> = vec![
        ("operator identities", Box::new(operator_identities)),
        ("virial", Box::new(virial)),
        ("weighted commutator identity", Box::new(weighted_identity)),
        ("H(F) conjugation", Box::new(conjugation)),
        ("square-well decay", Box::new(square_well_decay)),
        ("WvN embedded eigenvalue", Box::new(wvn_embedded)),
        ("phase map", Box::new({
            let f = first.clone();
            move || phase_map(&f)
        })),
        ("Mourre probe", Box::new(mourre)),
        ("LAP probe", Box::new(lap)),
        ("HS calculus", Box::new(hs_calculus)),
        ("hypothesis fit", Box::new(hypothesis)),
        ("determinism", Box::new({
            let f = first.clone();
            move || determinism(&f)
        })),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
