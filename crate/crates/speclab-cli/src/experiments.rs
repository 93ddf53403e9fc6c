//! Experiment runners: each maps a validated config to an [`Outcome`].

use serde_json::json;

use speclab_core::diagnostics::{
    conjugation_check, decay_profile_with, hypothesis_fit, hypothesis_probe, weighted_commutator_terms,
    mourre_probe, regularity_probe, virial_check, FlatRows, Row,
};
use speclab_core::hscalc::{calculus_check, random_hermitian, remainder_study};
use speclab_core::operators::{build_conjugate, build_hamiltonian};
use speclab_core::potentials::build_potential;
use speclab_core::spectral::{eigenpairs, lap_probe_with, EigenPair};
use speclab_core::{par, Error, Grid, Result, ScalarField};

use crate::config::{Experiment, ExperimentConfig, StateSelect};
use crate::output::{Outcome, Series};
use crate::scan;

/// Run the configured experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::Spectrum => spectrum(cfg),
        Experiment::Decay => decay(cfg),
        Experiment::Mourre => mourre(cfg),
        Experiment::Lap => lap(cfg),
        Experiment::Hypothesis => hypothesis(cfg),
        Experiment::Hscheck => hscheck(cfg),
        Experiment::Regularity => regularity(cfg),
        Experiment::Scan => scan::sweep(cfg),
    }
}

struct Setup {
    grid: Grid,
    v: ScalarField,
    h: speclab_core::operators::OperatorRep,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let grid = cfg.grid.build()?;
    let v = build_potential(&cfg.potential, &grid)?;
    let h = build_hamiltonian(&v, &grid)?;
    Ok(Setup { grid, v, h })
}

fn select_state(h: &speclab_core::operators::OperatorRep, sel: &StateSelect) -> Result<EigenPair> {
    let pairs = eigenpairs(h, sel.window)?;
    let count = pairs.len();
    pairs.into_iter().nth(sel.index).ok_or_else(|| {
        Error::invalid(
            "state.index",
            format!("index {} but the window holds {count} eigenpairs", sel.index),
        )
    })
}

fn spectrum(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = setup(cfg)?;
    let pairs = eigenpairs(&s.h, cfg.spectrum.window)?;
    let a = if cfg.spectrum.virial {
        Some(build_conjugate(&cfg.conjugate, &s.grid)?)
    } else {
        None
    };
    let virial: Vec<Option<f64>> = match &a {
        Some(a) => par::map(&pairs, |p| virial_check(&s.h, a, p))
            .into_iter()
            .map(|r| r.map(Some))
            .collect::<Result<_>>()?,
        None => vec![None; pairs.len()],
    };
    let mut rows = Vec::new();
    let mut series = Series::new("spectrum", &["index", "eigenvalue", "residual"]);
    for (i, p) in pairs.iter().enumerate() {
        let params = format!("index={i}");
        rows.push(Row::new(&params, "eigenvalue", p.eigenvalue));
        rows.push(Row::new(&params, "residual", p.residual));
        if let Some(v) = virial[i] {
            rows.push(Row::new(&params, "virial", v));
        }
        series.push(vec![i as f64, p.eigenvalue, p.residual]);
    }
    let report = json!({
        "eigenvalues": pairs.iter().map(|p| p.eigenvalue).collect::<Vec<_>>(),
        "residuals": pairs.iter().map(|p| p.residual).collect::<Vec<_>>(),
        "virial": virial,
        "conjugate": cfg.conjugate.name(),
    });
    Ok(Outcome {
        report,
        rows,
        series: vec![series],
        ..Default::default()
    })
}

fn decay(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = setup(cfg)?;
    let pair = select_state(&s.h, &cfg.decay.state)?;
    let rep = decay_profile_with(&pair, &cfg.decay.beta_grid, &s.grid, &cfg.decay.options)?;
    let mut rows = rep.rows();
    let mut checks = Vec::new();
    for w in &cfg.weights {
        let terms = weighted_commutator_terms(&s.h, &s.v, &cfg.conjugate, w, &pair)?;
        let conj = conjugation_check(&s.h, w, &pair)?;
        let p = format!("weight={}", serde_json::to_string(w).expect("weight serializes"));
        rows.push(Row::new(&p, "commutator_identity_residual", terms.residual));
        rows.push(Row::new(&p, "commutator_identity_scaled_residual", terms.scaled_residual));
        rows.push(Row::new(&p, "conjugated_eigen_residual", conj.eigen_residual));
        rows.push(Row::new(&p, "conjugated_form_residual", conj.form_residual));
        checks.push(json!({ "weight": w, "commutator_identity": terms, "conjugation": conj }));
    }
    let mut profile = Series::new("decay_profile", &["x", "abs_psi"]);
    for (x, v) in s.grid.nodes().iter().zip(pair.vector.values()) {
        profile.push(vec![*x, v.norm()]);
    }
    let mut rates = Series::new("decay_rates", &["beta", "alpha_star", "alpha_fit", "fit_residual"]);
    for (k, b) in rep.beta_grid.iter().enumerate() {
        rates.push(vec![*b, rep.alpha_star[k], rep.alpha_fit[k], rep.fit_residual[k]]);
    }
    Ok(Outcome {
        report: json!({ "eigenvalue": pair.eigenvalue, "residual": pair.residual, "decay": rep, "weight_checks": checks }),
        rows,
        series: vec![profile, rates],
        ..Default::default()
    })
}

fn mourre(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = setup(cfg)?;
    let reports = cfg
        .mourre
        .intervals
        .iter()
        .map(|&iv| mourre_probe(&s.h, &s.v, &cfg.conjugate, iv, cfg.mourre.discard_r))
        .collect::<Result<Vec<_>>>()?;
    let mut series = Series::new("mourre_bottom", &["a", "b", "raw_bottom", "c0_estimate", "rank"]);
    let mut rows = Vec::new();
    for r in &reports {
        series.push(vec![r.interval.0, r.interval.1, r.raw_bottom, r.c0_estimate, r.rank_i as f64]);
        rows.extend(r.rows());
    }
    Ok(Outcome {
        report: json!({ "windows": reports }),
        rows,
        series: vec![series],
        ..Default::default()
    })
}

fn lap(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = setup(cfg)?;
    let p = &cfg.lap;
    let rep = lap_probe_with(&s.h, p.lambda, p.s, &p.mu_sequence, p.absorber)?;
    let mut series = Series::new("lap_norms", &["mu", "norm"]);
    let mut rows = Vec::new();
    let params = format!("lambda={};s={}", rep.energy, rep.s);
    for (mu, n) in rep.mu_sequence.iter().zip(&rep.norms) {
        series.push(vec![*mu, *n]);
        rows.push(Row::new(format!("{params};mu={mu}"), "weighted_resolvent_norm", *n));
    }
    rows.push(Row::new(&params, "growth_factor", rep.growth_factor));
    rows.push(Row::new(
        &params,
        "convergent",
        (rep.classified == speclab_core::spectral::LapClass::Convergent) as u8 as f64,
    ));
    Ok(Outcome {
        report: serde_json::to_value(&rep).expect("report serializes"),
        rows,
        series: vec![series],
        ..Default::default()
    })
}

fn hypothesis(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = setup(cfg)?;
    let pair = select_state(&s.h, &cfg.hypothesis.state)?;
    let combos: Vec<(f64, f64)> = cfg
        .hypothesis
        .alphas
        .iter()
        .flat_map(|&a| cfg.hypothesis.betas.iter().map(move |&b| (a, b)))
        .collect();
    let probes = par::map(&combos, |&(a, b)| hypothesis_probe(&s.h, &s.v, &pair, a, b, &s.grid))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let fit = hypothesis_fit(&probes, &cfg.hypothesis.fit)?;
    let mut rows: Vec<Row> = probes.iter().flat_map(|p| p.rows()).collect();
    rows.extend(fit.rows());
    let mut series = Series::new(
        "hypothesis_probes",
        &["alpha", "beta", "t_comm", "t_kin", "t_grad", "t_norm", "t_gAD", "consistency"],
    );
    for p in &probes {
        series.push(vec![p.alpha, p.beta, p.t_comm, p.t_kin, p.t_grad, p.t_norm, p.t_gad, p.consistency()]);
    }
    Ok(Outcome {
        report: json!({ "eigenvalue": pair.eigenvalue, "probes": probes, "fit": fit }),
        rows,
        series: vec![series],
        ..Default::default()
    })
}

fn hscheck(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = &cfg.hscheck;
    let phi = p.symbol.build()?;
    let (center, radius) = match phi.support() {
        Some((a, b)) => (0.5 * (a + b), 0.75 * (b - a)),
        None => (0.0, 2.0),
    };
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut series = Series::new("hs_oracle", &["n", "error", "refinement_change", "nodes"]);
    for (i, &n) in p.sizes.iter().enumerate() {
        let b = random_hermitian(n, cfg.seed.wrapping_add(i as u64), center, radius);
        let c = calculus_check(&phi, &b, &p.quadrature)?;
        let params = format!("n={n};sample={i}");
        rows.push(Row::new(&params, "oracle_error", c.error));
        rows.push(Row::new(&params, "refinement_change", c.refinement_change));
        series.push(vec![n as f64, c.error, c.refinement_change, c.nodes as f64]);
        checks.push(c);
    }
    let grid = cfg.grid.build()?;
    let mut studies = Vec::new();
    let mut rseries = Series::new(
        "hs_remainder",
        &["k", "s", "s_prime", "base", "mesh_refined", "box_doubled", "growth_factor", "in_regime"],
    );
    for r in &p.remainder {
        let st = remainder_study(&phi, &grid, r.k, r.s, r.s_prime, &p.quadrature, r.threshold)?;
        let params = format!("k={};s={};s_prime={}", r.k, r.s, r.s_prime);
        rows.push(Row::new(&params, "weighted_norm", st.base.weighted.norm));
        rows.push(Row::new(&params, "mesh_change", st.mesh_change));
        rows.push(Row::new(&params, "box_change", st.box_change));
        rows.push(Row::new(&params, "growth_factor", st.growth_factor));
        rows.push(Row::new(&params, "in_regime", st.base.weighted.in_regime as u8 as f64));
        rows.push(Row::new(&params, "route_discrepancy", st.base.discrepancy));
        rseries.push(vec![
            r.k as f64,
            r.s,
            r.s_prime,
            st.base.weighted.norm,
            st.mesh_refined.weighted.norm,
            st.box_doubled.weighted.norm,
            st.growth_factor,
            st.base.weighted.in_regime as u8 as f64,
        ]);
        studies.push(st);
    }
    Ok(Outcome {
        report: json!({
            "symbol": p.symbol,
            "oracle_checks": checks,
            "remainder_studies": studies,
            "note": "remainder boundedness is assessed by stability under mesh refinement and box doubling",
        }),
        rows,
        series: vec![series, rseries],
        ..Default::default()
    })
}

fn regularity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let s = setup(cfg)?;
    let rep = regularity_probe(&s.v, &cfg.conjugate, &cfg.regularity.tau_list, &s.grid)?;
    let mut series = Series::new("regularity", &["tau", "d"]);
    for (t, d) in &rep.samples {
        series.push(vec![*t, *d]);
    }
    Ok(Outcome {
        report: serde_json::to_value(&rep).expect("report serializes"),
        rows: rep.rows(),
        series: vec![series],
        ..Default::default()
    })
}
