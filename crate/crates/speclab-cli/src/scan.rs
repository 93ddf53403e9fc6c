//! Phase-map sweep over the oscillating family `(ζ, θ)`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use speclab_core::diagnostics::Row;
use speclab_core::potentials::PotentialSpec;
use speclab_core::spectral::{detect_embedded, EmbeddedCandidate, EmbeddedOptions, Verdict};
use speclab_core::{par, Error, Grid, Result};

use crate::config::ExperimentConfig;
use crate::output::{Outcome, Series};

/// Bytes budgeted for concurrently running cells.
pub const MEMORY_BUDGET: usize = 4 << 30;

/// Smallest box kept after shrinking, in units of the cutoff radius.
const MIN_BOX_RADII: f64 = 4.0;

/// State of one sweep cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Skipped,
    Failed,
}

/// Result of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub name: String,
    pub zeta: Option<f64>,
    pub theta: Option<f64>,
    pub potential: PotentialSpec,
    pub status: CellStatus,
    pub reason: Option<String>,
    /// Box half-length actually used.
    pub half_length: Option<f64>,
    pub candidates: usize,
    pub embedded: usize,
    pub artifacts: usize,
    pub inconclusive: usize,
    /// Embedded candidate with the largest localization, else the most localized candidate.
    pub best: Option<EmbeddedCandidate>,
}

impl CellResult {
    pub fn verdict_label(&self) -> &'static str {
        match self.status {
            CellStatus::Skipped => "skipped",
            CellStatus::Failed => "failed",
            CellStatus::Ok if self.embedded > 0 => "embedded",
            CellStatus::Ok if self.inconclusive > 0 => "inconclusive",
            CellStatus::Ok => "none",
        }
    }
}

/// Sweep axes and per-cell results in deterministic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub zeta_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    pub cells: Vec<CellResult>,
    pub config_hash: String,
    pub tool_version: String,
}

#[derive(Clone)]
struct CellSpec {
    name: String,
    zeta: Option<f64>,
    theta: Option<f64>,
    potential: PotentialSpec,
}

/// Largest `L' ≤ L` (same `n`) for which both the box and its doubling resolve `spec`.
pub fn fit_half_length(spec: &PotentialSpec, half_length: f64, n: usize) -> Result<Option<f64>> {
    let resolved = |l: f64| -> Result<bool> {
        let doubled = Grid::new(2.0 * l, 2 * n)?;
        Ok(spec.check_resolution(&doubled).is_ok())
    };
    if resolved(half_length)? {
        return Ok(Some(half_length));
    }
    let (mut lo, mut hi) = (0.0, half_length);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if resolved(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo > 0.0).then_some(lo))
}

fn summarize(spec: CellSpec, half_length: f64, cands: Vec<EmbeddedCandidate>) -> CellResult {
    let count = |v: Verdict| cands.iter().filter(|c| c.verdict == v).count();
    let embedded = count(Verdict::Embedded);
    let best = cands
        .iter()
        .filter(|c| embedded == 0 || c.verdict == Verdict::Embedded)
        .max_by(|a, b| a.localization.total_cmp(&b.localization))
        .cloned();
    CellResult {
        name: spec.name,
        zeta: spec.zeta,
        theta: spec.theta,
        potential: spec.potential,
        status: CellStatus::Ok,
        reason: None,
        half_length: Some(half_length),
        candidates: cands.len(),
        embedded,
        artifacts: count(Verdict::ScatteringArtifact),
        inconclusive: count(Verdict::Inconclusive),
        best,
    }
}

fn run_cell(spec: CellSpec, half_length: f64, n: usize, min_box: f64, e_max: f64, opts: &EmbeddedOptions) -> CellResult {
    let blank = |spec: CellSpec, status: CellStatus, reason: String, l: Option<f64>| CellResult {
        name: spec.name,
        zeta: spec.zeta,
        theta: spec.theta,
        potential: spec.potential,
        status,
        reason: Some(reason),
        half_length: l,
        candidates: 0,
        embedded: 0,
        artifacts: 0,
        inconclusive: 0,
        best: None,
    };
    let l = match fit_half_length(&spec.potential, half_length, n) {
        Ok(Some(l)) if l >= min_box => l,
        Ok(l) => {
            return blank(
                spec,
                CellStatus::Skipped,
                format!("no resolvable box of half-length ≥ {min_box} at n = {n}"),
                l,
            )
        }
        Err(e) => return blank(spec, CellStatus::Failed, e.to_string(), None),
    };
    let result = Grid::new(l, n).and_then(|g| detect_embedded(&spec.potential, e_max, &g, opts));
    match result {
        Ok(c) => summarize(spec, l, c),
        Err(e @ Error::UnderResolved { .. }) => blank(spec, CellStatus::Skipped, e.to_string(), Some(l)),
        Err(e) => blank(spec, CellStatus::Failed, e.to_string(), Some(l)),
    }
}

/// Cells run concurrently under [`MEMORY_BUDGET`].
fn concurrency(n: usize) -> usize {
    let per_cell = 16 * (2 * n) * (2 * n) * 4;
    (MEMORY_BUDGET / per_cell.max(1)).clamp(1, par::workers().max(1))
}

/// Run the sweep without touching the file system.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ScanResult> {
    let s = &cfg.scan;
    let zetas = s.zeta.values();
    let thetas = s.theta.values();
    let mut specs = Vec::new();
    for &zeta in &zetas {
        for &theta in &thetas {
            specs.push(CellSpec {
                name: format!("zeta={zeta};theta={theta}"),
                zeta: Some(zeta),
                theta: Some(theta),
                potential: PotentialSpec::Oscillating {
                    w: s.w,
                    k: s.k,
                    zeta,
                    theta,
                    cutoff_radius: s.cutoff_radius,
                },
            });
        }
    }
    for c in &s.extra_cells {
        specs.push(CellSpec {
            name: c.name.clone(),
            zeta: None,
            theta: None,
            potential: c.potential.clone(),
        });
    }
    let n = cfg.grid.n;
    let l = cfg.grid.half_length;
    let min_box = (MIN_BOX_RADII * s.cutoff_radius).min(l);
    let width = concurrency(n);
    let mut cells = Vec::with_capacity(specs.len());
    let mut pending = specs.into_iter().peekable();
    while pending.peek().is_some() {
        let batch: Vec<CellSpec> = pending.by_ref().take(width).collect();
        let done = par::map(&batch, |spec| run_cell(spec.clone(), l, n, min_box, s.e_max, &s.embedded));
        cells.extend(done);
    }
    Ok(ScanResult {
        zeta_grid: zetas,
        theta_grid: thetas,
        cells,
        config_hash: cfg.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Sweep plus flat rows and the phase-map table.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let res = run_sweep(cfg)?;
    let failed = res.cells.iter().filter(|c| c.status == CellStatus::Failed).count();
    if failed == res.cells.len() && !res.cells.is_empty() {
        let reason = res.cells[0].reason.clone().unwrap_or_default();
        return Err(Error::NoConvergence {
            what: format!("every sweep cell ({failed}) failed; first: {reason}"),
            achieved: failed as f64,
            target: 0.0,
        });
    }
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut energies = Series::new("embedded_candidates", &["cell", "eigenvalue", "localization", "drift"]);
    for (i, c) in res.cells.iter().enumerate() {
        let p = c.name.clone();
        let status = match c.status {
            CellStatus::Ok => 0.0,
            CellStatus::Skipped => 1.0,
            CellStatus::Failed => 2.0,
        };
        rows.push(Row::new(&p, "status", status));
        rows.push(Row::new(&p, "half_length", opt(c.half_length)));
        rows.push(Row::new(&p, "candidates", c.candidates as f64));
        rows.push(Row::new(&p, "embedded", c.embedded as f64));
        rows.push(Row::new(&p, "artifacts", c.artifacts as f64));
        rows.push(Row::new(&p, "inconclusive", c.inconclusive as f64));
        let (e, loc, drift) = match &c.best {
            Some(b) => (b.eigenvalue, b.localization, opt(b.drift)),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        rows.push(Row::new(&p, "best_energy", e));
        rows.push(Row::new(&p, "best_localization", loc));
        rows.push(Row::new(&p, "best_drift", drift));
        if c.best.is_some() {
            energies.push(vec![i as f64, e, loc, drift]);
        }
        table.push(vec![
            c.zeta.map(|v| format!("{v}")).unwrap_or_default(),
            c.theta.map(|v| format!("{v}")).unwrap_or_default(),
            c.name.clone(),
            c.verdict_label().to_string(),
            c.embedded.to_string(),
            if e.is_nan() { String::new() } else { format!("{e}") },
        ]);
    }
    let header = ["zeta", "theta", "cell", "verdict", "embedded", "best_energy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Ok(Outcome {
        report: json!({ "scan": res, "failed_cells": failed }),
        rows,
        series: vec![energies],
        tables: vec![("phase_map".to_string(), header, table)],
        partial: failed > 0,
    })
}
