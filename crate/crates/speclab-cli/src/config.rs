//! Experiment configuration: JSON schema, overrides, validation and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use speclab_core::diagnostics::{default_beta_grid, DecayOptions, FitOptions};
use speclab_core::hscalc::{QuadratureSpec, SymbolSpec};
use speclab_core::operators::{ConjugateSpec, WeightSpec};
use speclab_core::potentials::PotentialSpec;
use speclab_core::spectral::{Absorber, EmbeddedOptions, Window};
use speclab_core::{Error, Grid, Result};

/// Experiment selected by the subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spectrum,
    Decay,
    Mourre,
    Lap,
    Hypothesis,
    Hscheck,
    Regularity,
    Scan,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Spectrum => "spectrum",
            Experiment::Decay => "decay",
            Experiment::Mourre => "mourre",
            Experiment::Lap => "lap",
            Experiment::Hypothesis => "hypothesis",
            Experiment::Hscheck => "hscheck",
            Experiment::Regularity => "regularity",
            Experiment::Scan => "scan",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_length: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_length: 40.0,
            n: 2048,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.half_length, self.n)
    }
}

/// Eigenpair selection: window plus index within it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSelect {
    pub window: Window,
    pub index: usize,
}

impl Default for StateSelect {
    fn default() -> Self {
        StateSelect {
            window: Window::Lowest { count: 1 },
            index: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumParams {
    pub window: Window,
    /// Evaluate the virial defect of each eigenpair against the conjugate.
    pub virial: bool,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        SpectrumParams {
            window: Window::Lowest { count: 10 },
            virial: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayParams {
    pub state: StateSelect,
    pub beta_grid: Vec<f64>,
    pub options: DecayOptions,
}

impl Default for DecayParams {
    fn default() -> Self {
        DecayParams {
            state: StateSelect::default(),
            beta_grid: default_beta_grid(),
            options: DecayOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MourreParams {
    pub intervals: Vec<(f64, f64)>,
    pub discard_r: usize,
}

impl Default for MourreParams {
    fn default() -> Self {
        MourreParams {
            intervals: vec![(0.5, 1.0), (1.0, 2.0), (2.0, 4.0)],
            discard_r: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LapParams {
    pub lambda: f64,
    pub s: f64,
    pub mu_sequence: Vec<f64>,
    pub absorber: Absorber,
}

impl Default for LapParams {
    fn default() -> Self {
        LapParams {
            lambda: 1.0,
            s: 1.0,
            mu_sequence: speclab_core::spectral::default_mu_sequence(),
            absorber: Absorber::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisParams {
    pub state: StateSelect,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub fit: FitOptions,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        HypothesisParams {
            state: StateSelect::default(),
            alphas: vec![0.25, 0.5, 0.75, 1.0],
            betas: default_beta_grid(),
            fit: FitOptions::default(),
        }
    }
}

/// Remainder study on `B = q` over the configured grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemainderParams {
    pub k: usize,
    pub s: f64,
    pub s_prime: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsParams {
    pub symbol: SymbolSpec,
    /// Sizes of the random Hermitian test matrices.
    pub sizes: Vec<usize>,
    pub quadrature: QuadratureSpec,
    /// Remainder studies, each on the configured grid and its doubled box.
    pub remainder: Vec<RemainderParams>,
}

impl Default for HsParams {
    fn default() -> Self {
        HsParams {
            symbol: SymbolSpec::Japanese { exponent: -2.0 },
            sizes: vec![10, 20, 40],
            quadrature: QuadratureSpec::default(),
            remainder: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularityParams {
    pub tau_list: Vec<f64>,
}

impl Default for RegularityParams {
    fn default() -> Self {
        RegularityParams {
            tau_list: vec![0.0625, 0.125, 0.25, 0.5, 1.0],
        }
    }
}

/// Inclusive arithmetic range `lo, lo + step, …, ≤ hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lo + i as f64 * self.step).collect()
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::invalid(field, "need finite lo ≤ hi"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("{field}.step"), "must be positive"));
        }
        if self.values().len() > 10_000 {
            return Err(Error::invalid(field, "more than 10000 values"));
        }
        Ok(())
    }
}

/// Additional named cell appended to a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraCell {
    pub name: String,
    pub potential: PotentialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanParams {
    pub zeta: AxisRange,
    pub theta: AxisRange,
    pub k: f64,
    pub w: f64,
    pub cutoff_radius: f64,
    /// Upper end of the energy range `(0, e_max]`.
    pub e_max: f64,
    pub embedded: EmbeddedOptions,
    pub extra_cells: Vec<ExtraCell>,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams {
            zeta: AxisRange {
                lo: 1.2,
                hi: 2.2,
                step: 0.25,
            },
            theta: AxisRange {
                lo: 0.1,
                hi: 1.1,
                step: 0.25,
            },
            k: 1.0,
            w: 1.0,
            cutoff_radius: 1.0,
            e_max: 4.0,
            embedded: EmbeddedOptions::default(),
            extra_cells: Vec::new(),
        }
    }
}

/// Full experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_potential")]
    pub potential: PotentialSpec,
    #[serde(default = "default_conjugate")]
    pub conjugate: ConjugateSpec,
    #[serde(default)]
    pub weights: Vec<WeightSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub spectrum: SpectrumParams,
    #[serde(default)]
    pub decay: DecayParams,
    #[serde(default)]
    pub mourre: MourreParams,
    #[serde(default)]
    pub lap: LapParams,
    #[serde(default)]
    pub hypothesis: HypothesisParams,
    #[serde(default)]
    pub hscheck: HsParams,
    #[serde(default)]
    pub regularity: RegularityParams,
    #[serde(default)]
    pub scan: ScanParams,
}

fn default_potential() -> PotentialSpec {
    PotentialSpec::Zero
}

fn default_conjugate() -> ConjugateSpec {
    ConjugateSpec::Dilation
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("speclab-out")
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be positive"))
    }
}

fn non_empty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::invalid(field, "must be non-empty"))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    /// Parse a JSON document, apply `key=value` overrides and validate.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::invalid("config", e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text, overrides)
    }

    /// Canonical JSON encoding.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical encoding, hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Schema-level checks run before any computation.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.potential.validate()?;
        self.conjugate.validate(&grid)?;
        for w in &self.weights {
            w.validate()?;
        }
        match self.experiment {
            Experiment::Spectrum => self.spectrum.window.validate()?,
            Experiment::Decay => {
                self.decay.state.window.validate()?;
                non_empty("decay.beta_grid", &self.decay.beta_grid)?;
                if self.decay.beta_grid.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
                    return Err(Error::invalid("decay.beta_grid", "values must lie in (0, 1)"));
                }
            }
            Experiment::Mourre => {
                non_empty("mourre.intervals", &self.mourre.intervals)?;
                for (a, b) in &self.mourre.intervals {
                    if !(*a > 0.0 && b > a) {
                        return Err(Error::invalid("mourre.intervals", "need 0 < a < b"));
                    }
                }
            }
            Experiment::Lap => {
                non_empty("lap.mu_sequence", &self.lap.mu_sequence)?;
                positive("lap.s", self.lap.s)?;
                self.lap.absorber.validate()?;
            }
            Experiment::Hypothesis => {
                self.hypothesis.state.window.validate()?;
                non_empty("hypothesis.alphas", &self.hypothesis.alphas)?;
                non_empty("hypothesis.betas", &self.hypothesis.betas)?;
            }
            Experiment::Hscheck => {
                self.hscheck.symbol.build()?;
                self.hscheck.quadrature.validate()?;
                if self.hscheck.sizes.iter().any(|&s| s == 0 || s > 1024) {
                    return Err(Error::invalid("hscheck.sizes", "sizes must lie in 1..=1024"));
                }
                for r in &self.hscheck.remainder {
                    positive("hscheck.remainder.threshold", r.threshold)?;
                    if r.k == 0 {
                        return Err(Error::invalid("hscheck.remainder.k", "must be at least 1"));
                    }
                }
            }
            Experiment::Regularity => {
                non_empty("regularity.tau_list", &self.regularity.tau_list)?;
            }
            Experiment::Scan => {
                let s = &self.scan;
                s.zeta.validate("scan.zeta")?;
                s.theta.validate("scan.theta")?;
                positive("scan.k", s.k)?;
                positive("scan.cutoff_radius", s.cutoff_radius)?;
                positive("scan.e_max", s.e_max)?;
                if !s.w.is_finite() {
                    return Err(Error::invalid("scan.w", "must be finite"));
                }
                s.embedded.validate()?;
                for c in &s.extra_cells {
                    c.potential.validate()?;
                }
            }
        }
        Ok(())
    }
}

/// Set a dotted path in a JSON document; the value is parsed as JSON, else taken as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid("override", format!("expected key=value, got {assignment}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::invalid("override", "empty key"));
    }
    let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Value::Array(items) = cur {
            let idx: usize = part
                .parse()
                .map_err(|_| Error::invalid("override", format!("{key}: {part} is not an index")))?;
            let len = items.len();
            let slot = items
                .get_mut(idx)
                .ok_or_else(|| Error::invalid("override", format!("{key}: index {idx} ≥ {len}")))?;
            if last {
                *slot = parsed;
                return Ok(());
            }
            cur = slot;
            continue;
        }
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        let map = cur.as_object_mut().expect("object");
        if last {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
