//! Result persistence: `results.json`, `results.csv` and `plotdata/*.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use speclab_core::diagnostics::Row;
use speclab_core::Error;

use crate::config::ExperimentConfig;

/// Version of the `results.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

/// A named CSV series written to `plotdata/<name>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Series {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Everything an experiment produces.
#[derive(Debug, Default)]
pub struct Outcome {
    pub report: Value,
    pub rows: Vec<Row>,
    pub series: Vec<Series>,
    /// Extra CSV files at the top level of the output directory, with string cells.
    pub tables: Vec<(String, Vec<String>, Vec<Vec<String>>)>,
    /// Set when a sweep finished with failed cells.
    pub partial: bool,
}

/// Machine-readable failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Top-level `results.json` document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub config: Value,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<ErrorRecord>,
    pub report: Value,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Numerical(format!("cannot write {}: {e}", path.display()))
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Write all artifacts; returns the output directory.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: Option<&Outcome>,
    error: Option<&Error>,
) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir.join("plotdata")).map_err(|e| io_err(dir, e))?;
    let hash = cfg.hash();
    let doc = ResultsDocument {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.experiment.name().to_string(),
        config_hash: hash.clone(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        status: match (error, outcome) {
            (Some(_), _) => "error".into(),
            (None, Some(o)) if o.partial => "partial".into(),
            _ => "ok".into(),
        },
        error: error.map(ErrorRecord::from),
        report: outcome.map(|o| o.report.clone()).unwrap_or(Value::Null),
    };
    let json_path = dir.join("results.json");
    let text = serde_json::to_string_pretty(&doc).expect("results serialize");
    fs::write(&json_path, text + "\n").map_err(|e| io_err(&json_path, e))?;

    let header: Vec<String> = ["params", "quantity", "value", "config_hash"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = outcome
        .map(|o| {
            o.rows
                .iter()
                .map(|r| vec![r.params.clone(), r.quantity.clone(), format_value(r.value), hash.clone()])
                .collect()
        })
        .unwrap_or_default();
    write_csv(&dir.join("results.csv"), &header, &rows)?;

    if let Some(o) = outcome {
        for s in &o.series {
            let mut h = s.header.clone();
            h.push("config_hash".into());
            let rows: Vec<Vec<String>> = s
                .rows
                .iter()
                .map(|r| {
                    let mut v: Vec<String> = r.iter().map(|x| format_value(*x)).collect();
                    v.push(hash.clone());
                    v
                })
                .collect();
            write_csv(&dir.join("plotdata").join(format!("{}.csv", s.name)), &h, &rows)?;
        }
        for (name, header, rows) in &o.tables {
            let mut h = header.clone();
            h.push("config_hash".into());
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut v = r.clone();
                    v.push(hash.clone());
                    v
                })
                .collect();
            write_csv(&dir.join("plotdata").join(format!("{name}.csv")), &h, &rows)?;
        }
    }
    Ok(dir.to_path_buf())
}

/// `results.json` for a configuration that failed before an experiment could start.
pub fn write_config_error(dir: &Path, experiment: &str, error: &Error) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let doc = ResultsDocument {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: experiment.to_string(),
        config_hash: String::new(),
        config: Value::Null,
        status: "error".into(),
        error: Some(ErrorRecord::from(error)),
        report: Value::Null,
    };
    let json_path = dir.join("results.json");
    let text = serde_json::to_string_pretty(&doc).expect("results serialize");
    fs::write(&json_path, text + "\n").map_err(|e| io_err(&json_path, e))?;
    Ok(dir.to_path_buf())
}
