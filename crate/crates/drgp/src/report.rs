//! Line-delimited `key=value` reports and CSV prediction traces.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Ordered key-value records. Floats are written in their shortest exact
/// decimal form so values survive a round trip through the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Adds every leaf of a JSON value under dotted keys.
    pub fn push_json(&mut self, prefix: &str, value: &serde_json::Value) {
        match value {
            serde_json::Value::Object(map) => {
                for (k, v) in map {
                    self.push_json(&format!("{prefix}.{k}"), v);
                }
            }
            serde_json::Value::Array(items) => {
                for (i, v) in items.iter().enumerate() {
                    self.push_json(&format!("{prefix}.{i}"), v);
                }
            }
            serde_json::Value::String(s) => self.push(prefix, s),
            other => self.push(prefix, other),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<BTreeMap<String, String>> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}: line {} has no '='", path.display(), i + 1);
            };
            map.insert(k.to_owned(), v.to_owned());
        }
        Ok(map)
    }
}

/// One simulated step with a two-standard-deviation band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: usize,
    pub y_true: f64,
    pub y_pred: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TraceRow {
    pub fn new(time: usize, y_true: f64, y_pred: f64, variance: f64) -> Self {
        let half = 2.0 * variance.max(0.0).sqrt();
        Self {
            time,
            y_true,
            y_pred,
            lower: y_pred - half,
            upper: y_pred + half,
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("parsing {}", path.display())))
        .collect()
}
