//! Synthetic dataset generation, 80/10/10 splitting, and the logit-replay
//! format that lets the routing machinery run on externally produced model
//! outputs. All generation and splitting is a pure function of (spec, seed).

mod replay;
mod split;
mod synthetic;

pub use replay::{load_replay, save_replay, ReplayRow};
pub use split::split;
pub use synthetic::{gen_synthetic, SyntheticSpec};

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled feature dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine<'a> {
    x: std::borrow::Cow<'a, [f64]>,
    label: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn input_width(&self) -> Option<usize> {
        self.xs.first().map(|x| x.len())
    }

    pub(crate) fn check_input_width(&self, expected: usize) -> Result<()> {
        if let Some(bad) = self.xs.iter().position(|x| x.len() != expected) {
            return Err(Error::domain(format!(
                "sample {bad} has {} features, expected {expected}",
                self.xs[bad].len()
            )));
        }
        Ok(())
    }

    /// Line-delimited records `{"x":[...],"label":n}`, one sample per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for (x, label) in self.xs.iter().zip(&self.labels) {
            let line = serde_json::to_string(&DatasetLine {
                x: std::borrow::Cow::Borrowed(x),
                label: *label,
            })
            .map_err(|e| Error::data(format!("dataset serialization failed: {e}")))?;
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        let mut f = fs::File::create(path)
            .map_err(|e| Error::data(format!("cannot write dataset {}: {e}", path.display())))?;
        f.write_all(&out)
            .map_err(|e| Error::data(format!("cannot write dataset {}: {e}", path.display())))
    }

    /// Loads a dataset file; the class count is the highest label plus one.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path)
            .map_err(|e| Error::data(format!("cannot read dataset {}: {e}", path.display())))?;
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: DatasetLine = serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            let x = row.x.into_owned();
            if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "{}:{}: non-finite feature {bad}",
                    path.display(),
                    lineno + 1
                )));
            }
            match width {
                None => width = Some(x.len()),
                Some(w) if w != x.len() => {
                    return Err(Error::data(format!(
                        "{}:{}: feature width {} differs from {}",
                        path.display(),
                        lineno + 1,
                        x.len(),
                        w
                    )))
                }
                _ => {}
            }
            xs.push(x);
            labels.push(row.label);
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Dataset {
            xs,
            labels,
            n_classes,
        })
    }
}
