use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LogitVector;

/// Per-sample logits captured from externally produced models, letting the
/// routing and accounting machinery replay them without the models present.
/// The `server` column is optional; cascades that need it fail fast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub id: usize,
    pub label: usize,
    pub exit1: LogitVector,
    pub exit2: LogitVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<LogitVector>,
}

impl ReplayRow {
    fn check(&self) -> Result<()> {
        let n = self.exit1.len();
        if self.exit2.len() != n {
            return Err(Error::data(format!(
                "exit1 has {n} classes but exit2 has {}",
                self.exit2.len()
            )));
        }
        if let Some(server) = &self.server {
            if server.len() != n {
                return Err(Error::data(format!(
                    "exit1 has {n} classes but server has {}",
                    server.len()
                )));
            }
        }
        if self.label >= n {
            return Err(Error::data(format!(
                "label {} out of range for {n} classes",
                self.label
            )));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.exit1.len()
    }
}

/// Writes rows as line-delimited records, one JSON object per line.
/// The round trip through [`load_replay`] is lossless.
pub fn save_replay(rows: &[ReplayRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::data(format!("replay serialization failed: {e}")))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)
        .map_err(|e| Error::data(format!("cannot write replay {}: {e}", path.display())))?;
    f.write_all(&out)
        .map_err(|e| Error::data(format!("cannot write replay {}: {e}", path.display())))
}

/// Loads a replay file, validating each row and the cross-row class count.
/// Errors carry the offending 1-based line number.
pub fn load_replay(path: impl AsRef<Path>) -> Result<Vec<ReplayRow>> {
    let path = path.as_ref();
    let f = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot read replay {}: {e}", path.display())))?;
    let mut rows: Vec<ReplayRow> = Vec::new();
    let mut classes = None;
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let at = |msg: String| Error::data(format!("{}:{}: {msg}", path.display(), lineno + 1));
        let line = line.map_err(|e| at(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ReplayRow = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        row.check().map_err(|e| at(e.to_string()))?;
        match classes {
            None => classes = Some(row.n_classes()),
            Some(n) if n != row.n_classes() => {
                return Err(at(format!(
                    "row has {} classes, previous rows have {n}",
                    row.n_classes()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn sample_rows() -> Vec<ReplayRow> {
        vec![
            ReplayRow {
                id: 0,
                label: 1,
                exit1: lv(&[0.25, 1.5, -0.75]),
                exit2: lv(&[0.1, 2.0, -1.0]),
                server: Some(lv(&[0.0, 3.0, -2.0])),
            },
            ReplayRow {
                id: 1,
                label: 0,
                exit1: lv(&[1.0, 0.0, 0.0]),
                exit2: lv(&[2.0, 0.5, 0.25]),
                server: None,
            },
        ]
    }

    #[test]
    fn replay_round_trip_is_lossless() {
        let rows = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        save_replay(&rows, &path).unwrap();
        let back = load_replay(&path).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn inconsistent_class_counts_across_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"id\":0,\"label\":0,\"exit1\":[1.0,2.0,3.0],\"exit2\":[1.0,2.0,3.0]}\n",
                "{\"id\":1,\"label\":0,\"exit1\":[1.0,2.0],\"exit2\":[1.0,2.0]}\n",
            ),
        )
        .unwrap();
        let err = load_replay(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn mismatched_server_width_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        fs::write(
            &path,
            "{\"id\":0,\"label\":0,\"exit1\":[1.0,2.0,3.0],\"exit2\":[1.0,2.0,3.0],\"server\":[1.0,2.0,3.0,4.0]}\n",
        )
        .unwrap();
        let err = load_replay(&path).unwrap_err();
        assert!(err.to_string().contains("server"), "{err}");
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        fs::write(&path, "garbage\n").unwrap();
        let err = load_replay(&path).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }
}
