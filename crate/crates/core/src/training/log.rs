//! Machine-readable training log: one JSON record per line per epoch.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// Append-friendly JSONL log file.
pub struct TrainingLog;

impl TrainingLog {
    pub fn append(path: &Path, record: &EpochRecord) -> Result<()> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CoreError::io(path, e))?;
        let line = serde_json::to_string(record)?;
        writeln!(file, "{line}").map_err(|e| CoreError::io(path, e))
    }

    pub fn save_all(path: &Path, records: &[EpochRecord]) -> Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(CoreError::from))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_appends_and_reloads() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let r1 = EpochRecord {
            epoch: 1,
            train_loss: 2.0,
            train_accuracy: 0.3,
            val_loss: 2.1,
            val_accuracy: 0.25,
            alpha: None,
            beta: None,
            gamma: None,
        };
        let r2 = EpochRecord { epoch: 2, alpha: Some(0.4), ..r1.clone() };
        TrainingLog::append(f.path(), &r1).unwrap();
        TrainingLog::append(f.path(), &r2).unwrap();
        let loaded = TrainingLog::load(f.path()).unwrap();
        assert_eq!(loaded, vec![r1, r2]);
    }
}
