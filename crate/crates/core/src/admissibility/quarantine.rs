//! Append-only log of rejected evidence, one JSON record per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::RejectionCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub item_id: String,
    pub reason: RejectionCode,
    pub timestamp: String,
}

impl QuarantineRecord {
    pub fn now(item_id: &str, reason: RejectionCode) -> Self {
        Self {
            item_id: item_id.to_owned(),
            reason,
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }
}

/// Records are kept in memory and, when a path is set, appended to disk as
/// they arrive.
#[derive(Debug, Default)]
pub struct QuarantineLog {
    path: Option<PathBuf>,
    records: Vec<QuarantineRecord>,
}

impl QuarantineLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open a log file, loading any records it already holds.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    records.push(serde_json::from_str(&line)?);
                }
            }
        }
        Ok(Self {
            path: Some(path),
            records,
        })
    }

    pub fn append(&mut self, record: QuarantineRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[QuarantineRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
