use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;

use super::EvaluationRecord;
use crate::error::{Error, Result};

/// Append-only JSON-lines store of evaluation records keyed by
/// `candidate_hash`. Later lines win on lookup.
#[derive(Debug, Default)]
pub struct RecordCache {
    path: Option<PathBuf>,
    records: HashMap<String, EvaluationRecord>,
}

impl RecordCache {
    pub fn in_memory() -> Self {
        RecordCache::default()
    }

    /// Opens (or creates on first store) the store at `path`. Corrupted
    /// lines are skipped with a warning.
    pub fn open(path: &Path) -> Result<Self> {
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        warn!("{}:{}: unreadable cache line: {e}", path.display(), i + 1);
                        continue;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<EvaluationRecord>(&line) {
                    Ok(r) => {
                        records.insert(r.candidate_hash.clone(), r);
                    }
                    Err(e) => warn!("{}:{}: skipping corrupted cache line: {e}", path.display(), i + 1),
                }
            }
        }
        Ok(RecordCache {
            path: Some(path.to_path_buf()),
            records,
        })
    }

    pub fn lookup(&self, candidate_hash: &str) -> Option<&EvaluationRecord> {
        self.records.get(candidate_hash)
    }

    pub fn store(&mut self, record: &EvaluationRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut line = serde_json::to_string(record)?;
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        self.records
            .insert(record.candidate_hash.clone(), record.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
