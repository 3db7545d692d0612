//! Operation journal and snapshot persistence.
//!
//! Mutating operations are appended as JSON lines with a monotonically
//! increasing `seq`; a full-state snapshot is written every
//! `snapshot_every_n_ops` mutations, after which the journal restarts
//! empty.  Recovery loads the snapshot (if any) and replays the journal
//! tail through the ordinary dispatch path.

use crate::error::{GridError, GridResult};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// One journaled operation: the original request plus its sequence
/// number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub op: String,
    #[serde(default)]
    pub args: serde_json::Value,
    #[serde(default)]
    pub auth: String,
}

pub struct Journal {
    path: PathBuf,
    file: File,
    next_seq: u64,
    appended_since_reset: u64,
}

fn io_err(e: std::io::Error) -> GridError {
    GridError::backend_failure(format!("journal io: {e}"))
}

impl Journal {
    /// Open (or create) the journal and return its existing records.
    pub fn open(path: &Path, first_seq: u64) -> GridResult<(Journal, Vec<JournalRecord>)> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_err)?);
            for line in reader.lines() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JournalRecord = serde_json::from_str(&line)
                    .map_err(|e| GridError::backend_failure(format!("corrupt journal line: {e}")))?;
                records.push(rec);
            }
        }
        let next_seq = records.last().map(|r| r.seq + 1).unwrap_or(first_seq);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        let appended = records.len() as u64;
        Ok((Journal { path: path.to_path_buf(), file, next_seq, appended_since_reset: appended }, records))
    }

    pub fn append(&mut self, op: &str, args: serde_json::Value, auth: &str) -> GridResult<u64> {
        let seq = self.next_seq;
        let rec = JournalRecord { seq, op: op.to_string(), args, auth: auth.to_string() };
        let mut line = serde_json::to_vec(&rec).expect("journal record serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err)?;
        self.file.flush().map_err(io_err)?;
        self.next_seq += 1;
        self.appended_since_reset += 1;
        Ok(seq)
    }

    pub fn appended_since_reset(&self) -> u64 {
        self.appended_since_reset
    }

    /// Truncate the journal after a snapshot has been taken.
    pub fn reset(&mut self) -> GridResult<()> {
        self.file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&self.path)
            .map_err(io_err)?;
        self.appended_since_reset = 0;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile<T> {
    seq: u64,
    state: T,
}

/// Write a full-state snapshot carrying the last applied sequence.
pub fn save_snapshot<T: Serialize>(path: &Path, seq: u64, state: &T) -> GridResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let tmp = path.with_extension("tmp");
    let body = serde_json::to_vec(&SnapshotFile { seq, state })
        .map_err(|e| GridError::backend_failure(format!("snapshot encode: {e}")))?;
    std::fs::write(&tmp, body).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Load a snapshot if one exists; returns (last applied seq, state).
pub fn load_snapshot<T: DeserializeOwned>(path: &Path) -> GridResult<Option<(u64, T)>> {
    if !path.exists() {
        return Ok(None);
    }
    let body = std::fs::read(path).map_err(io_err)?;
    let snap: SnapshotFile<T> = serde_json::from_slice(&body)
        .map_err(|e| GridError::backend_failure(format!("snapshot decode: {e}")))?;
    Ok(Some((snap.seq, snap.state)))
}

/// Conventional snapshot path next to a journal.
pub fn snapshot_path(journal_path: &Path) -> PathBuf {
    let mut name = journal_path.file_name().unwrap_or_default().to_os_string();
    name.push(".snapshot");
    journal_path.with_file_name(name)
}
