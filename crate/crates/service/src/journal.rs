//! Append-only JSONL journals.
//!
//! One JSON object per line, fsynced on every append. A final line without
//! its newline is a torn write from a crash; it is dropped on open and the
//! file truncated back to the last complete line.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{Mutex, MutexGuard};

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// A journal file behind a single-writer lock. Without a path it keeps
/// nothing, which serves in-memory deployments and tests.
pub struct Journal {
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
}

pub struct JournalWriter<'a> {
    path: Option<&'a Path>,
    file: MutexGuard<'a, Option<File>>,
}

impl<'a> JournalWriter<'a> {
    pub fn append(&mut self, entry: &impl Serialize) -> Result<(), JournalError> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let path = self.path.expect("file journals have a path");
        let mut line = serde_json::to_string(entry).expect("journal entries serialize");
        line.push('\n');
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)
    }
}

impl Journal {
    pub fn memory() -> Self {
        Self {
            path: None,
            file: Mutex::new(None),
        }
    }

    /// Open or create `path` and return its entries in write order.
    pub fn open<T: DeserializeOwned>(path: &Path) -> Result<(Self, Vec<T>), JournalError> {
        let io = |source| JournalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io(e)),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() < text.len() {
            tracing::warn!(path = %path.display(), "dropping torn final journal line");
            let f = OpenOptions::new().write(true).open(path).map_err(io)?;
            f.set_len(complete.len() as u64).map_err(io)?;
            f.sync_data().map_err(io)?;
        }
        let mut entries = Vec::new();
        for (idx, line) in complete.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line).map_err(|e| JournalError::Corrupt {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((
            Self {
                path: Some(path.to_path_buf()),
                file: Mutex::new(Some(file)),
            },
            entries,
        ))
    }

    /// Take the writer lock. Callers apply their in-memory update while
    /// holding it so memory and file agree on order.
    pub async fn writer(&self) -> JournalWriter<'_> {
        JournalWriter {
            path: self.path.as_deref(),
            file: self.file.lock().await,
        }
    }
}
