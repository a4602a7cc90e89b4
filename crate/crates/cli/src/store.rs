//! Append-only JSON-lines event log, one file per session. A session's state
//! is the fold of its events over a fresh session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use caipi_core::oracle::Feedback;
use caipi_core::CorrectionSource;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Event {
    Created {
        /// Resolved experiment config (TOML).
        config: String,
        fold: usize,
    },
    Feedback {
        feedback: Feedback,
        source: CorrectionSource,
    },
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Starts the log of a new session with its creation event.
    pub fn create(dir: &Path, id: &str, created: &Event) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
        let path = dir.join(format!("{id}.jsonl"));
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::write(&path, e))?;
        let mut log = EventLog { path, file };
        log.append(created)?;
        Ok(log)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| CliError::write(path, e))?;
        Ok(EventLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one event and syncs it to disk.
    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).expect("serializable");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| CliError::write(&self.path, e))?;
        self.file.sync_data().map_err(|e| CliError::write(&self.path, e))
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> CliError {
    CliError::CorruptStore {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Reads a log; the first event must be the creation and no other may be.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).map_err(|e| corrupt(path, e.to_string()))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| corrupt(path, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| corrupt(path, format!("line {}: {e}", i + 1)))?;
        let created = matches!(event, Event::Created { .. });
        if created != events.is_empty() {
            return Err(corrupt(path, format!("line {}: creation event out of place", i + 1)));
        }
        events.push(event);
    }
    if events.is_empty() {
        return Err(corrupt(path, "empty log"));
    }
    Ok(events)
}

/// `(session id, path)` of every log in `dir`, sorted by id.
pub fn session_logs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(dir).map_err(|e| corrupt(dir, e.to_string()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| corrupt(dir, e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| corrupt(&path, "file name is not a session id"))?
                .to_string();
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}
