use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::TransportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptMode {
    /// Call the provider and append every exchange to the store.
    #[default]
    Record,
    /// Answer only from the store; a missing digest is an error.
    Replay,
    /// Call the provider, persist nothing.
    Passthrough,
}

impl FromStr for TranscriptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            "passthrough" => Ok(Self::Passthrough),
            other => Err(format!("unknown transcript mode '{other}'")),
        }
    }
}

/// One line of the on-disk JSONL store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub digest: String,
    pub request: serde_json::Value,
    pub response_text: String,
    pub timestamp: String,
}

/// Digest-keyed response cache. Reads are concurrent, appends are serialized.
#[derive(Debug)]
pub struct TranscriptStore {
    mode: TranscriptMode,
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, TranscriptRecord>>,
    writer: Mutex<Option<File>>,
}

impl TranscriptStore {
    /// In-memory store (nothing persisted).
    pub fn in_memory(mode: TranscriptMode) -> Self {
        Self {
            mode,
            path: None,
            records: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Open a JSONL store. Replay mode requires the file to exist; record
    /// mode creates it and appends.
    pub fn open(path: impl AsRef<Path>, mode: TranscriptMode) -> Result<Self, TransportError> {
        let path = path.as_ref().to_path_buf();
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| store_err(&path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| store_err(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: TranscriptRecord = serde_json::from_str(&line).map_err(|e| {
                    TransportError::Store(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                // Later lines win.
                records.insert(rec.digest.clone(), rec);
            }
        } else if mode == TranscriptMode::Replay {
            return Err(TransportError::Store(format!(
                "replay store {} does not exist",
                path.display()
            )));
        }
        let writer = if mode == TranscriptMode::Record {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| store_err(parent, e))?;
            }
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| store_err(&path, e))?,
            )
        } else {
            None
        };
        Ok(Self {
            mode,
            path: Some(path),
            records: RwLock::new(records),
            writer: Mutex::new(writer),
        })
    }

    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.records
            .read()
            .expect("store lock poisoned")
            .get(digest)
            .map(|r| r.response_text.clone())
    }

    pub fn insert(&self, digest: &str, request: serde_json::Value, response_text: &str) -> Result<(), TransportError> {
        let record = TranscriptRecord {
            digest: digest.to_string(),
            request,
            response_text: response_text.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        {
            let mut writer = self.writer.lock().expect("store writer poisoned");
            if let Some(file) = writer.as_mut() {
                let mut line = serde_json::to_string(&record).map_err(|e| TransportError::Store(e.to_string()))?;
                line.push('\n');
                file.write_all(line.as_bytes())
                    .map_err(|e| TransportError::Store(e.to_string()))?;
            }
        }
        self.records
            .write()
            .expect("store lock poisoned")
            .insert(record.digest.clone(), record);
        Ok(())
    }
}

fn store_err(path: &Path, e: std::io::Error) -> TransportError {
    TransportError::Store(format!("{}: {e}", path.display()))
}
