//! Run directory: append-only JSONL streams, a manifest, and an exclusive
//! lock while a run is being written.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use fs2::FileExt;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::{json_digest, sha256_hex};
use crate::llm::{Exchange, ExchangeSink};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("run `{0}` is locked by another process")]
    Locked(String),
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("run `{0}` already exists")]
    Exists(String),
    #[error("{path} line {line}: {detail}")]
    Corrupt { path: PathBuf, line: usize, detail: String },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stream {
    Questions,
    Code,
    Tests,
    Candidates,
    Duplicates,
    Verdicts,
    Searches,
    Decisions,
    Exchanges,
}

impl Stream {
    pub const ALL: [Stream; 9] = [
        Stream::Questions,
        Stream::Code,
        Stream::Tests,
        Stream::Candidates,
        Stream::Duplicates,
        Stream::Verdicts,
        Stream::Searches,
        Stream::Decisions,
        Stream::Exchanges,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Stream::Questions => "questions.jsonl",
            Stream::Code => "code.jsonl",
            Stream::Tests => "tests.jsonl",
            Stream::Candidates => "candidates.jsonl",
            Stream::Duplicates => "duplicates.jsonl",
            Stream::Verdicts => "verdicts.jsonl",
            Stream::Searches => "searches.jsonl",
            Stream::Decisions => "decisions.jsonl",
            Stream::Exchanges => "exchanges.jsonl",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    run_id: String,
    stage: String,
    hash: String,
    data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMark {
    pub completed_at: DateTime<Utc>,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config_hash: String,
    pub config: Value,
    #[serde(default)]
    pub stages: BTreeMap<String, StageMark>,
    #[serde(default)]
    pub complete: bool,
}

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

/// A run directory. Writable handles hold an exclusive lock for their
/// lifetime; read-only handles take no lock.
pub struct RunStore {
    dir: PathBuf,
    run_id: String,
    writable: bool,
    write: Mutex<()>,
    _lock: Option<File>,
}

impl std::fmt::Debug for RunStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunStore").field("dir", &self.dir).field("writable", &self.writable).finish()
    }
}

pub fn run_dir(runs_dir: &Path, run_id: &str) -> PathBuf {
    runs_dir.join(run_id)
}

impl RunStore {
    /// Create a new run directory with its manifest.
    pub fn create(runs_dir: &Path, run_id: &str, config: Value) -> Result<Self, StoreError> {
        let dir = run_dir(runs_dir, run_id);
        if dir.join(MANIFEST).exists() {
            return Err(StoreError::Exists(run_id.to_string()));
        }
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let store = Self::lock(dir, run_id)?;
        let manifest = Manifest {
            run_id: run_id.to_string(),
            created_at: Utc::now(),
            config_hash: json_digest(&config),
            config,
            stages: BTreeMap::new(),
            complete: false,
        };
        store.write_manifest(&manifest)?;
        Ok(store)
    }

    /// Open an existing run for writing, repairing any torn trailing lines.
    pub fn open(runs_dir: &Path, run_id: &str) -> Result<Self, StoreError> {
        let dir = run_dir(runs_dir, run_id);
        if !dir.join(MANIFEST).exists() {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        let store = Self::lock(dir, run_id)?;
        for s in Stream::ALL {
            store.repair(s)?;
        }
        Ok(store)
    }

    /// Open without locking; only reads are allowed.
    pub fn open_read(runs_dir: &Path, run_id: &str) -> Result<Self, StoreError> {
        let dir = run_dir(runs_dir, run_id);
        if !dir.join(MANIFEST).exists() {
            return Err(StoreError::NotFound(run_id.to_string()));
        }
        Ok(RunStore { dir, run_id: run_id.to_string(), writable: false, write: Mutex::new(()), _lock: None })
    }

    fn lock(dir: PathBuf, run_id: &str) -> Result<Self, StoreError> {
        let path = dir.join(LOCK);
        let f = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io(&path))?;
        f.try_lock_exclusive().map_err(|_| StoreError::Locked(run_id.to_string()))?;
        Ok(RunStore { dir, run_id: run_id.to_string(), writable: true, write: Mutex::new(()), _lock: Some(f) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    fn path(&self, s: Stream) -> PathBuf {
        self.dir.join(s.file_name())
    }

    /// Drop a trailing line that lacks its newline (an interrupted write).
    fn repair(&self, s: Stream) -> Result<(), StoreError> {
        let path = self.path(s);
        let Ok(mut f) = OpenOptions::new().read(true).write(true).open(&path) else { return Ok(()) };
        let mut buf = Vec::new();
        f.read_to_end(&mut buf).map_err(io(&path))?;
        if buf.is_empty() || buf.ends_with(b"\n") {
            return Ok(());
        }
        let keep = buf.iter().rposition(|&b| b == b'\n').map(|p| p + 1).unwrap_or(0);
        log::warn!("{}: dropping {} bytes of an incomplete record", path.display(), buf.len() - keep);
        f.set_len(keep as u64).map_err(io(&path))?;
        f.seek(SeekFrom::End(0)).map_err(io(&path))?;
        Ok(())
    }

    pub fn append<T: Serialize>(&self, s: Stream, stage: &str, data: &T) -> Result<(), StoreError> {
        self.append_all(s, stage, std::slice::from_ref(data))
    }

    /// Append records as one write.
    pub fn append_all<T: Serialize>(&self, s: Stream, stage: &str, data: &[T]) -> Result<(), StoreError> {
        if !self.writable {
            return Err(StoreError::Locked(format!("{} (opened read-only)", self.run_id)));
        }
        if data.is_empty() {
            return Ok(());
        }
        let mut text = String::new();
        for d in data {
            let value = serde_json::to_value(d).map_err(|e| StoreError::Serialize(e.to_string()))?;
            let env = Envelope { run_id: self.run_id.clone(), stage: stage.to_string(), hash: sha256_hex(value.to_string()), data: value };
            text.push_str(&serde_json::to_string(&env).map_err(|e| StoreError::Serialize(e.to_string()))?);
            text.push('\n');
        }
        let path = self.path(s);
        let _g = self.write.lock().unwrap();
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
        f.write_all(text.as_bytes()).map_err(io(&path))?;
        f.flush().map_err(io(&path))?;
        Ok(())
    }

    /// All complete records of a stream. A torn final line is ignored; any
    /// other malformed line or hash mismatch is corruption.
    pub fn read<T: DeserializeOwned>(&self, s: Stream) -> Result<Vec<T>, StoreError> {
        let path = self.path(s);
        let f = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(io(&path)(e)),
        };
        let mut reader = BufReader::new(f);
        let mut out = Vec::new();
        let mut line = String::new();
        let mut n = 0;
        loop {
            line.clear();
            let read = reader.read_line(&mut line).map_err(io(&path))?;
            if read == 0 {
                break;
            }
            n += 1;
            if !line.ends_with('\n') {
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |detail: String| StoreError::Corrupt { path: path.clone(), line: n, detail };
            let env: Envelope<Value> = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            if sha256_hex(env.data.to_string()) != env.hash {
                return Err(corrupt("hash mismatch".into()));
            }
            out.push(serde_json::from_value(env.data).map_err(|e| corrupt(e.to_string()))?);
        }
        Ok(out)
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let path = self.dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { path, line: 0, detail: e.to_string() })
    }

    pub fn write_manifest(&self, m: &Manifest) -> Result<(), StoreError> {
        self.write_file(MANIFEST, &(serde_json::to_string_pretty(m).map_err(|e| StoreError::Serialize(e.to_string()))? + "\n"))
    }

    pub fn mark_stage(&self, stage: &str, items: usize) -> Result<(), StoreError> {
        let mut m = self.manifest()?;
        m.stages.insert(stage.to_string(), StageMark { completed_at: Utc::now(), items });
        self.write_manifest(&m)
    }

    pub fn stage_done(&self, stage: &str) -> Result<bool, StoreError> {
        Ok(self.manifest()?.stages.contains_key(stage))
    }

    /// Write a file in the run directory atomically.
    pub fn write_file(&self, name: &str, contents: &str) -> Result<(), StoreError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io(parent))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, contents).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))?;
        Ok(())
    }
}

impl ExchangeSink for RunStore {
    fn record(&self, exchange: &Exchange) -> Result<(), String> {
        self.append(Stream::Exchanges, "exchange", exchange).map_err(|e| e.to_string())
    }
}
