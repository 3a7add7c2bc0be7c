//! Persistent experience memory.
//!
//! Entries live in a JSON Lines file whose first line is a schema-version
//! header. Appends validate the batch, take an exclusive lock, deduplicate by
//! (question, answer) keeping the maximum reward, and rewrite atomically.
//! SQL answers can be annotated with deterministic natural-language
//! descriptions, and an exact-search vector index is kept in a sidecar file
//! keyed by a content digest so staleness is detectable.

mod describe;
mod index;

pub use describe::{describe_structured_answer, AnswerKind};
pub use index::{build_index, embedded_text, IndexedVector, VectorIndex};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest;

pub const STORE_SCHEMA: &str = "experience-store";
pub const STORE_VERSION: u32 = 1;

const LOCK_ATTEMPTS: usize = 50;
const LOCK_RETRY: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {path} is locked by another writer")]
    Locked { path: PathBuf },
    #[error("rejected batch: {} invalid entries, first: entry {} ({})", .0.len(), .0[0].index, .0[0].message)]
    InvalidBatch(Vec<EntryDiagnostic>),
    #[error("{path} has {count} malformed lines; refusing to rewrite (first at line {first_line}: {first_message})")]
    Corrupt { path: PathBuf, count: usize, first_line: usize, first_message: String },
    #[error("malformed store header: {0}")]
    Header(String),
    #[error("unsupported store version {found}, this build reads version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("malformed index file: {0}")]
    IndexFormat(String),
    #[error("embedding failed for entry {entry_id}: {detail}")]
    Embedding { entry_id: String, detail: String },
    #[error("embedding dimension drift at entry {entry_id}: index has {expected}, got {found}; rebuild required")]
    DimensionDrift { entry_id: String, expected: usize, found: usize },
}

/// Why one entry of an append batch was rejected.
#[derive(Debug, Clone, Serialize)]
pub struct EntryDiagnostic {
    pub index: usize,
    pub id: String,
    pub message: String,
}

/// Why one line of a store file could not be loaded.
#[derive(Debug, Clone, Serialize)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

/// One remembered reasoning step: a question, its answer, and the reward
/// label the search assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceEntry {
    pub id: String,
    pub dataset: String,
    pub question: String,
    pub answer: String,
    pub reward: f64,
    pub depth: usize,
    pub parent_trace_id: Option<String>,
    pub nl_description: Option<String>,
    pub evidence_digest: String,
}

impl ExperienceEntry {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if !self.reward.is_finite() || !(0.0..=1.0).contains(&self.reward) {
            return Err(format!("reward {} outside [0, 1]", self.reward));
        }
        Ok(())
    }

    fn dedup_key(&self) -> (String, String) {
        (self.question.clone(), self.answer.clone())
    }
}

/// An in-memory snapshot of the store, with the dimension and digest of its
/// sidecar index when a fresh one exists (zero / empty otherwise).
#[derive(Debug, Clone, Default, Serialize)]
pub struct MemoryDataset {
    pub entries: Vec<ExperienceEntry>,
    pub embedding_dimension: usize,
    pub index_digest: String,
}

impl MemoryDataset {
    pub fn from_entries(entries: Vec<ExperienceEntry>) -> Self {
        MemoryDataset { entries, embedding_dimension: 0, index_digest: String::new() }
    }

    /// Digest over the serialized entries in order; the sidecar index records
    /// it so a changed store invalidates the index.
    pub fn content_digest(&self) -> String {
        let lines: Vec<String> = self
            .entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes"))
            .collect();
        let parts: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        digest::sha256_hex_parts(&parts)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    schema: String,
    version: u32,
}

/// Appends a batch, deduplicating by (question, answer) with max-reward wins.
/// Returns the number of genuinely new pairs. The whole batch is rejected if
/// any entry is invalid, and the rewrite is atomic (temp file + rename).
pub fn append_entries(store_path: &Path, entries: &[ExperienceEntry]) -> Result<usize, StoreError> {
    let diagnostics: Vec<EntryDiagnostic> = entries
        .iter()
        .enumerate()
        .filter_map(|(index, e)| {
            e.validate().err().map(|message| EntryDiagnostic { index, id: e.id.clone(), message })
        })
        .collect();
    if !diagnostics.is_empty() {
        return Err(StoreError::InvalidBatch(diagnostics));
    }

    let _lock = StoreLock::acquire(store_path)?;
    let mut existing = if store_path.exists() {
        let (dataset, line_diags) = load_store(store_path)?;
        if let Some(first) = line_diags.first() {
            return Err(StoreError::Corrupt {
                path: store_path.to_path_buf(),
                count: line_diags.len(),
                first_line: first.line,
                first_message: first.message.clone(),
            });
        }
        dataset.entries
    } else {
        Vec::new()
    };

    let mut by_key: HashMap<(String, String), usize> = existing
        .iter()
        .enumerate()
        .map(|(i, e)| (e.dedup_key(), i))
        .collect();
    let mut appended = 0;
    for entry in entries {
        match by_key.get(&entry.dedup_key()) {
            Some(&i) => {
                if entry.reward > existing[i].reward {
                    existing[i].reward = entry.reward;
                }
            }
            None => {
                by_key.insert(entry.dedup_key(), existing.len());
                existing.push(entry.clone());
                appended += 1;
            }
        }
    }

    write_store_file(store_path, &existing)?;
    Ok(appended)
}

/// Loads a store file. Malformed lines become diagnostics rather than being
/// silently dropped; a missing or wrong header is a hard error.
pub fn load_store(store_path: &Path) -> Result<(MemoryDataset, Vec<LineDiagnostic>), StoreError> {
    let text = fs::read_to_string(store_path)
        .map_err(|source| StoreError::Io { path: store_path.to_path_buf(), source })?;
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            let header: StoreHeader = serde_json::from_str(line)
                .map_err(|e| StoreError::Header(format!("line {line_no}: {e}")))?;
            if header.schema != STORE_SCHEMA {
                return Err(StoreError::Header(format!(
                    "expected schema {STORE_SCHEMA:?}, found {:?}",
                    header.schema
                )));
            }
            if header.version != STORE_VERSION {
                return Err(StoreError::Version { found: header.version, supported: STORE_VERSION });
            }
            header_seen = true;
            continue;
        }
        match serde_json::from_str::<ExperienceEntry>(line) {
            Ok(entry) => match entry.validate() {
                Ok(()) => entries.push(entry),
                Err(message) => diagnostics.push(LineDiagnostic { line: line_no, message }),
            },
            Err(e) => diagnostics.push(LineDiagnostic { line: line_no, message: e.to_string() }),
        }
    }

    let mut dataset = MemoryDataset::from_entries(entries);
    let sidecar = VectorIndex::sidecar_path(store_path);
    if sidecar.exists() {
        if let Ok(index) = VectorIndex::read_from(&sidecar) {
            if index.store_digest == dataset.content_digest() {
                dataset.embedding_dimension = index.embedding_dimension;
                dataset.index_digest = index.store_digest;
            }
        }
    }
    Ok((dataset, diagnostics))
}

/// Fills in missing natural-language descriptions of stored answers,
/// rewriting the store atomically. Entries that already carry a description
/// keep it. Returns how many entries were annotated.
pub fn annotate_descriptions(store_path: &Path, kind: AnswerKind) -> Result<usize, StoreError> {
    let _lock = StoreLock::acquire(store_path)?;
    let (dataset, diagnostics) = load_store(store_path)?;
    if let Some(first) = diagnostics.first() {
        return Err(StoreError::Corrupt {
            path: store_path.to_path_buf(),
            count: diagnostics.len(),
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    let mut entries = dataset.entries;
    let mut annotated = 0;
    for entry in &mut entries {
        if entry.nl_description.is_none() {
            entry.nl_description = Some(describe_structured_answer(&entry.answer, kind));
            annotated += 1;
        }
    }
    if annotated > 0 {
        write_store_file(store_path, &entries)?;
    }
    Ok(annotated)
}

fn write_store_file(store_path: &Path, entries: &[ExperienceEntry]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io { path: store_path.to_path_buf(), source };
    let header = serde_json::to_string(&StoreHeader {
        schema: STORE_SCHEMA.to_string(),
        version: STORE_VERSION,
    })
    .expect("header serializes");
    let mut body = String::with_capacity(entries.len() * 128 + header.len() + 1);
    body.push_str(&header);
    body.push('\n');
    for entry in entries {
        body.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        body.push('\n');
    }
    let tmp = store_path.with_extension("jsonl.tmp");
    fs::write(&tmp, body).map_err(io_err)?;
    fs::rename(&tmp, store_path).map_err(io_err)?;
    Ok(())
}

/// Exclusive writer lock: a sibling `.lock` file created with create-new
/// semantics, removed on drop.
struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    fn acquire(store_path: &Path) -> Result<StoreLock, StoreError> {
        Self::acquire_with(store_path, LOCK_ATTEMPTS, LOCK_RETRY)
    }

    fn acquire_with(
        store_path: &Path,
        attempts: usize,
        retry: Duration,
    ) -> Result<StoreLock, StoreError> {
        let path = lock_path(store_path);
        for attempt in 0..attempts {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(StoreLock { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if attempt + 1 < attempts {
                        std::thread::sleep(retry);
                    }
                }
                Err(source) => return Err(StoreError::Io { path, source }),
            }
        }
        Err(StoreError::Locked { path: store_path.to_path_buf() })
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn lock_path(store_path: &Path) -> PathBuf {
    let mut os = store_path.as_os_str().to_os_string();
    os.push(".lock");
    PathBuf::from(os)
}
