//! Durable store of memory events.
//!
//! A store is a directory:
//!
//! ```text
//! <dir>/events.log      one JSON record per line, appended and fsynced
//! <dir>/snapshot.json   last compacted state (optional)
//! <dir>/LOCK            advisory lock held while the store is open
//! ```
//!
//! Opening replays the log over the snapshot. Compaction writes a new
//! snapshot and truncates the log. Timestamps are persisted both as epoch
//! seconds and as an ISO-8601 rendering; the integer is authoritative.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::embedding::{EmbedError, Embedder, Embedding, Fingerprint};
use crate::memory_math::{self, ConsolidationState, MathError, TimeScaling};
use crate::vector_index::{IndexEntry, VectorIndex};

/// On-disk format version. Bumped whenever the record layout or the local
/// hash seed changes.
pub const FORMAT_VERSION: u32 = 1;

pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOCK_FILE: &str = "LOCK";

/// Importance assumed by the baseline scorer when an event has none.
pub const DEFAULT_IMPORTANCE: u8 = 5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("store at {0} is locked by another process")]
    Locked(PathBuf),
    #[error("corrupt record at line {line} (byte offset {offset}): {reason}")]
    Corrupt {
        line: usize,
        offset: u64,
        reason: String,
    },
    #[error("truncated record at line {line} (byte offset {offset}); the log ends mid-record")]
    Truncated { line: usize, offset: u64 },
    #[error("store format version {found} is not supported (expected {expected}); re-create the store and re-ingest its events")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("embedder fingerprint {found} does not match store fingerprint {expected}; re-embed the store's events with the matching embedder or open it with {expected}")]
    FingerprintMismatch {
        expected: Fingerprint,
        found: Fingerprint,
    },
    #[error("unknown event {0}")]
    UnknownId(EventId),
    #[error("event {0} already exists")]
    DuplicateId(EventId),
    #[error("invalid event: {0}")]
    Invalid(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Time-ordered 128-bit event identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(Uuid);

impl EventId {
    pub fn new() -> Self {
        Self(Uuid::now_v7())
    }

    pub fn from_u128(v: u128) -> Self {
        Self(Uuid::from_u128(v))
    }

    pub fn as_u128(&self) -> u128 {
        self.0.as_u128()
    }
}

impl Default for EventId {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for EventId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(Self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EventSource {
    Chat,
    #[default]
    Ingest,
    Synthetic,
}

/// One stored episodic memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "EventWire", try_from = "EventWire")]
pub struct MemoryEvent {
    pub id: EventId,
    pub content: String,
    pub embedding: Embedding,
    pub created_at: i64,
    pub consolidation: ConsolidationState,
    pub importance: Option<u8>,
    pub tags: Vec<String>,
    pub source: EventSource,
}

impl MemoryEvent {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.content.trim().is_empty() {
            return Err(StoreError::Invalid("content must not be empty".into()));
        }
        if let Some(imp) = self.importance {
            if !(1..=10).contains(&imp) {
                return Err(StoreError::Invalid(format!(
                    "importance {imp} outside 1..=10"
                )));
            }
        }
        self.consolidation.validate()?;
        if let Some(last) = self.consolidation.last_recalled_at {
            if last < self.created_at {
                return Err(StoreError::Invalid(format!(
                    "last recall {last} precedes creation {}",
                    self.created_at
                )));
            }
        }
        Ok(())
    }

    pub fn importance_or_default(&self) -> u8 {
        self.importance.unwrap_or(DEFAULT_IMPORTANCE)
    }
}

/// Renders epoch seconds as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn iso8601(epoch_seconds: i64) -> String {
    chrono::DateTime::from_timestamp(epoch_seconds, 0)
        .map(|t| t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        .unwrap_or_else(|| epoch_seconds.to_string())
}

#[derive(Serialize, Deserialize)]
struct EventWire {
    id: EventId,
    content: String,
    created_at: i64,
    created_at_iso: String,
    consolidation: ConsolidationState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    last_recalled_at_iso: Option<String>,
    importance: Option<u8>,
    tags: Vec<String>,
    source: EventSource,
    embedding: Embedding,
}

impl From<MemoryEvent> for EventWire {
    fn from(e: MemoryEvent) -> Self {
        Self {
            id: e.id,
            created_at_iso: iso8601(e.created_at),
            last_recalled_at_iso: e.consolidation.last_recalled_at.map(iso8601),
            content: e.content,
            created_at: e.created_at,
            consolidation: e.consolidation,
            importance: e.importance,
            tags: e.tags,
            source: e.source,
            embedding: e.embedding,
        }
    }
}

impl TryFrom<EventWire> for MemoryEvent {
    type Error = String;

    fn try_from(w: EventWire) -> Result<Self, Self::Error> {
        let event = MemoryEvent {
            id: w.id,
            content: w.content,
            embedding: w.embedding,
            created_at: w.created_at,
            consolidation: w.consolidation,
            importance: w.importance,
            tags: w.tags,
            source: w.source,
        };
        event.validate().map_err(|e| e.to_string())?;
        Ok(event)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogRecord {
    Header {
        format_version: u32,
        fingerprint: Option<Fingerprint>,
    },
    Append {
        event: MemoryEvent,
    },
    Recall {
        id: EventId,
        state: ConsolidationState,
    },
    Remove {
        id: EventId,
    },
}

/// A compacted store: format version, embedder fingerprint and every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub format_version: u32,
    pub fingerprint: Option<Fingerprint>,
    pub events: Vec<MemoryEvent>,
}

/// Input to [`MemoryStore::append_event`].
#[derive(Debug, Clone, Default)]
pub struct NewEvent {
    pub content: String,
    pub timestamp: i64,
    pub importance: Option<u8>,
    pub tags: Vec<String>,
    pub source: EventSource,
}

impl NewEvent {
    pub fn new(content: impl Into<String>, timestamp: i64) -> Self {
        Self {
            content: content.into(),
            timestamp,
            ..Default::default()
        }
    }
}

pub struct MemoryStore {
    dir: PathBuf,
    log: File,
    log_empty: bool,
    _lock: File,
    fingerprint: Option<Fingerprint>,
    events: Vec<MemoryEvent>,
    positions: HashMap<EventId, usize>,
    index: VectorIndex,
    #[cfg(test)]
    fail_after_log_write: bool,
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore")
            .field("dir", &self.dir)
            .field("fingerprint", &self.fingerprint)
            .field("events", &self.events.len())
            .finish()
    }
}

/// Opens (creating if needed) the store at `dir`.
pub fn load(dir: impl AsRef<Path>) -> Result<MemoryStore, StoreError> {
    MemoryStore::open(dir)
}

impl MemoryStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(dir)),
            Err(fs::TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }

        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let snapshot = match fs::read(&snapshot_path) {
            Ok(bytes) => {
                let snap: StoreSnapshot =
                    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                        line: e.line(),
                        offset: 0,
                        reason: format!("{SNAPSHOT_FILE}: {e}"),
                    })?;
                Some(snap)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&snapshot_path)(e)),
        };

        let log_path = dir.join(LOG_FILE);
        let log_bytes = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&log_path)(e)),
        };
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;

        let mut store = Self {
            dir,
            log,
            log_empty: log_bytes.is_empty(),
            _lock: lock,
            fingerprint: None,
            events: Vec::new(),
            positions: HashMap::new(),
            index: VectorIndex::new(),
            #[cfg(test)]
            fail_after_log_write: false,
        };

        if let Some(snap) = snapshot {
            if snap.format_version != FORMAT_VERSION {
                return Err(StoreError::VersionMismatch {
                    found: snap.format_version,
                    expected: FORMAT_VERSION,
                });
            }
            store.fingerprint = snap.fingerprint;
            for event in snap.events {
                store.apply_insert(event).map_err(|e| match e {
                    e @ StoreError::FingerprintMismatch { .. } => e,
                    other => StoreError::Corrupt {
                        line: 0,
                        offset: 0,
                        reason: format!("{SNAPSHOT_FILE}: {other}"),
                    },
                })?;
            }
        }
        store.replay(&log_bytes)?;
        Ok(store)
    }

    fn replay(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let rest = &bytes[offset..];
            let Some(end) = rest.iter().position(|b| *b == b'\n') else {
                return Err(StoreError::Truncated {
                    line: line_no,
                    offset: offset as u64,
                });
            };
            let corrupt = |reason: String| StoreError::Corrupt {
                line: line_no,
                offset: offset as u64,
                reason,
            };
            let record: LogRecord =
                serde_json::from_slice(&rest[..end]).map_err(|e| corrupt(e.to_string()))?;
            self.apply_record(record).map_err(|e| match e {
                e @ (StoreError::VersionMismatch { .. }
                | StoreError::FingerprintMismatch { .. }) => e,
                other => corrupt(other.to_string()),
            })?;
            offset += end + 1;
        }
        Ok(())
    }

    fn apply_record(&mut self, record: LogRecord) -> Result<(), StoreError> {
        match record {
            LogRecord::Header {
                format_version,
                fingerprint,
            } => {
                if format_version != FORMAT_VERSION {
                    return Err(StoreError::VersionMismatch {
                        found: format_version,
                        expected: FORMAT_VERSION,
                    });
                }
                if let Some(fp) = fingerprint {
                    self.check_fingerprint(&fp)?;
                }
            }
            LogRecord::Append { event } => self.apply_insert(event)?,
            LogRecord::Recall { id, state } => {
                let pos = *self.positions.get(&id).ok_or(StoreError::UnknownId(id))?;
                let event = &self.events[pos];
                if state.g < event.consolidation.g || state.n < event.consolidation.n {
                    return Err(StoreError::Invalid(format!(
                        "recall record for {id} would reduce consolidation"
                    )));
                }
                state.validate()?;
                self.events[pos].consolidation = state;
            }
            LogRecord::Remove { id } => {
                self.apply_remove(&id)?;
            }
        }
        Ok(())
    }

    /// Adopts `fp` when the store has none yet.
    fn check_fingerprint(&mut self, fp: &Fingerprint) -> Result<(), StoreError> {
        match &self.fingerprint {
            Some(expected) if expected != fp => Err(StoreError::FingerprintMismatch {
                expected: expected.clone(),
                found: fp.clone(),
            }),
            Some(_) => Ok(()),
            None => {
                self.fingerprint = Some(fp.clone());
                Ok(())
            }
        }
    }

    fn apply_insert(&mut self, event: MemoryEvent) -> Result<(), StoreError> {
        event.validate()?;
        if self.positions.contains_key(&event.id) {
            return Err(StoreError::DuplicateId(event.id));
        }
        self.check_fingerprint(&event.embedding.fingerprint())?;
        self.index
            .insert(IndexEntry {
                event_id: event.id,
                embedding: event.embedding.clone(),
                created_at: event.created_at,
            })
            .map_err(|e| StoreError::Invalid(e.to_string()))?;
        self.positions.insert(event.id, self.events.len());
        self.events.push(event);
        Ok(())
    }

    fn apply_remove(&mut self, id: &EventId) -> Result<MemoryEvent, StoreError> {
        let pos = self
            .positions
            .remove(id)
            .ok_or(StoreError::UnknownId(*id))?;
        self.index
            .remove(id)
            .map_err(|e| StoreError::Invalid(e.to_string()))?;
        let removed = self.events.remove(pos);
        for (i, e) in self.events.iter().enumerate().skip(pos) {
            self.positions.insert(e.id, i);
        }
        Ok(removed)
    }

    fn write_record(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        let log_path = self.dir.join(LOG_FILE);
        let mut buf = Vec::new();
        if self.log_empty {
            let header = LogRecord::Header {
                format_version: FORMAT_VERSION,
                fingerprint: self.fingerprint.clone().or_else(|| match record {
                    LogRecord::Append { event } => Some(event.embedding.fingerprint()),
                    _ => None,
                }),
            };
            serde_json::to_writer(&mut buf, &header).expect("log records serialize");
            buf.push(b'\n');
        }
        serde_json::to_writer(&mut buf, record).expect("log records serialize");
        buf.push(b'\n');
        self.log.write_all(&buf).map_err(io_err(&log_path))?;
        self.log.sync_data().map_err(io_err(&log_path))?;
        self.log_empty = false;
        Ok(())
    }

    #[cfg(test)]
    fn crash_point(&self) -> Result<(), StoreError> {
        if self.fail_after_log_write {
            return Err(StoreError::Io {
                path: self.dir.clone(),
                source: io::Error::other("injected crash after log write"),
            });
        }
        Ok(())
    }

    #[cfg(not(test))]
    fn crash_point(&self) -> Result<(), StoreError> {
        Ok(())
    }

    /// Embeds `new.content` and persists a fresh event (`n = 0`, `g = 1`).
    pub fn append_event(
        &mut self,
        embedder: &dyn Embedder,
        new: NewEvent,
    ) -> Result<MemoryEvent, StoreError> {
        if new.content.trim().is_empty() {
            return Err(StoreError::Invalid("content must not be empty".into()));
        }
        if new.timestamp < 0 {
            return Err(StoreError::Invalid(format!(
                "timestamp {} must be non-negative",
                new.timestamp
            )));
        }
        let embedding = embedder.embed(&new.content)?;
        self.insert_event(MemoryEvent {
            id: EventId::new(),
            content: new.content,
            embedding,
            created_at: new.timestamp,
            consolidation: ConsolidationState::fresh(),
            importance: new.importance,
            tags: new.tags,
            source: new.source,
        })
    }

    /// Persists a fully-formed event, including any consolidation state it
    /// carries. Used for imports and replays.
    pub fn insert_event(&mut self, event: MemoryEvent) -> Result<MemoryEvent, StoreError> {
        event.validate()?;
        if self.positions.contains_key(&event.id) {
            return Err(StoreError::DuplicateId(event.id));
        }
        let fp = event.embedding.fingerprint();
        if let Some(expected) = &self.fingerprint {
            if *expected != fp {
                return Err(StoreError::FingerprintMismatch {
                    expected: expected.clone(),
                    found: fp,
                });
            }
        }
        if let Some(dim) = self.index.dimension() {
            if dim != event.embedding.dimension() {
                return Err(StoreError::Invalid(format!(
                    "embedding dimension {} does not match store dimension {dim}",
                    event.embedding.dimension()
                )));
            }
        }
        self.write_record(&LogRecord::Append {
            event: event.clone(),
        })?;
        self.apply_insert(event.clone())?;
        Ok(event)
    }

    /// Applies one recall to the event's consolidation state and persists it
    /// before returning.
    pub fn record_recall(
        &mut self,
        id: &EventId,
        recall_time: i64,
        scaling: &TimeScaling,
    ) -> Result<ConsolidationState, StoreError> {
        let pos = *self.positions.get(id).ok_or(StoreError::UnknownId(*id))?;
        let event = &self.events[pos];
        let state = memory_math::update_gradient(
            &event.consolidation,
            event.created_at,
            recall_time,
            scaling,
        )?;
        self.write_record(&LogRecord::Recall { id: *id, state })?;
        self.crash_point()?;
        self.events[pos].consolidation = state;
        Ok(state)
    }

    pub fn remove(&mut self, id: &EventId) -> Result<MemoryEvent, StoreError> {
        if !self.positions.contains_key(id) {
            return Err(StoreError::UnknownId(*id));
        }
        self.write_record(&LogRecord::Remove { id: *id })?;
        self.apply_remove(id)
    }

    /// Writes a fresh snapshot and truncates the log.
    pub fn compact(&mut self) -> Result<StoreSnapshot, StoreError> {
        let snapshot = self.snapshot();
        let snapshot_path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            serde_json::to_writer_pretty(&mut f, &snapshot).expect("snapshot serializes");
            f.write_all(b"\n").map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &snapshot_path).map_err(io_err(&snapshot_path))?;
        let log_path = self.dir.join(LOG_FILE);
        self.log.set_len(0).map_err(io_err(&log_path))?;
        self.log.sync_all().map_err(io_err(&log_path))?;
        self.log_empty = true;
        Ok(snapshot)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            format_version: FORMAT_VERSION,
            fingerprint: self.fingerprint.clone(),
            events: self.events.clone(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn fingerprint(&self) -> Option<&Fingerprint> {
        self.fingerprint.as_ref()
    }

    /// Fails unless `fp` is compatible with the store's fingerprint.
    pub fn ensure_fingerprint(&self, fp: &Fingerprint) -> Result<(), StoreError> {
        match &self.fingerprint {
            Some(expected) if expected != fp => Err(StoreError::FingerprintMismatch {
                expected: expected.clone(),
                found: fp.clone(),
            }),
            _ => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, id: &EventId) -> Option<&MemoryEvent> {
        self.positions.get(id).map(|&i| &self.events[i])
    }

    /// Events in insertion order.
    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{LocalHashEmbedder, HASH_SEED_VERSION, LOCAL_MODEL_ID};
    use crate::memory_math::SECONDS_PER_DAY;
    use proptest::prelude::*;

    fn embedder() -> LocalHashEmbedder {
        LocalHashEmbedder::new(32).unwrap()
    }

    #[test]
    fn append_and_reopen_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let stored = {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            let mut new = NewEvent::new("User went to the university today", 1_700_000_000);
            new.importance = Some(7);
            new.tags = vec!["thursday".into()];
            store.append_event(&embedder(), new).unwrap()
        };
        assert_eq!(stored.consolidation, ConsolidationState::fresh());
        assert_eq!(stored.consolidation.g, 1.0);
        let store = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(store.get(&stored.id), Some(&stored));
        assert_eq!(
            store.fingerprint().unwrap().hash_seed_version,
            HASH_SEED_VERSION
        );
    }

    #[test]
    fn same_content_gets_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let a = store
            .append_event(&embedder(), NewEvent::new("pasta for lunch", 10))
            .unwrap();
        let b = store
            .append_event(&embedder(), NewEvent::new("pasta for lunch", 10))
            .unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn rejects_empty_content_and_negative_time() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.append_event(&embedder(), NewEvent::new("  ", 1)),
            Err(StoreError::Invalid(_))
        ));
        assert!(matches!(
            store.append_event(&embedder(), NewEvent::new("hello", -1)),
            Err(StoreError::Invalid(_))
        ));
        assert!(store.is_empty());
    }

    #[test]
    fn first_recall_long_after_creation_saturates() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let e = store
            .append_event(&embedder(), NewEvent::new("ice cream after work", 0))
            .unwrap();
        let state = store
            .record_recall(&e.id, 100 * 86_400, &TimeScaling::default())
            .unwrap();
        assert_eq!(state.n, 1);
        assert!((state.g - 2.0).abs() < 1e-9);
    }

    #[test]
    fn spaced_recalls_accumulate() {
        let scaling = TimeScaling::default();
        // oracle: iterate the recurrence directly
        let spacing = 10.0 * SECONDS_PER_DAY;
        let e = (-10.0f64).exp();
        let expected = 1.0 + 5.0 * (1.0 - e) / (1.0 + e);

        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let ev = store
            .append_event(&embedder(), NewEvent::new("weekly swim", 0))
            .unwrap();
        let mut state = ev.consolidation;
        for i in 1..=5 {
            state = store
                .record_recall(&ev.id, (i as f64 * spacing) as i64, &scaling)
                .unwrap();
        }
        assert_eq!(state.n, 5);
        assert!((state.g - expected).abs() < 1e-9);
        assert!((state.g - 6.0).abs() < 1e-3);
        drop(store);
        let store = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(store.get(&ev.id).unwrap().consolidation, state);
    }

    #[test]
    fn clock_regression_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let e = store
            .append_event(&embedder(), NewEvent::new("concert", 1000))
            .unwrap();
        store
            .record_recall(&e.id, 2000, &TimeScaling::default())
            .unwrap();
        assert!(matches!(
            store.record_recall(&e.id, 1500, &TimeScaling::default()),
            Err(StoreError::Math(MathError::ClockRegression { .. }))
        ));
        assert!(matches!(
            store.record_recall(&EventId::from_u128(1), 3000, &TimeScaling::default()),
            Err(StoreError::UnknownId(_))
        ));
    }

    #[test]
    fn crash_between_log_write_and_ack_recovers() {
        let dir = tempfile::tempdir().unwrap();
        let (id, expected) = {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            let e = store
                .append_event(&embedder(), NewEvent::new("library visit", 0))
                .unwrap();
            let expected =
                memory_math::update_gradient(&e.consolidation, 0, 50_000, &TimeScaling::default())
                    .unwrap();
            store.fail_after_log_write = true;
            assert!(store
                .record_recall(&e.id, 50_000, &TimeScaling::default())
                .is_err());
            // in-memory state never saw the ack
            assert_eq!(
                store.get(&e.id).unwrap().consolidation,
                ConsolidationState::fresh()
            );
            (e.id, expected)
        };
        let store = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(store.get(&id).unwrap().consolidation, expected);
    }

    #[test]
    fn compact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            for (i, text) in ["home", "library", "office", "restaurant"]
                .iter()
                .enumerate()
            {
                store
                    .append_event(&embedder(), NewEvent::new(*text, i as i64 * 100))
                    .unwrap();
            }
            let first = store.events()[0].id;
            store
                .record_recall(&first, 86_400, &TimeScaling::default())
                .unwrap();
            let last = store.events()[3].id;
            store.remove(&last).unwrap();
            let snap = store.compact().unwrap();
            assert_eq!(fs::metadata(dir.path().join(LOG_FILE)).unwrap().len(), 0);
            // keep writing after compaction
            store
                .append_event(&embedder(), NewEvent::new("university", 500))
                .unwrap();
            assert_eq!(snap.events.len(), 3);
            store.snapshot()
        };
        let reopened = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.snapshot(), before);
        assert_eq!(reopened.index().len(), 4);
    }

    #[test]
    fn truncated_log_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            store
                .append_event(&embedder(), NewEvent::new("first", 1))
                .unwrap();
            store
                .append_event(&embedder(), NewEvent::new("second", 2))
                .unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let bytes = fs::read(&path).unwrap();
        let cut = bytes.len() - 10;
        fs::write(&path, &bytes[..cut]).unwrap();
        let start_of_last = bytes[..bytes.len() - 1]
            .iter()
            .rposition(|b| *b == b'\n')
            .unwrap()
            + 1;
        match MemoryStore::open(dir.path()) {
            Err(StoreError::Truncated { line, offset }) => {
                assert_eq!(line, 3);
                assert_eq!(offset, start_of_last as u64);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            store
                .append_event(&embedder(), NewEvent::new("first", 1))
                .unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"recall\",\"id\":42}\n").unwrap();
        drop(f);
        match MemoryStore::open(dir.path()) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn foreign_seed_version_refused() {
        let dir = tempfile::tempdir().unwrap();
        let snap = StoreSnapshot {
            format_version: FORMAT_VERSION,
            fingerprint: Some(Fingerprint {
                model_id: LOCAL_MODEL_ID.into(),
                dimension: 32,
                hash_seed_version: 0,
            }),
            events: vec![],
        };
        fs::write(
            dir.path().join(SNAPSHOT_FILE),
            serde_json::to_vec(&snap).unwrap(),
        )
        .unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.append_event(&embedder(), NewEvent::new("hello", 1)),
            Err(StoreError::FingerprintMismatch { .. })
        ));
        let fp = embedder().fingerprint().unwrap();
        let err = store.ensure_fingerprint(&fp).unwrap_err();
        assert!(err.to_string().contains("re-embed"));
    }

    #[test]
    fn foreign_snapshot_with_events_refused_on_load() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            store
                .append_event(&embedder(), NewEvent::new("hello", 1))
                .unwrap();
            store.compact().unwrap();
            store
                .append_event(&embedder(), NewEvent::new("world", 2))
                .unwrap();
        }
        let path = dir.path().join(SNAPSHOT_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let edited = text.replacen("\"hash_seed_version\": 1", "\"hash_seed_version\": 7", 1);
        assert_ne!(text, edited);
        fs::write(&path, edited).unwrap();
        assert!(matches!(
            MemoryStore::open(dir.path()),
            Err(StoreError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch_refused() {
        let dir = tempfile::tempdir().unwrap();
        let snap = StoreSnapshot {
            format_version: 99,
            fingerprint: None,
            events: vec![],
        };
        fs::write(
            dir.path().join(SNAPSHOT_FILE),
            serde_json::to_vec(&snap).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            MemoryStore::open(dir.path()),
            Err(StoreError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn second_open_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let _held = MemoryStore::open(dir.path()).unwrap();
        assert!(matches!(
            MemoryStore::open(dir.path()),
            Err(StoreError::Locked(_))
        ));
    }

    #[test]
    fn iso_rendering() {
        assert_eq!(iso8601(0), "1970-01-01T00:00:00Z");
        assert_eq!(iso8601(1_700_000_000), "2023-11-14T22:13:20Z");
    }

    fn arb_event() -> impl Strategy<Value = MemoryEvent> {
        (
            any::<u128>(),
            "[a-zA-Z0-9 ]{0,30}[a-z]",
            proptest::collection::vec(-1.0f64..1.0, 1..16),
            0i64..4_000_000_000,
            0u64..20,
            0.0f64..1.0,
            0i64..1_000_000,
            proptest::option::of(1u8..=10),
            proptest::collection::vec("[a-z]{1,6}", 0..3),
            prop_oneof![
                Just(EventSource::Chat),
                Just(EventSource::Ingest),
                Just(EventSource::Synthetic)
            ],
        )
            .prop_map(
                |(id, content, mut values, created_at, n, frac, gap, importance, tags, source)| {
                    values[0] += 2.0;
                    let consolidation = if n == 0 {
                        ConsolidationState::fresh()
                    } else {
                        ConsolidationState {
                            n,
                            g: 1.0 + frac * n as f64,
                            last_recalled_at: Some(created_at + gap),
                        }
                    };
                    MemoryEvent {
                        id: EventId::from_u128(id),
                        content,
                        embedding: Embedding::from_raw(values, LOCAL_MODEL_ID).unwrap(),
                        created_at,
                        consolidation,
                        importance,
                        tags,
                        source,
                    }
                },
            )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn event_serialization_round_trips(event in arb_event()) {
            let record = LogRecord::Append { event: event.clone() };
            let line = serde_json::to_string(&record).unwrap();
            let back: LogRecord = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(back, record);
        }
    }
}
