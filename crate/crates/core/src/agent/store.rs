use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::hash::Hash;
use crate::identity::SignedEnvelope;
use crate::negotiation::{Message, SessionId};
use crate::net::Endpoint;
use crate::time::Timestamp;

pub const MESSAGE_LOG_FILE: &str = "messages.ndjson";
pub const QUARANTINE_LOG_FILE: &str = "quarantine.ndjson";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Durable sink for log lines. Implementations must not report success
/// until the line would survive a crash.
pub trait LogBackend: Send {
    fn append(&mut self, line: &[u8]) -> io::Result<()>;
}

/// Appends to a file, syncing after every line.
pub struct FileBackend {
    file: File,
}

impl FileBackend {
    /// Opens `path` for appending and returns the bytes already in it. A torn
    /// trailing line is cut off first so new lines start on a boundary.
    pub fn open(path: &Path) -> io::Result<(Self, Vec<u8>)> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut existing = if path.exists() { fs::read(path)? } else { Vec::new() };
        let complete = existing.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < existing.len() {
            existing.truncate(complete);
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(complete as u64)?;
            f.sync_all()?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((FileBackend { file }, existing))
    }
}

impl LogBackend for FileBackend {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        self.file.write_all(line)?;
        self.file.sync_data()
    }
}

/// In-memory log whose bytes outlive the agent that wrote them.
#[derive(Clone, Default)]
pub struct MemoryBackend {
    bytes: Arc<Mutex<Vec<u8>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.bytes.lock().expect("log lock").clone()
    }
}

impl LogBackend for MemoryBackend {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        self.bytes.lock().expect("log lock").extend_from_slice(line);
        Ok(())
    }
}

/// Succeeds for the first `budget` appends, then fails every one after.
/// On the failing append it may leave a torn prefix behind.
pub struct FaultyBackend<B> {
    inner: B,
    budget: usize,
    torn_bytes: usize,
}

impl<B: LogBackend> FaultyBackend<B> {
    pub fn new(inner: B, budget: usize, torn_bytes: usize) -> Self {
        Self {
            inner,
            budget,
            torn_bytes,
        }
    }
}

impl<B: LogBackend> LogBackend for FaultyBackend<B> {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        if self.budget == 0 {
            if self.torn_bytes > 0 {
                let n = self.torn_bytes.min(line.len().saturating_sub(1));
                self.inner.append(&line[..n])?;
                self.torn_bytes = 0;
            }
            return Err(io::Error::other("injected fault"));
        }
        self.budget -= 1;
        self.inner.append(line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Received {
        at: Timestamp,
        from: Option<Endpoint>,
        envelope: SignedEnvelope,
    },
    Sent {
        at: Timestamp,
        to: Endpoint,
        envelope: SignedEnvelope,
    },
    /// A local expiry; carries no envelope because none was exchanged.
    Expired { at: Timestamp, session: SessionId },
}

impl Entry {
    pub fn at(&self) -> Timestamp {
        match self {
            Entry::Received { at, .. } | Entry::Sent { at, .. } | Entry::Expired { at, .. } => *at,
        }
    }

    pub fn envelope(&self) -> Option<&SignedEnvelope> {
        match self {
            Entry::Received { envelope, .. } | Entry::Sent { envelope, .. } => Some(envelope),
            Entry::Expired { .. } => None,
        }
    }

    pub fn session(&self) -> Option<SessionId> {
        match self {
            Entry::Expired { session, .. } => Some(*session),
            _ => self
                .envelope()
                .and_then(|e| Message::open(e).ok())
                .map(|m| m.session_id()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub seq: u64,
    pub entry: Entry,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
enum Line {
    Received {
        seq: u64,
        at: Timestamp,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Endpoint>,
        envelope: Json,
    },
    Sent {
        seq: u64,
        at: Timestamp,
        to: Endpoint,
        envelope: Json,
    },
    Expired {
        seq: u64,
        at: Timestamp,
        session: SessionId,
    },
}

fn encode(record: &Record) -> Vec<u8> {
    let seq = record.seq;
    let line = match &record.entry {
        Entry::Received { at, from, envelope } => Line::Received {
            seq,
            at: *at,
            from: from.clone(),
            envelope: envelope.wire_value(),
        },
        Entry::Sent { at, to, envelope } => Line::Sent {
            seq,
            at: *at,
            to: to.clone(),
            envelope: envelope.wire_value(),
        },
        Entry::Expired { at, session } => Line::Expired {
            seq,
            at: *at,
            session: *session,
        },
    };
    let mut bytes = serde_json::to_vec(&line).expect("log line serializes");
    bytes.push(b'\n');
    bytes
}

fn decode(bytes: &[u8]) -> Result<Record, String> {
    let line: Line = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let env = |v: Json| SignedEnvelope::from_json(v).map_err(|e| e.to_string());
    Ok(match line {
        Line::Received { seq, at, from, envelope } => Record {
            seq,
            entry: Entry::Received {
                at,
                from,
                envelope: env(envelope)?,
            },
        },
        Line::Sent { seq, at, to, envelope } => Record {
            seq,
            entry: Entry::Sent {
                at,
                to,
                envelope: env(envelope)?,
            },
        },
        Line::Expired { seq, at, session } => Record {
            seq,
            entry: Entry::Expired { at, session },
        },
    })
}

/// Parses log bytes. A final line without its newline is a torn write and
/// is ignored; any other unreadable line is corruption.
pub fn parse_log(bytes: &[u8]) -> Result<Vec<Record>, LogError> {
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut records = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let record = decode(line).map_err(|reason| LogError::Corrupt { line: i, reason })?;
        if record.seq != records.len() as u64 {
            return Err(LogError::Corrupt {
                line: i,
                reason: format!("sequence {} where {} was expected", record.seq, records.len()),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// The append-only record of every message an agent sent or received.
/// There is no update or delete.
pub struct MessageStore {
    backend: Box<dyn LogBackend>,
    records: Vec<Record>,
    by_hash: BTreeMap<Hash, Vec<usize>>,
    by_session: BTreeMap<SessionId, Vec<usize>>,
}

impl MessageStore {
    pub fn new(backend: Box<dyn LogBackend>) -> Self {
        Self {
            backend,
            records: Vec::new(),
            by_hash: BTreeMap::new(),
            by_session: BTreeMap::new(),
        }
    }

    /// Rebuilds the index from records already durable in `backend`.
    pub fn with_records(backend: Box<dyn LogBackend>, records: Vec<Record>) -> Self {
        let mut store = Self::new(backend);
        for r in records {
            store.index(r);
        }
        store
    }

    /// Opens `<dir>/messages.ndjson`, returning the store and its records.
    pub fn open_file(dir: &Path) -> Result<Self, LogError> {
        let (backend, bytes) = FileBackend::open(&dir.join(MESSAGE_LOG_FILE))?;
        let records = parse_log(&bytes)?;
        Ok(Self::with_records(Box::new(backend), records))
    }

    fn index(&mut self, record: Record) {
        let i = self.records.len();
        if let Some(env) = record.entry.envelope() {
            self.by_hash.entry(env.envelope_hash().clone()).or_default().push(i);
        }
        if let Some(s) = record.entry.session() {
            self.by_session.entry(s).or_default().push(i);
        }
        self.records.push(record);
    }

    /// Makes `entry` durable. Nothing is indexed unless the backend succeeds.
    pub fn append(&mut self, entry: Entry) -> Result<&Record, LogError> {
        let record = Record {
            seq: self.records.len() as u64,
            entry,
        };
        self.backend.append(&encode(&record))?;
        self.index(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_hash(&self, hash: &Hash) -> impl Iterator<Item = &Record> {
        self.by_hash
            .get(hash)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn by_session(&self, session: SessionId) -> impl Iterator<Item = &Record> {
        self.by_session
            .get(&session)
            .into_iter()
            .flatten()
            .map(|&i| &self.records[i])
    }

    pub fn was_received(&self, hash: &Hash) -> bool {
        self.by_hash(hash)
            .any(|r| matches!(r.entry, Entry::Received { .. }))
    }
}

/// Envelopes that failed verification or routing. Kept apart from the
/// message log so nothing in it can be replayed into the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct QuarantineEntry {
    pub at: Timestamp,
    pub reason: String,
    pub envelope_hash: Hash,
    pub envelope: Json,
}

pub struct Quarantine {
    backend: Box<dyn LogBackend>,
    entries: Vec<QuarantineEntry>,
}

impl Quarantine {
    pub fn new(backend: Box<dyn LogBackend>) -> Self {
        Self {
            backend,
            entries: Vec::new(),
        }
    }

    pub fn open_file(dir: &Path) -> Result<Self, LogError> {
        let path: PathBuf = dir.join(QUARANTINE_LOG_FILE);
        let (backend, bytes) = FileBackend::open(&path)?;
        let mut entries = Vec::new();
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            entries.push(serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
                line: i,
                reason: e.to_string(),
            })?);
        }
        Ok(Self {
            backend: Box::new(backend),
            entries,
        })
    }

    pub fn append(&mut self, at: Timestamp, reason: String, envelope: &SignedEnvelope) -> Result<(), LogError> {
        let entry = QuarantineEntry {
            at,
            reason,
            envelope_hash: envelope.envelope_hash().clone(),
            envelope: envelope.wire_value(),
        };
        let mut line = serde_json::to_vec(&entry).expect("quarantine entry serializes");
        line.push(b'\n');
        self.backend.append(&line)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[QuarantineEntry] {
        &self.entries
    }

    pub fn contains(&self, hash: &Hash) -> bool {
        self.entries.iter().any(|e| &e.envelope_hash == hash)
    }
}
