//! Append-only entry log plus periodic snapshots.
//!
//! Layout of the data directory:
//! - `log.jsonl`: one JSON entry per line, never rewritten. A torn final line
//!   left by a crash is cut off when the store is reopened.
//! - `snapshot`: a header line `{"offset":N,"sha256":"..."}` followed by the
//!   serialized durable state after the first `N` log entries. Replaced
//!   atomically via rename.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rfo_core::model::{Campaign, Journey, SweepRecord};
use rfo_core::sync::{Claim, NodeRole, ReplicaState, StateEntry, SyncError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::accounts::Account;

pub const LOG_FILE: &str = "log.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot";
const SNAPSHOT_TMP: &str = "snapshot.tmp";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 10_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("log line {line} is not a valid entry: {reason}")]
    CorruptLog { line: u64, reason: String },
    #[error("log line {line} cannot be applied: {source}")]
    Replay { line: u64, source: SyncError },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogEntry {
    Record(SweepRecord),
    CampaignMeta(Campaign),
    JourneyAppend(Journey),
    ClaimEvent(Claim),
    Account(Account),
}

impl From<StateEntry> for LogEntry {
    fn from(e: StateEntry) -> Self {
        match e {
            StateEntry::Record(r) => LogEntry::Record(r),
            StateEntry::CampaignMeta(c) => LogEntry::CampaignMeta(c),
            StateEntry::Journey(j) => LogEntry::JourneyAppend(j),
            StateEntry::Claim(c) => LogEntry::ClaimEvent(c),
        }
    }
}

impl LogEntry {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log entries serialize")
    }
}

/// Everything that survives a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Durable {
    pub state: ReplicaState,
    pub accounts: BTreeMap<String, Account>,
}

impl Durable {
    pub fn new(node_id: &str, role: NodeRole) -> Self {
        Durable { state: ReplicaState::new(node_id, role), accounts: BTreeMap::new() }
    }

    /// Applies one entry with the same set/LWW semantics as sync.
    pub fn apply(&mut self, entry: LogEntry) -> Result<bool, SyncError> {
        let state_entry = match entry {
            LogEntry::Account(a) => {
                let changed = self.accounts.get(&a.account_id) != Some(&a);
                self.accounts.insert(a.account_id.clone(), a);
                return Ok(changed);
            }
            LogEntry::Record(r) => StateEntry::Record(r),
            LogEntry::CampaignMeta(c) => StateEntry::CampaignMeta(c),
            LogEntry::JourneyAppend(j) => StateEntry::Journey(j),
            LogEntry::ClaimEvent(c) => StateEntry::Claim(c),
        };
        self.state.apply(state_entry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotHeader {
    offset: u64,
    sha256: String,
}

/// Serializes `durable` as the state after `offset` log entries.
pub fn encode_snapshot(offset: u64, durable: &Durable) -> Vec<u8> {
    let body = serde_json::to_vec(durable).expect("state serializes");
    let header = SnapshotHeader { offset, sha256: hex::encode(Sha256::digest(&body)) };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&body);
    out
}

/// Parses and verifies a snapshot file, returning its offset and state.
pub fn decode_snapshot(bytes: &[u8]) -> Result<(u64, Durable), StoreError> {
    let corrupt = |m: &str| StoreError::CorruptSnapshot(m.to_string());
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header"))?;
    let header: SnapshotHeader = serde_json::from_slice(&bytes[..split]).map_err(|_| corrupt("bad header"))?;
    let body = &bytes[split + 1..];
    if hex::encode(Sha256::digest(body)) != header.sha256 {
        return Err(corrupt("hash mismatch"));
    }
    let durable = serde_json::from_slice(body).map_err(|e| StoreError::CorruptSnapshot(e.to_string()))?;
    Ok((header.offset, durable))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecoveryWarning {
    /// Bytes after the last newline were dropped.
    TornTail { bytes: usize },
    /// The snapshot was unusable; the full log was replayed instead.
    SnapshotIgnored { reason: String },
}

impl std::fmt::Display for RecoveryWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecoveryWarning::TornTail { bytes } => write!(f, "dropped torn final log line ({bytes} bytes)"),
            RecoveryWarning::SnapshotIgnored { reason } => write!(f, "snapshot ignored ({reason}), replayed full log"),
        }
    }
}

#[derive(Debug)]
pub struct Recovery {
    pub durable: Durable,
    /// Complete entries in the log.
    pub entries: u64,
    /// Length of the log prefix holding those entries.
    pub valid_len: usize,
    pub warnings: Vec<RecoveryWarning>,
}

fn complete_lines(log: &[u8]) -> (Vec<&[u8]>, usize) {
    let valid_len = log.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let lines = log[..valid_len].split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
    (lines, valid_len)
}

fn replay(durable: &mut Durable, lines: &[&[u8]], first_line: u64) -> Result<(), StoreError> {
    for (i, line) in lines.iter().enumerate() {
        let line_no = first_line + i as u64;
        let entry: LogEntry =
            serde_json::from_slice(line).map_err(|e| StoreError::CorruptLog { line: line_no, reason: e.to_string() })?;
        durable.apply(entry).map_err(|source| StoreError::Replay { line: line_no, source })?;
    }
    Ok(())
}

/// Rebuilds the durable state from an optional snapshot and the raw log.
/// The result always equals a full replay of the log's complete lines; the
/// snapshot only shortcuts the prefix it covers.
pub fn recover_state(node_id: &str, role: NodeRole, snapshot: Option<&[u8]>, log: &[u8]) -> Result<Recovery, StoreError> {
    let (lines, valid_len) = complete_lines(log);
    let mut warnings = Vec::new();
    if valid_len < log.len() {
        warnings.push(RecoveryWarning::TornTail { bytes: log.len() - valid_len });
    }
    let n = lines.len() as u64;

    let from_snapshot = match snapshot.map(decode_snapshot) {
        None => None,
        Some(Ok((offset, _))) if offset > n => {
            warnings.push(RecoveryWarning::SnapshotIgnored { reason: format!("offset {offset} beyond {n} log entries") });
            None
        }
        Some(Ok(found)) => Some(found),
        Some(Err(e)) => {
            warnings.push(RecoveryWarning::SnapshotIgnored { reason: e.to_string() });
            None
        }
    };
    let (offset, mut durable) = from_snapshot.unwrap_or_else(|| (0, Durable::new(node_id, role)));
    replay(&mut durable, &lines[offset as usize..], offset + 1)?;
    durable.state.node_id = node_id.to_string();
    durable.state.role = role;
    Ok(Recovery { durable, entries: n, valid_len, warnings })
}

/// Handle on an open data directory. Not shared: the node's single writer owns it.
pub struct Store {
    dir: PathBuf,
    log: File,
    entries: u64,
    snapshot_every: u64,
    since_snapshot: u64,
}

impl Store {
    /// Opens (creating if needed) a data directory and recovers its state.
    pub fn open(dir: &Path, node_id: &str, role: NodeRole, snapshot_every: u64) -> Result<(Store, Recovery), StoreError> {
        fs::create_dir_all(dir)?;
        let log_path = dir.join(LOG_FILE);
        let log_bytes = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let snapshot = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(b) => Some(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let recovery = recover_state(node_id, role, snapshot.as_deref(), &log_bytes)?;
        for w in &recovery.warnings {
            log::warn!("{}: {w}", dir.display());
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if recovery.valid_len < log_bytes.len() {
            log.set_len(recovery.valid_len as u64)?;
        }
        let store = Store {
            dir: dir.to_path_buf(),
            log,
            entries: recovery.entries,
            snapshot_every: snapshot_every.max(1),
            since_snapshot: 0,
        };
        Ok((store, recovery))
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }

    /// Durably appends `batch`; returns the offset of its first entry.
    /// `after` is the state including the batch, used for periodic snapshots.
    pub fn append(&mut self, batch: &[LogEntry], after: &Durable) -> Result<u64, StoreError> {
        let first = self.entries;
        if batch.is_empty() {
            return Ok(first);
        }
        let mut buf = String::new();
        for e in batch {
            buf.push_str(&e.to_line());
            buf.push('\n');
        }
        self.log.write_all(buf.as_bytes())?;
        self.log.sync_data()?;
        self.entries += batch.len() as u64;
        self.since_snapshot += batch.len() as u64;
        if self.since_snapshot >= self.snapshot_every {
            self.write_snapshot(after)?;
        }
        Ok(first)
    }

    pub fn write_snapshot(&mut self, durable: &Durable) -> Result<(), StoreError> {
        let tmp = self.dir.join(SNAPSHOT_TMP);
        let mut f = File::create(&tmp)?;
        f.write_all(&encode_snapshot(self.entries, durable))?;
        f.sync_all()?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        self.since_snapshot = 0;
        Ok(())
    }
}
