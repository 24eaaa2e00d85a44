//! Append-only, SHA-256 hash-chained audit log.
//!
//! Each record's `hash` is `SHA-256(prev_hash_bytes || canonical JSON of the
//! record without its hash field)`; the first record links to 32 zero bytes.
//! On disk the log is one canonical-JSON record per `\n`-terminated line, so
//! the verifier can check the exact persisted bytes rather than a re-parse.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::policy::{evaluate, Decision, Effect, Outcome, PolicySet, RequestContext, TraceEntry};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit storage failure: {0}")]
    StorageFailure(String),
    #[error("audit chain invalid at seq {0}")]
    ChainInvalid(u64),
}

impl From<std::io::Error> for AuditError {
    fn from(e: std::io::Error) -> Self {
        AuditError::StorageFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Issuance,
    Decision,
    Simulation,
    Revocation,
    BundleSync,
    PolicyReload,
}

/// A record before the log assigns `seq` and the hash linkage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub timestamp: i64,
    pub kind: RecordKind,
    pub request: Option<RequestContext>,
    pub decision: Option<Decision>,
    pub txn: Option<String>,
    pub policy_version: String,
    pub simulated_subject: bool,
    pub note: Option<String>,
}

impl AuditEvent {
    pub fn new(kind: RecordKind, timestamp: i64, policy_version: impl Into<String>) -> Self {
        AuditEvent {
            timestamp,
            kind,
            request: None,
            decision: None,
            txn: None,
            policy_version: policy_version.into(),
            simulated_subject: false,
            note: None,
        }
    }

    pub fn with_request(mut self, request: RequestContext) -> Self {
        self.request = Some(request);
        self
    }

    pub fn with_decision(mut self, decision: Decision) -> Self {
        self.decision = Some(decision);
        self
    }

    pub fn with_txn(mut self, txn: impl Into<String>) -> Self {
        self.txn = Some(txn.into());
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn simulated(mut self, simulated: bool) -> Self {
        self.simulated_subject = simulated;
        self
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: i64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn: Option<String>,
    pub policy_version: String,
    #[serde(default, skip_serializing_if = "is_false")]
    pub simulated_subject: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub prev_hash: String,
    pub hash: String,
}

impl AuditRecord {
    /// Canonical JSON of the record with the `hash` field removed.
    pub fn hashed_body(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("audit record serializes");
        if let Value::Object(map) = &mut v {
            map.remove("hash");
        }
        canonical::value_to_string(&v).into_bytes()
    }

    pub fn compute_hash(&self) -> String {
        chain_hash(&self.prev_hash, &self.hashed_body())
    }

    /// The exact persisted line, without the trailing newline.
    pub fn to_line(&self) -> String {
        canonical::to_string(self).expect("audit record serializes")
    }
}

/// `SHA-256(prev_hash_bytes || body)`, hex. A prev hash that is not 64 hex
/// digits hashes as its raw text so a corrupt link can never collide with a
/// well-formed one.
pub fn chain_hash(prev_hash_hex: &str, body: &[u8]) -> String {
    let mut input = match hex::decode(prev_hash_hex) {
        Ok(bytes) if bytes.len() == 32 => bytes,
        _ => prev_hash_hex.as_bytes().to_vec(),
    };
    input.extend_from_slice(body);
    canonical::sha256_hex(&input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStatus {
    pub ok: bool,
    pub records: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_bad_seq: Option<u64>,
}

impl ChainStatus {
    fn good(records: u64) -> Self {
        ChainStatus { ok: true, records, first_bad_seq: None }
    }

    fn bad(records: u64, seq: u64) -> Self {
        ChainStatus { ok: false, records, first_bad_seq: Some(seq) }
    }
}

/// Per-line self-consistency; linkage is checked afterwards.
fn check_line(index: usize, line: &[u8]) -> Option<(String, String)> {
    let text = std::str::from_utf8(line).ok()?;
    let record: AuditRecord = serde_json::from_str(text).ok()?;
    if record.seq != index as u64 + 1 {
        return None;
    }
    // One serialization serves both the canonical-form check and the hash.
    let mut value = serde_json::to_value(&record).ok()?;
    if canonical::value_to_string(&value) != text {
        return None;
    }
    if let Value::Object(map) = &mut value {
        map.remove("hash");
    }
    if chain_hash(&record.prev_hash, canonical::value_to_string(&value).as_bytes()) != record.hash {
        return None;
    }
    Some((record.prev_hash, record.hash))
}

fn verify_lines(lines: &[&[u8]]) -> ChainStatus {
    #[cfg(feature = "parallel")]
    let checked: Vec<Option<(String, String)>> = {
        use rayon::prelude::*;
        lines.par_iter().enumerate().map(|(i, l)| check_line(i, l)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let checked: Vec<Option<(String, String)>> =
        lines.iter().enumerate().map(|(i, l)| check_line(i, l)).collect();
    link_check(&checked)
}

/// Stops at the first bad record.
fn verify_lines_sequential(lines: &[&[u8]]) -> ChainStatus {
    let n = lines.len() as u64;
    let mut prev = GENESIS_HASH.to_owned();
    for (i, line) in lines.iter().enumerate() {
        match check_line(i, line) {
            Some((prev_hash, hash)) if prev_hash == prev => prev = hash,
            _ => return ChainStatus::bad(n, i as u64 + 1),
        }
    }
    ChainStatus::good(n)
}

fn link_check(checked: &[Option<(String, String)>]) -> ChainStatus {
    let n = checked.len() as u64;
    let mut prev = GENESIS_HASH;
    for (i, entry) in checked.iter().enumerate() {
        match entry {
            Some((prev_hash, hash)) if prev_hash == prev => prev = hash,
            _ => return ChainStatus::bad(n, i as u64 + 1),
        }
    }
    ChainStatus::good(n)
}

/// Splits persisted log bytes into record lines. The flag is false when the
/// final line lacks its `\n` terminator.
fn split_lines(bytes: &[u8]) -> (Vec<&[u8]>, bool) {
    if bytes.is_empty() {
        return (Vec::new(), true);
    }
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    let terminated = bytes.last() == Some(&b'\n');
    if terminated {
        lines.pop();
    }
    (lines, terminated)
}

fn with_termination(status: ChainStatus, terminated: bool) -> ChainStatus {
    if terminated || !status.ok {
        status
    } else {
        ChainStatus::bad(status.records, status.records)
    }
}

/// Verifies the chain over the exact persisted bytes of a log file.
pub fn verify_bytes(bytes: &[u8]) -> ChainStatus {
    let (lines, terminated) = split_lines(bytes);
    with_termination(verify_lines(&lines), terminated)
}

pub fn verify_bytes_sequential(bytes: &[u8]) -> ChainStatus {
    let (lines, terminated) = split_lines(bytes);
    with_termination(verify_lines_sequential(&lines), terminated)
}

pub fn verify_file(path: &Path) -> Result<ChainStatus, AuditError> {
    Ok(verify_bytes(&std::fs::read(path)?))
}

pub fn verify_records(records: &[AuditRecord]) -> ChainStatus {
    let lines: Vec<String> = records.iter().map(AuditRecord::to_line).collect();
    let refs: Vec<&[u8]> = lines.iter().map(|l| l.as_bytes()).collect();
    verify_lines(&refs)
}

/// Parses a log file leniently into records (for replay and tail). Stops
/// with `ChainInvalid` at the first unparseable line.
pub fn read_records(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let bytes = std::fs::read(path)?;
    parse_records(&bytes)
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<AuditRecord>, AuditError> {
    split_lines(bytes)
        .0
        .iter()
        .enumerate()
        .map(|(i, line)| {
            std::str::from_utf8(line)
                .ok()
                .and_then(|t| serde_json::from_str(t).ok())
                .ok_or(AuditError::ChainInvalid(i as u64 + 1))
        })
        .collect()
}

struct Inner {
    records: Vec<AuditRecord>,
    file: Option<File>,
}

/// Single-writer append log. Appends serialize on an internal lock; a record
/// is written and synced to disk before `append` returns it.
pub struct AuditLog {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            path: None,
            inner: Mutex::new(Inner { records: Vec::new(), file: None }),
        }
    }

    /// Opens (or creates) a file-backed log. The existing chain must verify.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let records = if path.exists() {
            let bytes = std::fs::read(&path)?;
            let status = verify_bytes(&bytes);
            if let Some(seq) = status.first_bad_seq {
                return Err(AuditError::ChainInvalid(seq));
            }
            let mut out = Vec::new();
            for line in BufReader::new(bytes.as_slice()).lines() {
                let line = line?;
                out.push(
                    serde_json::from_str(&line)
                        .map_err(|e| AuditError::StorageFailure(e.to_string()))?,
                );
            }
            out
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(AuditLog {
            path: Some(path),
            inner: Mutex::new(Inner { records, file: Some(file) }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, event: AuditEvent) -> Result<AuditRecord, AuditError> {
        let mut inner = self.inner.lock().map_err(|_| AuditError::StorageFailure("log lock poisoned".into()))?;
        let (seq, prev_hash) = match inner.records.last() {
            Some(last) => (last.seq + 1, last.hash.clone()),
            None => (1, GENESIS_HASH.to_owned()),
        };
        let mut record = AuditRecord {
            seq,
            timestamp: event.timestamp,
            kind: event.kind,
            request: event.request,
            decision: event.decision,
            txn: event.txn,
            policy_version: event.policy_version,
            simulated_subject: event.simulated_subject,
            note: event.note,
            prev_hash,
            hash: String::new(),
        };
        record.hash = record.compute_hash();
        if let Some(file) = inner.file.as_mut() {
            let mut line = record.to_line();
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        inner.records.push(record.clone());
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().map(|i| i.records.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.inner.lock().map(|i| i.records.clone()).unwrap_or_default()
    }

    /// Records with `from <= seq <= to` (inclusive bounds, either optional).
    pub fn range(&self, from: Option<u64>, to: Option<u64>) -> Vec<AuditRecord> {
        let from = from.unwrap_or(1);
        let to = to.unwrap_or(u64::MAX);
        self.inner
            .lock()
            .map(|i| {
                i.records
                    .iter()
                    .filter(|r| r.seq >= from && r.seq <= to)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Verifies the persisted file when there is one, else the in-memory chain.
    pub fn verify(&self) -> Result<ChainStatus, AuditError> {
        match &self.path {
            Some(p) => {
                let _guard = self.inner.lock();
                verify_file(p)
            }
            None => Ok(verify_records(&self.records())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceEntry {
    pub seq: u64,
    pub old_outcome: Outcome,
    pub new_outcome: Outcome,
    pub differing_policy_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Version the replayed decisions were made under; `mixed` when they span
    /// several versions, empty when the log holds no decisions.
    pub old_version: String,
    pub new_version: String,
    pub entries: Vec<DivergenceEntry>,
}

fn contribution(trace: &[TraceEntry], id: &str) -> Option<Effect> {
    trace
        .iter()
        .find(|t| t.policy_id == id)
        .and_then(|t| t.matched.then_some(t.effect))
}

/// Ids whose matched effect differs between two traces, sorted.
fn differing_ids(old: &[TraceEntry], new: &[TraceEntry]) -> Vec<String> {
    let mut ids: Vec<&str> = old.iter().chain(new).map(|t| t.policy_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .filter(|id| contribution(old, id) != contribution(new, id))
        .map(str::to_owned)
        .collect()
}

fn replay_one(record: &AuditRecord, ps_new: &PolicySet) -> Option<DivergenceEntry> {
    if record.kind != RecordKind::Decision {
        return None;
    }
    let (request, old) = (record.request.as_ref()?, record.decision.as_ref()?);
    // Scope-gated denials never consulted policy, so no policy change alters them.
    if old.reason.is_some() {
        return None;
    }
    let new = evaluate(ps_new, request);
    (new.outcome != old.outcome).then(|| DivergenceEntry {
        seq: record.seq,
        old_outcome: old.outcome,
        new_outcome: new.outcome,
        differing_policy_ids: differing_ids(&old.trace, &new.trace),
    })
}

fn old_version(records: &[AuditRecord]) -> String {
    let mut versions = records
        .iter()
        .filter(|r| r.kind == RecordKind::Decision)
        .filter_map(|r| r.decision.as_ref().map(|d| d.policy_version.as_str()));
    match versions.next() {
        None => String::new(),
        Some(first) if versions.all(|v| v == first) => first.to_owned(),
        Some(_) => "mixed".to_owned(),
    }
}

/// Re-evaluates every `decision` record under `ps_new` and reports the ones
/// whose outcome flips. Refuses to run over a broken chain.
pub fn replay(records: &[AuditRecord], ps_new: &PolicySet) -> Result<DivergenceReport, AuditError> {
    if let Some(seq) = verify_records(records).first_bad_seq {
        return Err(AuditError::ChainInvalid(seq));
    }
    #[cfg(feature = "parallel")]
    let entries: Vec<DivergenceEntry> = {
        use rayon::prelude::*;
        records.par_iter().filter_map(|r| replay_one(r, ps_new)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let entries: Vec<DivergenceEntry> = records.iter().filter_map(|r| replay_one(r, ps_new)).collect();
    Ok(DivergenceReport {
        old_version: old_version(records),
        new_version: ps_new.version().to_owned(),
        entries,
    })
}

/// Sequential replay; same result as [`replay`].
pub fn replay_sequential(
    records: &[AuditRecord],
    ps_new: &PolicySet,
) -> Result<DivergenceReport, AuditError> {
    if let Some(seq) = verify_records(records).first_bad_seq {
        return Err(AuditError::ChainInvalid(seq));
    }
    Ok(DivergenceReport {
        old_version: old_version(records),
        new_version: ps_new.version().to_owned(),
        entries: records.iter().filter_map(|r| replay_one(r, ps_new)).collect(),
    })
}

/// Replays the persisted log at `path` after verifying its exact bytes.
pub fn replay_file(path: &Path, ps_new: &PolicySet) -> Result<DivergenceReport, AuditError> {
    let bytes = std::fs::read(path)?;
    if let Some(seq) = verify_bytes(&bytes).first_bad_seq {
        return Err(AuditError::ChainInvalid(seq));
    }
    replay(&parse_records(&bytes)?, ps_new)
}
