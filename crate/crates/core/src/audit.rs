//! Append-only, hash-chained audit log.
//!
//! One canonical JSON record per line. `record_hash` is the SHA-256 of the
//! canonical record without `record_hash`; `prev_hash` links each record to
//! its predecessor, with 64 zeros before the first record.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions, TryLockError};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_bytes};
use crate::corpus::gate_for;
use crate::decision::{DecisionObject, Timestamp};
use crate::dsl::{ConstraintSet, ConstraintVerdict};
use crate::gate::{GateReport, OutcomeKind};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    pub recorded_at: Timestamp,
    pub decision_hash: String,
    pub decision_class: String,
    pub verdicts: Vec<ConstraintVerdict>,
    pub outcome_kind: OutcomeKind,
    pub failed_constraints: Vec<String>,
    pub evaluation_clock: Timestamp,
    pub prev_hash: String,
    pub record_hash: String,
}

#[derive(Serialize)]
struct Unsealed<'a> {
    seq: u64,
    recorded_at: &'a Timestamp,
    decision_hash: &'a str,
    decision_class: &'a str,
    verdicts: &'a [ConstraintVerdict],
    outcome_kind: OutcomeKind,
    failed_constraints: &'a [String],
    evaluation_clock: &'a Timestamp,
    prev_hash: &'a str,
}

impl AuditRecord {
    /// Hash of every field except `record_hash`.
    pub fn compute_hash(&self) -> String {
        sha256_hex(&to_canonical_bytes(&Unsealed {
            seq: self.seq,
            recorded_at: &self.recorded_at,
            decision_hash: &self.decision_hash,
            decision_class: &self.decision_class,
            verdicts: &self.verdicts,
            outcome_kind: self.outcome_kind,
            failed_constraints: &self.failed_constraints,
            evaluation_clock: &self.evaluation_clock,
            prev_hash: &self.prev_hash,
        }))
    }

    pub fn to_line(&self) -> Vec<u8> {
        to_canonical_bytes(self)
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("IO_FAILURE: {0}")]
    Io(String),
    #[error("CHAIN_CORRUPT: first bad record at seq {first_bad_seq}: {reason}")]
    ChainCorrupt { first_bad_seq: u64, reason: String },
    #[error("LOG_LOCKED: {0} is held by another writer")]
    Locked(String),
    #[error("MISSING_DECISION: {0}")]
    MissingDecision(String),
}

impl AuditError {
    pub fn code(&self) -> &'static str {
        match self {
            AuditError::Io(_) => "IO_FAILURE",
            AuditError::ChainCorrupt { .. } => "CHAIN_CORRUPT",
            AuditError::Locked(_) => "LOG_LOCKED",
            AuditError::MissingDecision(_) => "MISSING_DECISION",
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> AuditError {
    AuditError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verification {
    Ok { records: u64 },
    Corrupt { first_bad_seq: u64, reason: String },
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verification::Ok { .. })
    }
}

/// Verify a whole log held in memory. Returns the verification result and
/// the records that verified before the first bad one.
pub fn verify_bytes(bytes: &[u8]) -> (Verification, Vec<AuditRecord>) {
    let mut records = Vec::new();
    let mut prev = GENESIS_HASH.to_owned();
    let mut rest = bytes;
    let mut seq: u64 = 0;
    let corrupt = |seq: u64, reason: &str| Verification::Corrupt {
        first_bad_seq: seq,
        reason: reason.to_owned(),
    };
    while !rest.is_empty() {
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return (corrupt(seq, "truncated record (no line terminator)"), records);
        };
        let line = &rest[..end];
        rest = &rest[end + 1..];
        let record: AuditRecord = match serde_json::from_slice(line) {
            Ok(r) => r,
            Err(e) => return (corrupt(seq, &format!("unparseable record: {e}")), records),
        };
        if record.seq != seq {
            return (corrupt(seq, &format!("expected seq {seq}, found {}", record.seq)), records);
        }
        if record.prev_hash != prev {
            return (corrupt(seq, "prev_hash does not match the previous record"), records);
        }
        if record.record_hash != record.compute_hash() {
            return (corrupt(seq, "record_hash does not match the record contents"), records);
        }
        if record.to_line() != line {
            return (corrupt(seq, "record is not in canonical form"), records);
        }
        prev = record.record_hash.clone();
        records.push(record);
        seq += 1;
    }
    (Verification::Ok { records: seq }, records)
}

pub fn verify(path: &Path) -> Result<Verification, AuditError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(verify_bytes(&bytes).0)
}

/// Read a log, requiring the whole chain to verify.
pub fn read_verified(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    match verify_bytes(&bytes) {
        (Verification::Ok { .. }, records) => Ok(records),
        (Verification::Corrupt { first_bad_seq, reason }, _) => Err(AuditError::ChainCorrupt { first_bad_seq, reason }),
    }
}

/// Single-writer handle on a log file. Holds an exclusive lock until dropped.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: File,
    file_len: u64,
    next_seq: u64,
    last_hash: String,
}

impl AuditLog {
    /// Open (creating if absent) and verify the existing chain.
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(AuditError::Locked(path.display().to_string())),
            Err(TryLockError::Error(e)) => return Err(io_err(path, e)),
        }
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0)).map_err(|e| io_err(path, e))?;
        file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
        let (v, records) = verify_bytes(&bytes);
        if let Verification::Corrupt { first_bad_seq, reason } = v {
            return Err(AuditError::ChainCorrupt { first_bad_seq, reason });
        }
        Ok(AuditLog {
            path: path.to_owned(),
            file,
            file_len: bytes.len() as u64,
            next_seq: records.len() as u64,
            last_hash: records.last().map_or_else(|| GENESIS_HASH.to_owned(), |r| r.record_hash.clone()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Sequence number of the last record, if any.
    pub fn last_seq(&self) -> Option<u64> {
        self.next_seq.checked_sub(1)
    }

    pub fn len(&self) -> u64 {
        self.next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.next_seq == 0
    }

    /// Append and fsync one record. On failure the file is cut back to its
    /// previous length and the evaluation must be treated as unlogged.
    pub fn append(&mut self, report: &GateReport, decision_class: &str, now: &Timestamp) -> Result<AuditRecord, AuditError> {
        let mut record = AuditRecord {
            seq: self.next_seq,
            recorded_at: now.clone(),
            decision_hash: report.decision_hash.clone(),
            decision_class: decision_class.to_owned(),
            verdicts: report.verdicts.clone(),
            outcome_kind: report.outcome.kind,
            failed_constraints: report.outcome.failed_constraints.clone(),
            evaluation_clock: report.evaluation_clock.clone(),
            prev_hash: self.last_hash.clone(),
            record_hash: String::new(),
        };
        record.record_hash = record.compute_hash();
        let mut line = record.to_line();
        line.push(b'\n');

        let written = self.file.write_all(&line).and_then(|()| self.file.sync_data());
        if let Err(e) = written {
            let _ = self.file.set_len(self.file_len);
            return Err(io_err(&self.path, e));
        }
        self.file_len += line.len() as u64;
        self.next_seq += 1;
        self.last_hash = record.record_hash.clone();
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayMismatch {
    pub seq: u64,
    pub decision_hash: String,
    pub field: String,
    pub logged: serde_json::Value,
    pub recomputed: serde_json::Value,
}

/// Re-evaluate every record with its stored evaluation clock and report
/// where the recomputed outcome or verdicts differ from the logged ones.
pub fn replay_records(
    records: &[AuditRecord],
    sets: &BTreeMap<String, ConstraintSet>,
    decisions: &BTreeMap<String, DecisionObject>,
) -> Result<Vec<ReplayMismatch>, AuditError> {
    let mut out = Vec::new();
    for r in records {
        let d = decisions
            .get(&r.decision_hash)
            .ok_or_else(|| AuditError::MissingDecision(r.decision_hash.clone()))?;
        let mut push = |field: &str, logged: serde_json::Value, recomputed: serde_json::Value| {
            if logged != recomputed {
                out.push(ReplayMismatch {
                    seq: r.seq,
                    decision_hash: r.decision_hash.clone(),
                    field: field.to_owned(),
                    logged,
                    recomputed,
                });
            }
        };
        push("decision_class", r.decision_class.clone().into(), d.decision_class.clone().into());
        let report = match gate_for(sets, d, &r.evaluation_clock) {
            Ok(report) => report,
            Err(e) => {
                push("outcome_kind", r.outcome_kind.as_str().into(), e.to_string().into());
                continue;
            }
        };
        push("outcome_kind", json(&r.outcome_kind), json(&report.outcome.kind));
        push("failed_constraints", json(&r.failed_constraints), json(&report.outcome.failed_constraints));
        push("verdicts", json(&r.verdicts), json(&report.verdicts));
    }
    Ok(out)
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

pub fn replay(
    path: &Path,
    sets: &BTreeMap<String, ConstraintSet>,
    decisions: &BTreeMap<String, DecisionObject>,
) -> Result<Vec<ReplayMismatch>, AuditError> {
    replay_records(&read_verified(path)?, sets, decisions)
}
