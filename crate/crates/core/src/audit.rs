//! Hash-chained audit log.
//!
//! Every collection, execution, update, copy, consent override, forget
//! and sweep leaves exactly one entry per affected record. Entries hold
//! refs and metadata only — never field values — so the log itself
//! cannot leak what the store protects. Each entry carries the SHA-256
//! of its predecessor, making after-the-fact edits detectable when the
//! log is reopened.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::PdRef;
use crate::store::AccessCapability;

pub const AUDIT_FILE: &str = "audit.log";

const GENESIS_HASH: &str =
    "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditKind {
    Collection,
    Execute,
    Update,
    Copy,
    ConsentOverride,
    Forget,
    Sweep,
}

impl AuditKind {
    pub fn keyword(self) -> &'static str {
        match self {
            AuditKind::Collection => "collection",
            AuditKind::Execute => "execute",
            AuditKind::Update => "update",
            AuditKind::Copy => "copy",
            AuditKind::ConsentOverride => "consent-override",
            AuditKind::Forget => "forget",
            AuditKind::Sweep => "sweep",
        }
    }

    fn from_keyword(word: &str) -> Option<AuditKind> {
        Some(match word {
            "collection" => AuditKind::Collection,
            "execute" => AuditKind::Execute,
            "update" => AuditKind::Update,
            "copy" => AuditKind::Copy,
            "consent-override" => AuditKind::ConsentOverride,
            "forget" => AuditKind::Forget,
            "sweep" => AuditKind::Sweep,
            _ => return None,
        })
    }
}

/// What happened to one record. The `outcome` is a closed vocabulary
/// ("executed", "skipped-no-consent", "skipped-expired", "fault", ...)
/// rather than free text so queries stay mechanical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub kind: AuditKind,
    pub run: Option<u64>,
    pub processing: Option<String>,
    pub purpose: Option<String>,
    pub pd_ref: Option<PdRef>,
    pub subject: Option<String>,
    pub outcome: String,
    pub permission: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub seq: u64,
    pub ts: i64,
    pub event: AuditEvent,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit chain broken at entry {seq}: {reason}")]
    ChainBroken { seq: u64, reason: String },
    #[error("malformed audit entry: {0}")]
    Malformed(String),
    #[error("audit io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Clone)]
pub struct AuditFilter {
    pub subject: Option<String>,
    pub pd_ref: Option<PdRef>,
    pub kind: Option<AuditKind>,
    pub run: Option<u64>,
}

impl AuditFilter {
    fn matches(&self, entry: &AuditEntry) -> bool {
        if let Some(s) = &self.subject {
            if entry.event.subject.as_ref() != Some(s) {
                return false;
            }
        }
        if let Some(r) = &self.pd_ref {
            if entry.event.pd_ref.as_ref() != Some(r) {
                return false;
            }
        }
        if let Some(k) = self.kind {
            if entry.event.kind != k {
                return false;
            }
        }
        if let Some(n) = self.run {
            if entry.event.run != Some(n) {
                return false;
            }
        }
        true
    }
}

struct LogState {
    entries: Vec<AuditEntry>,
    last_hash: String,
    next_seq: u64,
}

pub struct AuditLog {
    path: PathBuf,
    state: Mutex<LogState>,
}

impl AuditLog {
    /// Open (or create) the log under a store directory, replaying and
    /// verifying the whole hash chain.
    pub fn open(store_dir: &Path) -> Result<AuditLog, AuditError> {
        let path = store_dir.join(AUDIT_FILE);
        let mut entries = Vec::new();
        let mut last_hash = GENESIS_HASH.to_string();
        let mut next_seq = 0u64;
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(&path)?.read_to_end(&mut bytes)?;
            let mut offset = 0usize;
            while offset < bytes.len() {
                if offset + 4 > bytes.len() {
                    return Err(AuditError::Malformed("truncated length prefix".into()));
                }
                let len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
                    as usize;
                offset += 4;
                if offset + len > bytes.len() {
                    return Err(AuditError::Malformed("truncated entry body".into()));
                }
                let body = &bytes[offset..offset + len];
                offset += len;
                let (entry, prev) = decode_entry(body)?;
                if entry.seq != next_seq {
                    return Err(AuditError::ChainBroken {
                        seq: entry.seq,
                        reason: format!("expected sequence {next_seq}"),
                    });
                }
                if prev != last_hash {
                    return Err(AuditError::ChainBroken {
                        seq: entry.seq,
                        reason: "predecessor hash mismatch".into(),
                    });
                }
                last_hash = hex::encode(Sha256::digest(body));
                next_seq = entry.seq + 1;
                entries.push(entry);
            }
        }
        Ok(AuditLog {
            path,
            state: Mutex::new(LogState {
                entries,
                last_hash,
                next_seq,
            }),
        })
    }

    /// Append one event. Durable (flushed and synced) before returning;
    /// the caller's operation must not report success before this does.
    pub fn append(
        &self,
        ts: i64,
        event: AuditEvent,
        _cap: &AccessCapability,
    ) -> Result<AuditEntry, AuditError> {
        let mut state = self.state.lock().unwrap();
        let entry = AuditEntry {
            seq: state.next_seq,
            ts,
            event,
        };
        let body = encode_entry(&entry, &state.last_hash);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        file.write_all(&(body.len() as u32).to_le_bytes())?;
        file.write_all(&body)?;
        file.sync_all()?;
        state.last_hash = hex::encode(Sha256::digest(&body));
        state.next_seq += 1;
        state.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditEntry> {
        self.state
            .lock()
            .unwrap()
            .entries
            .iter()
            .filter(|e| filter.matches(e))
            .cloned()
            .collect()
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.state.lock().unwrap().entries.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every entry that names one of a subject's refs or the subject
    /// itself — the audit section of a right-of-access export.
    pub fn entries_for_subject(&self, subject: &str, refs: &BTreeSet<PdRef>) -> Vec<AuditEntry> {
        self.state
            .lock()
            .unwrap()
            .entries
            .iter()
            .filter(|e| {
                e.event.subject.as_deref() == Some(subject)
                    || e.event
                        .pd_ref
                        .as_ref()
                        .is_some_and(|r| refs.contains(r))
            })
            .cloned()
            .collect()
    }

    /// Re-read the file and re-verify the whole chain.
    pub fn verify(&self) -> Result<usize, AuditError> {
        let dir = self.path.parent().expect("log path has a parent");
        let reread = AuditLog::open(dir)?;
        Ok(reread.len())
    }
}

fn opt(value: &Option<String>) -> &str {
    value.as_deref().unwrap_or("-")
}

fn encode_entry(entry: &AuditEntry, prev: &str) -> Vec<u8> {
    let e = &entry.event;
    let run = e.run.map(|n| n.to_string());
    let pd_ref = e.pd_ref.as_ref().map(|r| r.to_string());
    let mut out = String::new();
    out.push_str("audit v1\n");
    out.push_str(&format!("seq {}\n", entry.seq));
    out.push_str(&format!("ts {}\n", entry.ts));
    out.push_str(&format!("kind {}\n", e.kind.keyword()));
    out.push_str(&format!("run {}\n", opt(&run)));
    out.push_str(&format!("processing {}\n", opt(&e.processing)));
    out.push_str(&format!("purpose {}\n", opt(&e.purpose)));
    out.push_str(&format!("ref {}\n", opt(&pd_ref)));
    out.push_str(&format!("subject {}\n", serde_json::to_string(opt(&e.subject)).unwrap()));
    out.push_str(&format!("outcome {}\n", e.outcome));
    out.push_str(&format!("permission {}\n", opt(&e.permission)));
    out.push_str(&format!("prev {prev}\n"));
    out.into_bytes()
}

fn decode_entry(bytes: &[u8]) -> Result<(AuditEntry, String), AuditError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| AuditError::Malformed("entry is not UTF-8".into()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AuditError::Malformed("empty entry".into()))?;
    if header != "audit v1" {
        return Err(AuditError::Malformed(format!("bad header `{header}`")));
    }
    let mut field = |key: &str| -> Result<String, AuditError> {
        let line = lines
            .next()
            .ok_or_else(|| AuditError::Malformed(format!("missing `{key}` line")))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| AuditError::Malformed(format!("expected `{key}` line, got `{line}`")))
    };
    let seq: u64 = field("seq")?
        .parse()
        .map_err(|_| AuditError::Malformed("bad seq".into()))?;
    let ts: i64 = field("ts")?
        .parse()
        .map_err(|_| AuditError::Malformed("bad ts".into()))?;
    let kind = AuditKind::from_keyword(&field("kind")?)
        .ok_or_else(|| AuditError::Malformed("unknown kind".into()))?;
    let none_if_dash = |s: String| if s == "-" { None } else { Some(s) };
    let run = none_if_dash(field("run")?)
        .map(|s| s.parse::<u64>())
        .transpose()
        .map_err(|_| AuditError::Malformed("bad run number".into()))?;
    let processing = none_if_dash(field("processing")?);
    let purpose = none_if_dash(field("purpose")?);
    let pd_ref = none_if_dash(field("ref")?)
        .map(|s| s.parse::<PdRef>())
        .transpose()
        .map_err(|_| AuditError::Malformed("bad ref".into()))?;
    let subject_raw: String = serde_json::from_str(&field("subject")?)
        .map_err(|_| AuditError::Malformed("bad subject".into()))?;
    let subject = if subject_raw == "-" { None } else { Some(subject_raw) };
    let outcome = field("outcome")?;
    let permission = none_if_dash(field("permission")?);
    let prev = field("prev")?;
    Ok((
        AuditEntry {
            seq,
            ts,
            event: AuditEvent {
                kind,
                run,
                processing,
                purpose,
                pd_ref,
                subject,
                outcome,
                permission,
            },
        },
        prev,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::AccessCapability;

    fn event(kind: AuditKind, subject: &str) -> AuditEvent {
        AuditEvent {
            kind,
            run: Some(1),
            processing: Some("compute_age".into()),
            purpose: Some("purpose3".into()),
            pd_ref: Some(PdRef::fresh("user")),
            subject: Some(subject.into()),
            outcome: "executed".into(),
            permission: Some("fields(year_of_birthdate)".into()),
        }
    }

    fn cap() -> AccessCapability {
        AccessCapability::for_pipeline()
    }

    #[test]
    fn sequences_are_strictly_increasing_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = AuditLog::open(dir.path()).unwrap();
            for i in 0..5 {
                let e = log.append(100 + i, event(AuditKind::Execute, "s1"), &cap()).unwrap();
                assert_eq!(e.seq, i as u64);
            }
        }
        let log = AuditLog::open(dir.path()).unwrap();
        assert_eq!(log.len(), 5);
        let e = log.append(200, event(AuditKind::Forget, "s1"), &cap()).unwrap();
        assert_eq!(e.seq, 5);
        let seqs: Vec<u64> = log.entries().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn entries_round_trip_through_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let written = {
            let log = AuditLog::open(dir.path()).unwrap();
            vec![
                log.append(1, event(AuditKind::Collection, "s1"), &cap()).unwrap(),
                log.append(
                    2,
                    AuditEvent {
                        kind: AuditKind::Sweep,
                        run: None,
                        processing: None,
                        purpose: None,
                        pd_ref: None,
                        subject: None,
                        outcome: "swept 0".into(),
                        permission: None,
                    },
                    &cap(),
                )
                .unwrap(),
            ]
        };
        let log = AuditLog::open(dir.path()).unwrap();
        assert_eq!(log.entries(), written);
    }

    #[test]
    fn tampering_breaks_the_chain() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = AuditLog::open(dir.path()).unwrap();
            log.append(1, event(AuditKind::Execute, "victim"), &cap()).unwrap();
            log.append(2, event(AuditKind::Execute, "other"), &cap()).unwrap();
        }
        let path = dir.path().join(AUDIT_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        // Rewrite the first occurrence of the subject name in place.
        let pos = bytes
            .windows(6)
            .position(|w| w == b"victim")
            .expect("subject bytes present");
        bytes[pos..pos + 6].copy_from_slice(b"nobody");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            AuditLog::open(dir.path()),
            Err(AuditError::ChainBroken { .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        {
            let log = AuditLog::open(dir.path()).unwrap();
            log.append(1, event(AuditKind::Execute, "s1"), &cap()).unwrap();
        }
        let path = dir.path().join(AUDIT_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(AuditLog::open(dir.path()).is_err());
    }

    #[test]
    fn query_filters_compose() {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::open(dir.path()).unwrap();
        let a = log.append(1, event(AuditKind::Execute, "s1"), &cap()).unwrap();
        log.append(2, event(AuditKind::Execute, "s2"), &cap()).unwrap();
        log.append(3, event(AuditKind::Forget, "s1"), &cap()).unwrap();

        let by_subject = log.query(&AuditFilter {
            subject: Some("s1".into()),
            ..Default::default()
        });
        assert_eq!(by_subject.len(), 2);

        let by_kind = log.query(&AuditFilter {
            subject: Some("s1".into()),
            kind: Some(AuditKind::Execute),
            ..Default::default()
        });
        assert_eq!(by_kind, vec![a.clone()]);

        let by_ref = log.query(&AuditFilter {
            pd_ref: a.event.pd_ref.clone(),
            ..Default::default()
        });
        assert_eq!(by_ref, vec![a]);
    }

    #[test]
    fn subject_entries_union_ref_and_subject_matches() {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::open(dir.path()).unwrap();
        let r1 = PdRef::fresh("user");
        // Names the ref but not the subject (e.g. a run-level entry).
        log.append(
            1,
            AuditEvent {
                kind: AuditKind::Execute,
                run: Some(7),
                processing: Some("p".into()),
                purpose: Some("purpose1".into()),
                pd_ref: Some(r1.clone()),
                subject: None,
                outcome: "executed".into(),
                permission: Some("all".into()),
            },
            &cap(),
        )
        .unwrap();
        // Names the subject but no ref (e.g. an export request).
        log.append(
            2,
            AuditEvent {
                kind: AuditKind::ConsentOverride,
                run: None,
                processing: None,
                purpose: Some("purpose2".into()),
                pd_ref: None,
                subject: Some("s1".into()),
                outcome: "granted all".into(),
                permission: None,
            },
            &cap(),
        )
        .unwrap();
        // Unrelated.
        log.append(3, event(AuditKind::Execute, "s9"), &cap()).unwrap();

        let got = log.entries_for_subject("s1", &BTreeSet::from([r1]));
        assert_eq!(got.len(), 2);
    }
}
