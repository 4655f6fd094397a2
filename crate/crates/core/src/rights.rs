//! Subject rights: the right of access and the right to be forgotten.
//!
//! Access produces a structured text export with the subject's records
//! under their declared field names — not opaque blobs — plus every
//! audit entry that ever touched their refs. Forgetting seals each
//! record's canonical bytes under the authority public key and replaces
//! it with the ciphertext tombstone; the operator loses the plaintext,
//! the authority alone can recover it.

use thiserror::Error;

use std::collections::BTreeSet;

use crate::audit::{AuditEntry, AuditError, AuditEvent, AuditKind, AuditLog};
use crate::crypto::{self, AuthorityPrivateKey, AuthorityPublicKey, CryptoError, Envelope};
use crate::ids::PdRef;
use crate::membrane::Membrane;
use crate::store::encoding::FieldValue;
use crate::store::{AccessCapability, ConsentTarget, Store, StoreError};

#[derive(Debug, Error)]
pub enum RightsError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Right of access: everything held about a subject, as canonical
/// structured text. Records are keyed by their declared field names and
/// sorted by ref so the document is deterministic for a given store.
pub fn export_subject(
    store: &Store,
    audit: &AuditLog,
    subject: &str,
    now: i64,
) -> Result<String, RightsError> {
    let cap = AccessCapability::for_rights();
    let mut records = store.subject_records(subject, &cap);
    records.sort_by(|a, b| a.0.to_string().cmp(&b.0.to_string()));
    let refs: BTreeSet<PdRef> = records.iter().map(|(r, _, _)| r.clone()).collect();

    let mut out = String::new();
    out.push_str("export v1\n");
    out.push_str(&format!("subject {}\n", serde_json::to_string(subject).unwrap()));
    out.push_str(&format!("generated_at {now}\n"));
    out.push_str(&format!("records {}\n", records.len()));

    for (pd_ref, values, membrane) in &records {
        out.push('\n');
        out.push_str(&format!("record {pd_ref}\n"));
        out.push_str(&format!("type {}\n", membrane.type_name));
        out.push_str("values:\n");
        for (name, value) in values {
            out.push_str(&format!("  {name} {}\n", render_value(value)));
        }
        out.push_str("membrane:\n");
        render_membrane(&mut out, membrane);
        out.push_str("processing-log:\n");
        let entries = audit.query(&crate::audit::AuditFilter {
            pd_ref: Some(pd_ref.clone()),
            ..Default::default()
        });
        for entry in entries {
            out.push_str(&format!("  {}\n", render_entry(&entry)));
        }
    }

    // Entries that name the subject without naming one of the exported
    // refs (consent overrides, forgets of earlier records, ...).
    let all = audit.entries_for_subject(subject, &refs);
    let extra: Vec<&AuditEntry> = all
        .iter()
        .filter(|e| match &e.event.pd_ref {
            Some(r) => !refs.contains(r),
            None => true,
        })
        .collect();
    out.push('\n');
    out.push_str("subject-log:\n");
    for entry in extra {
        out.push_str(&format!("  {}\n", render_entry(entry)));
    }
    Ok(out)
}

fn render_value(value: &FieldValue) -> String {
    match value {
        FieldValue::Str(s) => serde_json::to_string(s).unwrap(),
        FieldValue::Int(i) => i.to_string(),
        FieldValue::Float(f) => format!("{f:?}"),
        FieldValue::Bool(b) => b.to_string(),
        FieldValue::Date(d) => d.to_string(),
    }
}

fn render_membrane(out: &mut String, m: &Membrane) {
    out.push_str(&format!("  origin {}\n", m.origin.keyword()));
    out.push_str(&format!("  collected_at {}\n", m.collected_at));
    out.push_str(&format!("  ttl {}\n", m.ttl));
    out.push_str(&format!("  sensitivity {}\n", m.sensitivity.keyword()));
    out.push_str(&format!("  copy_group {}\n", m.copy_group));
    for (purpose, grant) in &m.consents {
        out.push_str(&format!("  consent {purpose} {}\n", render_grant(grant)));
    }
    for entry in &m.lineage {
        match entry {
            crate::membrane::LineageEntry::Record(r) => {
                out.push_str(&format!("  lineage ref {r}\n"))
            }
            crate::membrane::LineageEntry::Processing(p) => {
                out.push_str(&format!("  lineage proc {p}\n"))
            }
        }
    }
}

fn render_grant(grant: &crate::membrane::ConsentGrant) -> String {
    use crate::membrane::ConsentGrant;
    match grant {
        ConsentGrant::All => "all".into(),
        ConsentGrant::None => "none".into(),
        ConsentGrant::View(v) => format!("view {v}"),
        ConsentGrant::Fields(fields) => {
            let names: Vec<&str> = fields.iter().map(String::as_str).collect();
            format!("fields {}", names.join(","))
        }
    }
}

fn render_entry(entry: &AuditEntry) -> String {
    let e = &entry.event;
    format!(
        "seq={} ts={} kind={} run={} processing={} purpose={} ref={} outcome={} permission={}",
        entry.seq,
        entry.ts,
        e.kind.keyword(),
        e.run.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
        e.processing.as_deref().unwrap_or("-"),
        e.purpose.as_deref().unwrap_or("-"),
        e.pd_ref.as_ref().map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
        e.outcome,
        e.permission.as_deref().unwrap_or("-"),
    )
}

/// Right to be forgotten: crypto-erase every live record the target
/// resolves to. Returns how many records were erased.
pub fn forget(
    store: &Store,
    audit: &AuditLog,
    target: &ConsentTarget,
    key: &AuthorityPublicKey,
    now: i64,
) -> Result<usize, RightsError> {
    let cap = AccessCapability::for_rights();
    let refs = store.resolve_target(target)?;
    for pd_ref in &refs {
        let membranes = store.fetch_membranes(
            &pd_ref.type_name,
            &crate::store::Selector::Refs(vec![pd_ref.clone()]),
            &cap,
        )?;
        let subject = membranes.first().map(|(_, m)| m.subject_id.clone());
        let plaintext = store.canonical_live_record(pd_ref, &cap)?;
        let envelope = crypto::seal(key, &plaintext);
        store.tombstone_record(pd_ref, envelope, &cap)?;
        audit.append(
            now,
            AuditEvent {
                kind: AuditKind::Forget,
                run: None,
                processing: None,
                purpose: None,
                pd_ref: Some(pd_ref.clone()),
                subject,
                outcome: "erased".into(),
                permission: None,
            },
            &cap,
        )?;
    }
    Ok(refs.len())
}

/// Crypto-erase everything past its retention window, leaving one sweep
/// audit entry per erased record.
pub fn sweep(store: &Store, audit: &AuditLog, now: i64) -> Result<usize, RightsError> {
    let cap = AccessCapability::for_rights();
    let erased = store.sweep_expired(now, &cap)?;
    for (pd_ref, subject) in &erased {
        audit.append(
            now,
            AuditEvent {
                kind: AuditKind::Sweep,
                run: None,
                processing: None,
                purpose: None,
                pd_ref: Some(pd_ref.clone()),
                subject: Some(subject.clone()),
                outcome: "expired, erased".into(),
                permission: None,
            },
            &cap,
        )?;
    }
    Ok(erased.len())
}

/// What the authority does with a tombstone: recover the exact canonical
/// bytes the record had before erasure.
pub fn authority_decrypt(
    envelope: &Envelope,
    key: &AuthorityPrivateKey,
) -> Result<Vec<u8>, CryptoError> {
    crypto::open(envelope, key)
}

#[cfg(test)]
mod tests;
