//! The mediated execution pipeline.
//!
//! A run walks eight steps: translate the processing's input type to a
//! query, fetch membranes, filter by consent and retention, load the
//! minimized fields each surviving record permits, execute the body per
//! record, derive membranes for generated records, store them, and hand
//! back scalars and refs. The membrane is always consulted before any
//! field value is read, a record that fails mid-run is skipped rather
//! than aborting the others, and every record that entered the run
//! leaves exactly one audit entry.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::audit::{AuditError, AuditEvent, AuditKind, AuditLog};
use crate::ids::PdRef;
use crate::membrane::{
    derive_membrane, effective_view, is_expired, membrane_from_defaults, DeriveInput,
    Membrane, MembraneError, Permission,
};
use crate::pdtype::{ScalarType, ValidatedTypeDecl};
use crate::proclang::{evaluate_traced, OutputKind, Processing, Value};
use crate::store::encoding::FieldValue;
use crate::store::{AccessCapability, Selector, Store, StoreError};

/// Count of processing-body executions since process start. Exists so a
/// test can assert that nothing but the registration gateway ever
/// reaches execution.
static DED_EXECUTIONS: AtomicU64 = AtomicU64::new(0);

pub fn ded_execution_count() -> u64 {
    DED_EXECUTIONS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub type_name: String,
    pub selector: Selector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoConsent,
    Expired,
}

impl SkipReason {
    pub fn keyword(self) -> &'static str {
        match self {
            SkipReason::NoConsent => "skipped-no-consent",
            SkipReason::Expired => "skipped-expired",
        }
    }
}

/// What execution produced for one record, already wrapped: generated PD
/// never leaves as values, only as a ref.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordOutput {
    Scalar(Value),
    Pd(PdRef),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Executed(RecordOutput),
    Skipped(SkipReason),
    Fault(String),
}

impl Outcome {
    pub fn keyword(&self) -> &'static str {
        match self {
            Outcome::Executed(_) => "executed",
            Outcome::Skipped(reason) => reason.keyword(),
            Outcome::Fault(_) => "fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordTrace {
    pub pd_ref: PdRef,
    pub subject: String,
    pub permission: Permission,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedRun {
    pub run_id: u64,
    pub processing: String,
    pub purpose: String,
    pub query: Query,
    pub trace: Vec<RecordTrace>,
    pub started_at: i64,
    pub ended_at: i64,
}

#[derive(Debug, Error)]
pub enum DedError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Membrane(#[from] MembraneError),
    #[error("type `{type_name}` declares no collection source `{source_name}`")]
    UnknownSource { type_name: String, source_name: String },
    #[error("collection payload is not valid: {0}")]
    BadPayload(String),
}

/// Step 1: the processing's input type plus the caller's selector is the
/// whole query — nothing else about the request reaches the store.
pub fn ded_type2req(p: &Processing, selector: Selector) -> Query {
    Query {
        type_name: p.input_type.clone(),
        selector,
    }
}

/// Step 3: keep only records whose membrane both consents to the purpose
/// and is still within retention. Pure: decided entirely from membranes,
/// before any field value exists in memory.
pub fn ded_filter(
    membranes: &[(PdRef, Membrane)],
    purpose: &str,
    decl: &ValidatedTypeDecl,
    now: i64,
) -> (Vec<(PdRef, Permission)>, Vec<(PdRef, SkipReason)>) {
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (pd_ref, membrane) in membranes {
        if is_expired(membrane, now) {
            skipped.push((pd_ref.clone(), SkipReason::Expired));
            continue;
        }
        match effective_view(membrane, purpose, decl) {
            Permission::None => skipped.push((pd_ref.clone(), SkipReason::NoConsent)),
            permission => kept.push((pd_ref.clone(), permission)),
        }
    }
    (kept, skipped)
}

pub fn permission_text(p: &Permission) -> String {
    match p {
        Permission::All => "all".to_string(),
        Permission::None => "none".to_string(),
        Permission::Fields(fields) => {
            let names: Vec<&str> = fields.iter().map(String::as_str).collect();
            format!("fields({})", names.join(","))
        }
    }
}

/// Steps 1–8 over one registered processing.
pub fn run_pipeline(
    store: &Store,
    audit: &AuditLog,
    p: &Processing,
    selector: Selector,
    run_id: u64,
    now: i64,
    clock_year: i64,
    cap: &AccessCapability,
) -> Result<DedRun, DedError> {
    let query = ded_type2req(p, selector);
    let decl = store.decl(&query.type_name)?;

    // Step 2: membranes only. No record content is touched until the
    // filter has ruled on every candidate.
    let membranes = store.fetch_membranes(&query.type_name, &query.selector, cap)?;
    let (kept, skipped) = ded_filter(&membranes, &p.purpose, &decl, now);
    let membrane_of: BTreeMap<&PdRef, &Membrane> =
        membranes.iter().map(|(r, m)| (r, m)).collect();

    let mut trace = Vec::new();
    for (pd_ref, reason) in skipped {
        let subject = membrane_of[&pd_ref].subject_id.clone();
        trace.push(RecordTrace {
            pd_ref,
            subject,
            permission: Permission::None,
            outcome: Outcome::Skipped(reason),
        });
    }

    let out_decl = match &p.output {
        OutputKind::Pd(type_name) => Some(store.decl(type_name)?),
        OutputKind::Scalar(_) => None,
    };

    for (pd_ref, permission) in kept {
        let membrane = membrane_of[&pd_ref];
        let subject = membrane.subject_id.clone();
        // Steps 4 and 5: the evaluator sees exactly the fields this
        // record's own permission grants, nothing more.
        let input = store.fetch_fields(&pd_ref, &permission, cap)?;
        DED_EXECUTIONS.fetch_add(1, Ordering::SeqCst);
        let (result, _reads) = evaluate_traced(p, &input, clock_year);
        let outcome = match result {
            Err(fault) => Outcome::Fault(fault.to_string()),
            Ok(value) => match (&p.output, out_decl.as_ref()) {
                (OutputKind::Scalar(kind), _) => match check_scalar(&value, *kind) {
                    Ok(()) => Outcome::Executed(RecordOutput::Scalar(value)),
                    Err(msg) => Outcome::Fault(msg),
                },
                (OutputKind::Pd(type_name), Some(out_decl)) => {
                    // Steps 6 and 7: wrap generated PD in a derived
                    // membrane and store it before anything is returned.
                    match store_output(
                        store,
                        &value,
                        type_name,
                        out_decl,
                        &pd_ref,
                        membrane,
                        &decl,
                        &p.name,
                        now,
                        cap,
                    ) {
                        Ok(new_ref) => Outcome::Executed(RecordOutput::Pd(new_ref)),
                        Err(msg) => Outcome::Fault(msg),
                    }
                }
                (OutputKind::Pd(_), None) => unreachable!("output decl resolved above"),
            },
        };
        trace.push(RecordTrace {
            pd_ref,
            subject,
            permission,
            outcome,
        });
    }

    for t in &trace {
        audit.append(
            now,
            AuditEvent {
                kind: AuditKind::Execute,
                run: Some(run_id),
                processing: Some(p.name.clone()),
                purpose: Some(p.purpose.clone()),
                pd_ref: Some(t.pd_ref.clone()),
                subject: Some(t.subject.clone()),
                outcome: t.outcome.keyword().to_string(),
                permission: Some(permission_text(&t.permission)),
            },
            cap,
        )?;
    }

    Ok(DedRun {
        run_id,
        processing: p.name.clone(),
        purpose: p.purpose.clone(),
        query,
        trace,
        started_at: now,
        ended_at: now,
    })
}

fn check_scalar(value: &Value, kind: ScalarType) -> Result<(), String> {
    let ok = matches!(
        (value, kind),
        (Value::Int(_), ScalarType::Int)
            | (Value::Float(_), ScalarType::Float)
            | (Value::Str(_), ScalarType::String)
            | (Value::Bool(_), ScalarType::Bool)
            | (Value::Date(_), ScalarType::Date)
    );
    if ok {
        Ok(())
    } else {
        Err(format!("body produced a value not matching declared output {}", kind.keyword()))
    }
}

#[allow(clippy::too_many_arguments)]
fn store_output(
    store: &Store,
    value: &Value,
    out_type: &str,
    out_decl: &ValidatedTypeDecl,
    source_ref: &PdRef,
    source_membrane: &Membrane,
    source_decl: &ValidatedTypeDecl,
    processing: &str,
    now: i64,
    cap: &AccessCapability,
) -> Result<PdRef, String> {
    let Value::Record(type_name, fields) = value else {
        return Err(format!(
            "body produced a non-record value for pd output `{out_type}`"
        ));
    };
    if type_name != out_type {
        return Err(format!(
            "body produced a `{type_name}` record, declared output is `{out_type}`"
        ));
    }
    let mut values = BTreeMap::new();
    for (name, v) in fields {
        values.insert(name.clone(), field_value(v)?);
    }
    let mut membrane = derive_membrane(
        &[DeriveInput {
            record: source_ref,
            membrane: source_membrane,
            decl: source_decl,
        }],
        processing,
        now,
    )
    .map_err(|e| e.to_string())?;
    membrane.type_name = out_decl.name.clone();
    store
        .insert_record(values, membrane, cap)
        .map_err(|e| e.to_string())
}

fn field_value(v: &Value) -> Result<FieldValue, String> {
    Ok(match v {
        Value::Int(i) => FieldValue::Int(*i),
        Value::Float(f) => FieldValue::Float(*f),
        Value::Str(s) => FieldValue::Str(s.clone()),
        Value::Bool(b) => FieldValue::Bool(*b),
        Value::Date(d) => FieldValue::Date(*d),
        Value::Record(..) => return Err("record fields cannot hold nested records".into()),
    })
}

/// Per-entry report from a collection run: which payload entries were
/// inserted and which were skipped, and why.
#[derive(Debug)]
pub struct CollectReport {
    pub refs: Vec<PdRef>,
    pub skipped: Vec<(usize, StoreError)>,
}

/// The collection built-in: turn a payload document into stored records
/// wrapped in default membranes. A bad entry skips that entry only.
pub fn builtin_collect(
    store: &Store,
    audit: &AuditLog,
    type_name: &str,
    source: &str,
    payload: &str,
    now: i64,
    cap: &AccessCapability,
) -> Result<CollectReport, DedError> {
    let decl = store.decl(type_name)?;
    if !decl.collection.contains_key(source) {
        return Err(DedError::UnknownSource {
            type_name: type_name.to_string(),
            source_name: source.to_string(),
        });
    }
    let entries: Vec<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_str(payload).map_err(|e| DedError::BadPayload(e.to_string()))?;

    let mut refs = Vec::new();
    let mut skipped = Vec::new();
    for (idx, entry) in entries.iter().enumerate() {
        match collect_one(store, &decl, entry, now, cap) {
            Ok((pd_ref, subject)) => {
                audit.append(
                    now,
                    AuditEvent {
                        kind: AuditKind::Collection,
                        run: None,
                        processing: None,
                        purpose: None,
                        pd_ref: Some(pd_ref.clone()),
                        subject: Some(subject),
                        outcome: format!("collected via {source}"),
                        permission: None,
                    },
                    cap,
                )?;
                refs.push(pd_ref);
            }
            Err(err) => skipped.push((idx, err)),
        }
    }
    Ok(CollectReport { refs, skipped })
}

fn collect_one(
    store: &Store,
    decl: &ValidatedTypeDecl,
    entry: &serde_json::Map<String, serde_json::Value>,
    now: i64,
    cap: &AccessCapability,
) -> Result<(PdRef, String), StoreError> {
    let subject = entry
        .get("subject_id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| StoreError::TypeMismatch {
            type_name: decl.name.clone(),
            detail: "payload entry has no subject_id".into(),
        })?
        .to_string();
    let mut values = BTreeMap::new();
    for field in &decl.fields {
        let raw = entry.get(&field.name).ok_or_else(|| {
            StoreError::TypeMismatch {
                type_name: decl.name.clone(),
                detail: format!("payload entry missing field `{}`", field.name),
            }
        })?;
        values.insert(
            field.name.clone(),
            json_field(raw, field.ty, &field.name, &decl.name)?,
        );
    }
    let membrane = membrane_from_defaults(decl, &subject, decl.origin.into(), now);
    let pd_ref = store.insert_record(values, membrane, cap)?;
    Ok((pd_ref, subject))
}

fn json_field(
    raw: &serde_json::Value,
    ty: ScalarType,
    name: &str,
    type_name: &str,
) -> Result<FieldValue, StoreError> {
    let mismatch = || StoreError::TypeMismatch {
        type_name: type_name.to_string(),
        detail: format!("field `{name}` does not match declared type {}", ty.keyword()),
    };
    Ok(match ty {
        ScalarType::String => FieldValue::Str(raw.as_str().ok_or_else(mismatch)?.to_string()),
        ScalarType::Int => FieldValue::Int(raw.as_i64().ok_or_else(mismatch)?),
        ScalarType::Float => FieldValue::Float(raw.as_f64().ok_or_else(mismatch)?),
        ScalarType::Bool => FieldValue::Bool(raw.as_bool().ok_or_else(mismatch)?),
        ScalarType::Date => {
            let text = raw.as_str().ok_or_else(mismatch)?;
            FieldValue::Date(text.parse().map_err(|_| mismatch())?)
        }
    })
}

/// The update built-in: a store update plus its audit trail.
pub fn builtin_update(
    store: &Store,
    audit: &AuditLog,
    pd_ref: &PdRef,
    new_values: BTreeMap<String, FieldValue>,
    now: i64,
    cap: &AccessCapability,
) -> Result<(), DedError> {
    store.update_record(pd_ref, new_values, cap)?;
    let subject = store
        .fetch_membranes(&pd_ref.type_name, &Selector::Refs(vec![pd_ref.clone()]), cap)?
        .pop()
        .map(|(_, m)| m.subject_id);
    audit.append(
        now,
        AuditEvent {
            kind: AuditKind::Update,
            run: None,
            processing: None,
            purpose: None,
            pd_ref: Some(pd_ref.clone()),
            subject,
            outcome: "updated".into(),
            permission: None,
        },
        cap,
    )?;
    Ok(())
}

/// The copy built-in: the copy joins the source's copy group, and both
/// ends of the copy are audited under the new ref.
pub fn builtin_copy(
    store: &Store,
    audit: &AuditLog,
    pd_ref: &PdRef,
    now: i64,
    cap: &AccessCapability,
) -> Result<PdRef, DedError> {
    let new_ref = store.copy_record(pd_ref, cap)?;
    let subject = store
        .fetch_membranes(&pd_ref.type_name, &Selector::Refs(vec![new_ref.clone()]), cap)?
        .pop()
        .map(|(_, m)| m.subject_id);
    audit.append(
        now,
        AuditEvent {
            kind: AuditKind::Copy,
            run: None,
            processing: None,
            purpose: None,
            pd_ref: Some(new_ref.clone()),
            subject,
            outcome: format!("copied from {pd_ref}"),
            permission: None,
        },
        cap,
    )?;
    Ok(new_ref)
}
