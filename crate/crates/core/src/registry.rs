//! The registration gateway.
//!
//! Nothing executes unless it was registered here first. Registration
//! parses the source, checks the declared purpose (a processing without
//! one is rejected outright) and compares the statically computed
//! field-access set against the declared view. A mismatch does not
//! register: it parks the submission as a pending alert that an operator
//! must explicitly approve. Invocation picks a run number, optionally
//! runs collection, and hands the processing to the pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{Datelike, TimeZone, Utc};
use thiserror::Error;

use crate::audit::{AuditError, AuditLog};
use crate::ids::PdRef;
use crate::pipeline::{
    builtin_collect, run_pipeline, DedError, Outcome, RecordOutput, SkipReason,
};
use crate::proclang::{parse_processing, DeclaredView, ProcLangError, Processing, Value};
use crate::store::{AccessCapability, Selector, Store, StoreError};

pub const PROCESSINGS_DIR: &str = "processings";
const INDEX_FILE: &str = "index";

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredProcessing {
    pub processing: Processing,
    pub registered_at: i64,
    pub alert: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingAlert {
    pub id: String,
    pub submitted_at: i64,
    pub alert: String,
}

/// What ps_register decided.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegisterOutcome {
    /// Stored and runnable.
    Registered(String),
    /// Parked: the access set exceeds the declared view and no approval
    /// was given. The alert text explains the excess.
    Alert { id: String, message: String },
}

/// One row of the catalog summary. Carries no PD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessingSummary {
    pub id: String,
    pub purpose: String,
    pub input_type: String,
    pub declared_view: String,
    pub output: String,
    pub state: ProcessingState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessingState {
    Registered,
    RegisteredApproved,
    PendingAlert,
}

impl ProcessingState {
    pub fn keyword(self) -> &'static str {
        match self {
            ProcessingState::Registered => "registered",
            ProcessingState::RegisteredApproved => "registered (approved)",
            ProcessingState::PendingAlert => "pending alert",
        }
    }
}

/// The result of one invocation: scalars and refs, never PD values of
/// pd-typed outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InvokeResult {
    pub run_id: u64,
    /// Scalar outputs, attributed to the input record they came from.
    pub scalars: Vec<(PdRef, Value)>,
    /// Refs of records generated and stored by the run.
    pub pd_refs: Vec<PdRef>,
    /// Records filtered out or faulted, and why.
    pub skipped: Vec<(PdRef, String)>,
    /// Refs created by the collection phase, if one ran.
    pub collected: Vec<PdRef>,
}

#[derive(Debug, Error)]
pub enum PsError {
    #[error("no processing registered under id `{0}`")]
    UnknownProcessing(String),
    #[error("a processing or pending alert already exists under id `{0}`")]
    DuplicateProcessing(String),
    #[error("no pending alert under id `{0}`")]
    NoPendingAlert(String),
    #[error(transparent)]
    Lang(#[from] ProcLangError),
    #[error(transparent)]
    Ded(#[from] DedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("processing catalog is corrupt: {0}")]
    Corrupt(String),
    #[error("processing catalog io error: {0}")]
    Io(#[from] std::io::Error),
}

struct PsState {
    registered: BTreeMap<String, RegisteredProcessing>,
    pending: BTreeMap<String, PendingAlert>,
    next_run: u64,
}

pub struct PsCatalog {
    dir: PathBuf,
    state: Mutex<PsState>,
}

impl PsCatalog {
    /// Open the catalog under a store directory, re-parsing every stored
    /// source against the store's current type catalog.
    pub fn open(store: &Store) -> Result<PsCatalog, PsError> {
        let dir = store.dir().join(PROCESSINGS_DIR);
        fs::create_dir_all(&dir)?;
        let mut state = PsState {
            registered: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_run: 0,
        };
        let index_path = dir.join(INDEX_FILE);
        if index_path.exists() {
            let types = type_catalog(store)?;
            let text = fs::read_to_string(&index_path)?;
            let mut lines = text.lines();
            match lines.next() {
                Some("ps v1") => {}
                other => {
                    return Err(PsError::Corrupt(format!("bad index header {other:?}")))
                }
            }
            for line in lines {
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.split(' ');
                match parts.next() {
                    Some("next_run") => {
                        state.next_run = parts
                            .next()
                            .and_then(|w| w.parse().ok())
                            .ok_or_else(|| PsError::Corrupt("bad next_run line".into()))?;
                    }
                    Some("registered") => {
                        let (id, ts, rest) = id_ts_rest(&mut parts)?;
                        let approved = match rest.first().copied() {
                            Some("approved") => true,
                            Some("unapproved") => false,
                            other => {
                                return Err(PsError::Corrupt(format!(
                                    "bad approval flag {other:?}"
                                )))
                            }
                        };
                        let alert = decode_opt_text(rest.get(1..).unwrap_or(&[]).join(" "))?;
                        let source = fs::read_to_string(source_path(&dir, &id))?;
                        let mut processing = parse_processing(&id, &source, &types)?;
                        processing.approved = approved;
                        state.registered.insert(
                            id,
                            RegisteredProcessing {
                                processing,
                                registered_at: ts,
                                alert,
                            },
                        );
                    }
                    Some("pending") => {
                        let (id, ts, rest) = id_ts_rest(&mut parts)?;
                        let alert = decode_opt_text(rest.join(" "))?
                            .ok_or_else(|| PsError::Corrupt("pending without alert".into()))?;
                        state.pending.insert(
                            id.clone(),
                            PendingAlert {
                                id,
                                submitted_at: ts,
                                alert,
                            },
                        );
                    }
                    other => {
                        return Err(PsError::Corrupt(format!("bad index line {other:?}")))
                    }
                }
            }
        }
        Ok(PsCatalog {
            dir,
            state: Mutex::new(state),
        })
    }

    /// Register a processing. `approve` pre-authorizes an access-set
    /// mismatch; without it a mismatch parks the source as a pending
    /// alert instead of registering.
    pub fn ps_register(
        &self,
        store: &Store,
        id: &str,
        source: &str,
        approve: bool,
        now: i64,
    ) -> Result<RegisterOutcome, PsError> {
        let types = type_catalog(store)?;
        let mut processing = parse_processing(id, source, &types)?;
        let mut state = self.state.lock().unwrap();
        if state.registered.contains_key(id) {
            return Err(PsError::DuplicateProcessing(id.to_string()));
        }
        // Re-submitting a parked id with approval is how an operator
        // clears the alert; without approval the alert stands.
        if state.pending.contains_key(id) && approve {
            state.pending.remove(id);
        } else if state.pending.contains_key(id) {
            let message = state.pending[id].alert.clone();
            return Ok(RegisterOutcome::Alert {
                id: id.to_string(),
                message,
            });
        }

        let alert = access_alert(&processing, store)?;
        if let Some(message) = &alert {
            if !approve {
                fs::write(source_path(&self.dir, id), source)?;
                state.pending.insert(
                    id.to_string(),
                    PendingAlert {
                        id: id.to_string(),
                        submitted_at: now,
                        alert: message.clone(),
                    },
                );
                self.write_index(&state)?;
                return Ok(RegisterOutcome::Alert {
                    id: id.to_string(),
                    message: message.clone(),
                });
            }
            processing.approved = true;
        }
        fs::write(source_path(&self.dir, id), source)?;
        state.registered.insert(
            id.to_string(),
            RegisteredProcessing {
                processing,
                registered_at: now,
                alert,
            },
        );
        self.write_index(&state)?;
        Ok(RegisterOutcome::Registered(id.to_string()))
    }

    /// Approve a parked alert, promoting it into the runnable catalog.
    pub fn ps_approve(&self, store: &Store, id: &str, now: i64) -> Result<(), PsError> {
        let types = type_catalog(store)?;
        let mut state = self.state.lock().unwrap();
        let pending = state
            .pending
            .remove(id)
            .ok_or_else(|| PsError::NoPendingAlert(id.to_string()))?;
        let source = fs::read_to_string(source_path(&self.dir, id))?;
        let mut processing = parse_processing(id, &source, &types)?;
        processing.approved = true;
        state.registered.insert(
            id.to_string(),
            RegisteredProcessing {
                processing,
                registered_at: now,
                alert: Some(pending.alert),
            },
        );
        self.write_index(&state)?;
        Ok(())
    }

    /// The one entry point to execution. Optionally collects a payload
    /// first, then runs the pipeline over the selector.
    pub fn ps_invoke(
        &self,
        store: &Store,
        audit: &AuditLog,
        id: &str,
        selector: Selector,
        collection: Option<(&str, &str)>,
        do_collect: bool,
        now: i64,
    ) -> Result<InvokeResult, PsError> {
        let (processing, run_id) = {
            let mut state = self.state.lock().unwrap();
            let reg = state
                .registered
                .get(id)
                .ok_or_else(|| PsError::UnknownProcessing(id.to_string()))?;
            let processing = reg.processing.clone();
            let run_id = state.next_run;
            state.next_run += 1;
            self.write_index(&state)?;
            (processing, run_id)
        };

        let cap = AccessCapability::for_pipeline();
        let mut collected = Vec::new();
        if do_collect {
            if let Some((source, payload)) = collection {
                let report = builtin_collect(
                    store,
                    audit,
                    &processing.input_type,
                    source,
                    payload,
                    now,
                    &cap,
                )?;
                collected = report.refs;
            }
        }

        let clock_year = Utc
            .timestamp_opt(now, 0)
            .single()
            .map(|t| t.year() as i64)
            .unwrap_or(1970);
        let run = run_pipeline(store, audit, &processing, selector, run_id, now, clock_year, &cap)?;

        let mut scalars = Vec::new();
        let mut pd_refs = Vec::new();
        let mut skipped = Vec::new();
        for t in run.trace {
            match t.outcome {
                Outcome::Executed(RecordOutput::Scalar(v)) => scalars.push((t.pd_ref, v)),
                Outcome::Executed(RecordOutput::Pd(r)) => pd_refs.push(r),
                Outcome::Skipped(SkipReason::NoConsent) => {
                    skipped.push((t.pd_ref, "no-consent".to_string()))
                }
                Outcome::Skipped(SkipReason::Expired) => {
                    skipped.push((t.pd_ref, "expired".to_string()))
                }
                Outcome::Fault(msg) => skipped.push((t.pd_ref, format!("fault: {msg}"))),
            }
        }
        Ok(InvokeResult {
            run_id,
            scalars,
            pd_refs,
            skipped,
            collected,
        })
    }

    pub fn list_processings(&self) -> Vec<ProcessingSummary> {
        let state = self.state.lock().unwrap();
        let mut out: Vec<ProcessingSummary> = state
            .registered
            .values()
            .map(|r| ProcessingSummary {
                id: r.processing.name.clone(),
                purpose: r.processing.purpose.clone(),
                input_type: r.processing.input_type.clone(),
                declared_view: declared_view_text(&r.processing.declared_view),
                output: output_text(&r.processing),
                state: if r.processing.approved {
                    ProcessingState::RegisteredApproved
                } else {
                    ProcessingState::Registered
                },
            })
            .collect();
        out.extend(state.pending.values().map(|p| ProcessingSummary {
            id: p.id.clone(),
            purpose: String::new(),
            input_type: String::new(),
            declared_view: String::new(),
            output: String::new(),
            state: ProcessingState::PendingAlert,
        }));
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn pending_alerts(&self) -> Vec<PendingAlert> {
        self.state.lock().unwrap().pending.values().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<RegisteredProcessing> {
        self.state.lock().unwrap().registered.get(id).cloned()
    }

    fn write_index(&self, state: &PsState) -> Result<(), PsError> {
        let mut out = String::from("ps v1\n");
        out.push_str(&format!("next_run {}\n", state.next_run));
        for (id, reg) in &state.registered {
            out.push_str(&format!(
                "registered {id} {} {} {}\n",
                reg.registered_at,
                if reg.processing.approved { "approved" } else { "unapproved" },
                encode_opt_text(&reg.alert),
            ));
        }
        for (id, pending) in &state.pending {
            out.push_str(&format!(
                "pending {id} {} {}\n",
                pending.submitted_at,
                encode_opt_text(&Some(pending.alert.clone())),
            ));
        }
        let tmp = self.dir.join("index.tmp");
        fs::write(&tmp, out)?;
        fs::rename(&tmp, self.dir.join(INDEX_FILE))?;
        Ok(())
    }
}

fn source_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.pproc"))
}

fn type_catalog(
    store: &Store,
) -> Result<BTreeMap<String, crate::pdtype::ValidatedTypeDecl>, StoreError> {
    store
        .type_names()
        .into_iter()
        .map(|n| Ok((n.clone(), store.decl(&n)?)))
        .collect()
}

/// The registration check: is every field the body can touch inside the
/// view the header claims? Returns the alert text on excess.
fn access_alert(p: &Processing, store: &Store) -> Result<Option<String>, PsError> {
    let decl = store.decl(&p.input_type)?;
    let allowed = match &p.declared_view {
        DeclaredView::All => decl.field_names(),
        DeclaredView::View(v) => decl
            .view(v)
            .map(|view| view.members.clone())
            .unwrap_or_default(),
    };
    let excess: Vec<&str> = p
        .accessed
        .difference(&allowed)
        .map(String::as_str)
        .collect();
    if excess.is_empty() {
        Ok(None)
    } else {
        Ok(Some(format!(
            "body accesses fields outside the declared view: {}",
            excess.join(", ")
        )))
    }
}

fn declared_view_text(view: &DeclaredView) -> String {
    match view {
        DeclaredView::All => "all".to_string(),
        DeclaredView::View(v) => v.clone(),
    }
}

fn output_text(p: &Processing) -> String {
    match &p.output {
        crate::proclang::OutputKind::Scalar(kind) => kind.keyword().to_string(),
        crate::proclang::OutputKind::Pd(t) => format!("pd {t}"),
    }
}

fn id_ts_rest<'a>(
    parts: &mut impl Iterator<Item = &'a str>,
) -> Result<(String, i64, Vec<&'a str>), PsError> {
    let id = parts
        .next()
        .ok_or_else(|| PsError::Corrupt("missing id".into()))?
        .to_string();
    let ts = parts
        .next()
        .and_then(|w| w.parse().ok())
        .ok_or_else(|| PsError::Corrupt("missing timestamp".into()))?;
    Ok((id, ts, parts.collect()))
}

fn encode_opt_text(value: &Option<String>) -> String {
    match value {
        None => "-".to_string(),
        Some(text) => serde_json::to_string(text).expect("strings always serialize"),
    }
}

fn decode_opt_text(word: String) -> Result<Option<String>, PsError> {
    if word == "-" || word.is_empty() {
        Ok(None)
    } else {
        serde_json::from_str(&word)
            .map(Some)
            .map_err(|_| PsError::Corrupt(format!("bad quoted text `{word}`")))
    }
}

#[cfg(test)]
mod tests;
