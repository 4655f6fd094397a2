//! One handle over a whole store directory: the typed store, the audit
//! log and the processing catalog, opened together and guarded by an OS
//! file lock so two processes cannot write the same store at once.

use std::fs::{File, OpenOptions};
use std::path::Path;

use thiserror::Error;

use crate::audit::{AuditEntry, AuditError, AuditEvent, AuditFilter, AuditKind, AuditLog};
use crate::crypto::{AuthorityPublicKey, CryptoError};
use crate::membrane::ConsentGrant;
use crate::pdtype::{parse_type_file, validate, PdTypeError};
use crate::pipeline::{builtin_collect, CollectReport, DedError};
use crate::registry::{
    InvokeResult, ProcessingSummary, PsCatalog, PsError, RegisterOutcome,
};
use crate::rights::{self, RightsError};
use crate::store::{AccessCapability, ConsentTarget, Selector, Store, StoreError};

const LOCK_FILE: &str = "lock";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("store directory is locked by another process")]
    Locked,
    #[error("`{0}` is not a grant: expected `all`, `none` or a view name")]
    BadGrant(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    PdType(#[from] PdTypeError),
    #[error(transparent)]
    Ps(#[from] PsError),
    #[error(transparent)]
    Ded(#[from] DedError),
    #[error(transparent)]
    Rights(#[from] RightsError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Runtime {
    store: Store,
    audit: AuditLog,
    ps: PsCatalog,
    _lock: File,
}

impl Runtime {
    pub fn init(dir: &Path) -> Result<Runtime, RuntimeError> {
        let store = Store::init(dir)?;
        Runtime::assemble(dir, store)
    }

    pub fn open(dir: &Path) -> Result<Runtime, RuntimeError> {
        let store = Store::open(dir)?;
        Runtime::assemble(dir, store)
    }

    fn assemble(dir: &Path, store: Store) -> Result<Runtime, RuntimeError> {
        let lock = OpenOptions::new()
            .create(true)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        lock.try_lock().map_err(|_| RuntimeError::Locked)?;
        let audit = AuditLog::open(dir)?;
        let ps = PsCatalog::open(&store)?;
        Ok(Runtime {
            store,
            audit,
            ps,
            _lock: lock,
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    /// Parse and catalog every type declaration in a `.pdt` text.
    /// Returns the created type names in file order.
    pub fn load_types(&self, text: &str) -> Result<Vec<String>, RuntimeError> {
        let decls = parse_type_file(text)?;
        let mut names = Vec::new();
        for decl in decls {
            let validated = validate(&decl, &self.store.type_names())?;
            self.store.create_table(validated)?;
            names.push(decl.name);
        }
        Ok(names)
    }

    pub fn collect(
        &self,
        type_name: &str,
        source: &str,
        payload: &str,
        now: i64,
    ) -> Result<CollectReport, RuntimeError> {
        let cap = AccessCapability::for_pipeline();
        Ok(builtin_collect(
            &self.store,
            &self.audit,
            type_name,
            source,
            payload,
            now,
            &cap,
        )?)
    }

    /// Override one purpose's consent on a record or a whole subject,
    /// propagating through copy groups. Audited.
    pub fn set_consent(
        &self,
        target: &ConsentTarget,
        purpose: &str,
        grant: ConsentGrant,
        now: i64,
    ) -> Result<usize, RuntimeError> {
        let cap = AccessCapability::for_rights();
        let updated = self.store.override_consent(target, purpose, grant.clone(), &cap)?;
        let (pd_ref, subject) = match target {
            ConsentTarget::Ref(r) => (Some(r.clone()), None),
            ConsentTarget::Subject(s) => (None, Some(s.clone())),
        };
        self.audit.append(
            now,
            AuditEvent {
                kind: AuditKind::ConsentOverride,
                run: None,
                processing: None,
                purpose: Some(purpose.to_string()),
                pd_ref,
                subject,
                outcome: format!("set to {}, {updated} membranes updated", grant_text(&grant)),
                permission: None,
            },
            &cap,
        )?;
        Ok(updated)
    }

    pub fn register(
        &self,
        id: &str,
        source: &str,
        approve: bool,
        now: i64,
    ) -> Result<RegisterOutcome, RuntimeError> {
        Ok(self.ps.ps_register(&self.store, id, source, approve, now)?)
    }

    pub fn approve(&self, id: &str, now: i64) -> Result<(), RuntimeError> {
        Ok(self.ps.ps_approve(&self.store, id, now)?)
    }

    pub fn list_processings(&self) -> Vec<ProcessingSummary> {
        self.ps.list_processings()
    }

    pub fn invoke(
        &self,
        id: &str,
        selector: Selector,
        collection: Option<(&str, &str)>,
        do_collect: bool,
        now: i64,
    ) -> Result<InvokeResult, RuntimeError> {
        Ok(self
            .ps
            .ps_invoke(&self.store, &self.audit, id, selector, collection, do_collect, now)?)
    }

    pub fn export(&self, subject: &str, now: i64) -> Result<String, RuntimeError> {
        Ok(rights::export_subject(&self.store, &self.audit, subject, now)?)
    }

    /// Crypto-erase under the store's configured authority key.
    pub fn forget(&self, target: &ConsentTarget, now: i64) -> Result<usize, RuntimeError> {
        let key = self.store.authority_key().ok_or(StoreError::NoAuthorityKey)?;
        Ok(rights::forget(&self.store, &self.audit, target, &key, now)?)
    }

    pub fn sweep(&self, now: i64) -> Result<usize, RuntimeError> {
        Ok(rights::sweep(&self.store, &self.audit, now)?)
    }

    pub fn audit_show(&self, filter: &AuditFilter) -> Vec<AuditEntry> {
        self.audit.query(filter)
    }

    pub fn set_authority_key(&self, key: AuthorityPublicKey) -> Result<(), RuntimeError> {
        Ok(self.store.set_authority_key(key)?)
    }
}

pub fn grant_text(grant: &ConsentGrant) -> String {
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

/// The CLI's grant syntax: `all`, `none`, or a view name.
pub fn parse_grant(text: &str) -> ConsentGrant {
    match text {
        "all" => ConsentGrant::All,
        "none" => ConsentGrant::None,
        view => ConsentGrant::View(view.to_string()),
    }
}
