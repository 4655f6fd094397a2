//! The typed personal-data store.
//!
//! Tables are declared types; every live record carries its membrane.
//! Access goes through capability-gated operations only: the capability
//! token can be minted solely by the execution pipeline and the rights
//! component, so no outside caller can reach field values directly.
//!
//! On disk the store is a `manifest` (catalog, segment index, authority
//! key), append-only per-sensitivity segment files of length-prefixed
//! canonical records, and the audit log. Erasure appends a ciphertext
//! tombstone and compacts the affected segments so no plaintext bytes
//! remain.

pub mod encoding;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use thiserror::Error;

use crate::crypto::{self, AuthorityPublicKey, Envelope};
use crate::ids::{CopyGroupId, PdRef};
use crate::membrane::{
    check_copy_consistency, is_expired, ConsentGrant, LineageEntry, Membrane, MembraneError,
};
use crate::pdtype::{
    canonical_print, parse_type_file, validate, PdTypeError, Sensitivity, ValidatedTypeDecl,
};
use encoding::{decode_record, encode_record, CodecError, FieldValue, StoredRecord};

/// Proof that the caller is one of the two trusted components. There is
/// no public constructor.
#[derive(Debug, Clone, Copy)]
pub struct AccessCapability {
    holder: Holder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Holder {
    Pipeline,
    Rights,
}

impl AccessCapability {
    pub(crate) fn for_pipeline() -> AccessCapability {
        AccessCapability {
            holder: Holder::Pipeline,
        }
    }

    pub(crate) fn for_rights() -> AccessCapability {
        AccessCapability {
            holder: Holder::Rights,
        }
    }

    pub fn holder_name(&self) -> &'static str {
        match self.holder {
            Holder::Pipeline => "ded",
            Holder::Rights => "rights",
        }
    }
}

/// Which records an operation addresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    All,
    Refs(Vec<PdRef>),
    Subject(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsentTarget {
    Ref(PdRef),
    Subject(String),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("type `{0}` already exists")]
    DuplicateType(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unknown record `{0}`")]
    UnknownRef(PdRef),
    #[error("record `{0}` is tombstoned")]
    RefTombstoned(PdRef),
    #[error("type mismatch for `{type_name}`: {detail}")]
    TypeMismatch { type_name: String, detail: String },
    #[error("fetch with an empty permission is a caller bug")]
    NoneView,
    #[error("no authority public key configured")]
    NoAuthorityKey,
    #[error("store directory `{0}` already initialized")]
    AlreadyInitialized(PathBuf),
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Membrane(#[from] MembraneError),
    #[error(transparent)]
    PdType(#[from] PdTypeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    catalog: BTreeMap<String, ValidatedTypeDecl>,
    records: BTreeMap<PdRef, StoredRecord>,
    /// Which sensitivity partition a tombstone lives in; live records
    /// carry theirs in the membrane.
    tombstone_partition: BTreeMap<PdRef, Sensitivity>,
    /// Current segment file number per sensitivity.
    segments: BTreeMap<Sensitivity, u32>,
    authority_pub: Option<AuthorityPublicKey>,
}

/// Handle to an open store. Mutations serialize through a single writer
/// lock; reads clone from a consistent snapshot.
pub struct Store {
    dir: PathBuf,
    inner: RwLock<Inner>,
}

const MANIFEST: &str = "manifest";

impl Store {
    /// Create an empty store layout in `dir`.
    pub fn init(dir: &Path) -> Result<Store, StoreError> {
        if dir.join(MANIFEST).exists() {
            return Err(StoreError::AlreadyInitialized(dir.to_path_buf()));
        }
        fs::create_dir_all(dir)?;
        for sens in Sensitivity::ALL {
            fs::create_dir_all(dir.join("segments").join(sens.keyword()))?;
        }
        let store = Store {
            dir: dir.to_path_buf(),
            inner: RwLock::new(Inner {
                catalog: BTreeMap::new(),
                records: BTreeMap::new(),
                tombstone_partition: BTreeMap::new(),
                segments: Sensitivity::ALL.iter().map(|s| (*s, 1)).collect(),
                authority_pub: None,
            }),
        };
        store.write_manifest(&store.inner.read().unwrap())?;
        Ok(store)
    }

    /// Open an existing store, replaying the manifest and all segments.
    pub fn open(dir: &Path) -> Result<Store, StoreError> {
        let manifest_text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| {
            StoreError::Corrupt(format!("cannot read manifest in `{}`: {e}", dir.display()))
        })?;
        let mut catalog = BTreeMap::new();
        let mut segments: BTreeMap<Sensitivity, u32> =
            Sensitivity::ALL.iter().map(|s| (*s, 1)).collect();
        let mut authority_pub = None;

        let mut lines = manifest_text.lines().peekable();
        match lines.next() {
            Some("manifest v1") => {}
            other => {
                return Err(StoreError::Corrupt(format!(
                    "bad manifest header {other:?}"
                )))
            }
        }
        let mut type_block: Option<String> = None;
        for line in lines {
            if let Some(block) = &mut type_block {
                block.push_str(line);
                block.push('\n');
                if line == "}" {
                    let decls = parse_type_file(block)?;
                    for decl in decls {
                        let known: BTreeSet<String> = catalog.keys().cloned().collect();
                        let validated = validate(&decl, &known)?;
                        catalog.insert(decl.name.clone(), validated);
                    }
                    type_block = None;
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("authority_pub: ") {
                if rest != "-" {
                    let bytes = base64_decode(rest)?;
                    let bytes: [u8; 32] = bytes
                        .try_into()
                        .map_err(|_| StoreError::Corrupt("bad authority key length".into()))?;
                    authority_pub = Some(AuthorityPublicKey(bytes));
                }
            } else if let Some(rest) = line.strip_prefix("segment ") {
                let (sens, n) = rest
                    .split_once(' ')
                    .ok_or_else(|| StoreError::Corrupt(format!("bad segment line `{line}`")))?;
                let sens = sensitivity_from_keyword(sens)?;
                let n: u32 = n
                    .parse()
                    .map_err(|_| StoreError::Corrupt(format!("bad segment line `{line}`")))?;
                segments.insert(sens, n);
            } else if line.starts_with("type ") {
                type_block = Some(format!("{line}\n"));
            } else if !line.trim().is_empty() {
                return Err(StoreError::Corrupt(format!(
                    "unexpected manifest line `{line}`"
                )));
            }
        }

        let mut records = BTreeMap::new();
        let mut tombstone_partition = BTreeMap::new();
        for sens in Sensitivity::ALL {
            let seg_dir = dir.join("segments").join(sens.keyword());
            let mut files: Vec<(u32, PathBuf)> = Vec::new();
            if seg_dir.exists() {
                for entry in fs::read_dir(&seg_dir)? {
                    let entry = entry?;
                    let name = entry.file_name().to_string_lossy().to_string();
                    if let Some(n) = name
                        .strip_suffix(".seg")
                        .and_then(|stem| stem.parse::<u32>().ok())
                    {
                        files.push((n, entry.path()));
                    }
                }
            }
            files.sort();
            for (_, path) in files {
                for bytes in read_segment_entries(&path)? {
                    let record = decode_record(&bytes)?;
                    let pd_ref = record.pd_ref().clone();
                    match &record {
                        StoredRecord::Live { membrane, .. } => {
                            if membrane.sensitivity != sens {
                                return Err(StoreError::Corrupt(format!(
                                    "record {pd_ref} with sensitivity {} found in {} partition",
                                    membrane.sensitivity.keyword(),
                                    sens.keyword()
                                )));
                            }
                            tombstone_partition.remove(&pd_ref);
                        }
                        StoredRecord::Tombstoned { .. } => {
                            tombstone_partition.insert(pd_ref.clone(), sens);
                        }
                    }
                    records.insert(pd_ref, record);
                }
            }
        }

        let store = Store {
            dir: dir.to_path_buf(),
            inner: RwLock::new(Inner {
                catalog,
                records,
                tombstone_partition,
                segments,
                authority_pub,
            }),
        };
        store.verify_membranes(&store.inner.read().unwrap())?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn verify_membranes(&self, inner: &Inner) -> Result<(), StoreError> {
        for record in inner.records.values() {
            if let StoredRecord::Live {
                pd_ref,
                values,
                membrane,
            } = record
            {
                let decl = inner
                    .catalog
                    .get(&pd_ref.type_name)
                    .ok_or_else(|| StoreError::UnknownType(pd_ref.type_name.clone()))?;
                if membrane.type_name != pd_ref.type_name {
                    return Err(StoreError::Corrupt(format!(
                        "record {pd_ref} has membrane for type `{}`",
                        membrane.type_name
                    )));
                }
                check_values_subset(decl, values).map_err(|e| {
                    StoreError::Corrupt(format!("record {pd_ref} fails type check: {e}"))
                })?;
            }
        }
        Ok(())
    }

    fn write_manifest(&self, inner: &Inner) -> Result<(), StoreError> {
        let mut out = String::from("manifest v1\n");
        out.push_str(&format!(
            "authority_pub: {}\n",
            inner
                .authority_pub
                .as_ref()
                .map(|k| base64_encode(&k.0))
                .unwrap_or_else(|| "-".into())
        ));
        for (sens, n) in &inner.segments {
            out.push_str(&format!("segment {} {n}\n", sens.keyword()));
        }
        for decl in inner.catalog.values() {
            out.push_str(&canonical_print(decl));
        }
        let tmp = self.dir.join("manifest.tmp");
        fs::write(&tmp, out)?;
        fs::rename(&tmp, self.dir.join(MANIFEST))?;
        Ok(())
    }

    fn segment_path(&self, sens: Sensitivity, n: u32) -> PathBuf {
        self.dir
            .join("segments")
            .join(sens.keyword())
            .join(format!("{n}.seg"))
    }

    fn append_record(&self, inner: &Inner, record: &StoredRecord) -> Result<(), StoreError> {
        let sens = match record {
            StoredRecord::Live { membrane, .. } => membrane.sensitivity,
            StoredRecord::Tombstoned { pd_ref, .. } => *inner
                .tombstone_partition
                .get(pd_ref)
                .expect("tombstone partition is tracked before persisting"),
        };
        let n = inner.segments[&sens];
        let path = self.segment_path(sens, n);
        let bytes = encode_record(record);
        let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        file.write_all(&(bytes.len() as u32).to_le_bytes())?;
        file.write_all(&bytes)?;
        file.sync_data()?;
        Ok(())
    }

    /// Rewrite one sensitivity partition from current state and drop the
    /// old files. This is what makes erasure byte-complete: superseded
    /// plaintext versions disappear with the old segment files.
    fn compact_partition(&self, inner: &mut Inner, sens: Sensitivity) -> Result<(), StoreError> {
        let next = inner.segments[&sens] + 1;
        let path = self.segment_path(sens, next);
        let mut file = fs::File::create(&path)?;
        for record in inner.records.values() {
            let here = match record {
                StoredRecord::Live { membrane, .. } => membrane.sensitivity == sens,
                StoredRecord::Tombstoned { pd_ref, .. } => {
                    inner.tombstone_partition.get(pd_ref) == Some(&sens)
                }
            };
            if here {
                let bytes = encode_record(record);
                file.write_all(&(bytes.len() as u32).to_le_bytes())?;
                file.write_all(&bytes)?;
            }
        }
        file.sync_data()?;
        for old in 0..next {
            let old_path = self.segment_path(sens, old);
            if old_path.exists() {
                fs::remove_file(old_path)?;
            }
        }
        inner.segments.insert(sens, next);
        self.write_manifest(inner)?;
        Ok(())
    }

    // ---- catalog ----

    pub fn create_table(&self, decl: ValidatedTypeDecl) -> Result<(), StoreError> {
        let mut inner = self.inner.write().unwrap();
        if inner.catalog.contains_key(&decl.name) {
            return Err(StoreError::DuplicateType(decl.name.clone()));
        }
        inner.catalog.insert(decl.name.clone(), decl);
        self.write_manifest(&inner)
    }

    pub fn decl(&self, type_name: &str) -> Result<ValidatedTypeDecl, StoreError> {
        self.inner
            .read()
            .unwrap()
            .catalog
            .get(type_name)
            .cloned()
            .ok_or_else(|| StoreError::UnknownType(type_name.to_string()))
    }

    pub fn type_names(&self) -> BTreeSet<String> {
        self.inner.read().unwrap().catalog.keys().cloned().collect()
    }

    // ---- authority key ----

    pub fn set_authority_key(&self, key: AuthorityPublicKey) -> Result<(), StoreError> {
        let mut inner = self.inner.write().unwrap();
        inner.authority_pub = Some(key);
        self.write_manifest(&inner)
    }

    pub fn authority_key(&self) -> Option<AuthorityPublicKey> {
        self.inner.read().unwrap().authority_pub.clone()
    }

    // ---- record operations (capability gated) ----

    pub fn insert_record(
        &self,
        values: BTreeMap<String, FieldValue>,
        membrane: Membrane,
        _cap: &AccessCapability,
    ) -> Result<PdRef, StoreError> {
        let mut inner = self.inner.write().unwrap();
        let decl = inner
            .catalog
            .get(&membrane.type_name)
            .ok_or_else(|| StoreError::UnknownType(membrane.type_name.clone()))?
            .clone();
        check_values_complete(&decl, &values)?;
        check_membrane_views(&decl, &membrane)?;
        let pd_ref = PdRef::fresh(&decl.name);
        assert!(
            !inner.records.contains_key(&pd_ref),
            "128-bit id collision"
        );
        let record = StoredRecord::Live {
            pd_ref: pd_ref.clone(),
            values,
            membrane,
        };
        self.append_record(&inner, &record)?;
        inner.records.insert(pd_ref.clone(), record);
        Ok(pd_ref)
    }

    /// Membranes only, never field values: the pipeline decides from these
    /// which records it may load at all.
    pub fn fetch_membranes(
        &self,
        type_name: &str,
        selector: &Selector,
        _cap: &AccessCapability,
    ) -> Result<Vec<(PdRef, Membrane)>, StoreError> {
        let inner = self.inner.read().unwrap();
        if !inner.catalog.contains_key(type_name) {
            return Err(StoreError::UnknownType(type_name.to_string()));
        }
        match selector {
            Selector::Refs(refs) => {
                let mut out = Vec::new();
                for r in refs {
                    if r.type_name != type_name {
                        return Err(StoreError::UnknownType(r.type_name.clone()));
                    }
                    match inner.records.get(r) {
                        Some(StoredRecord::Live { membrane, .. }) => {
                            out.push((r.clone(), membrane.clone()))
                        }
                        Some(StoredRecord::Tombstoned { .. }) => {
                            return Err(StoreError::RefTombstoned(r.clone()))
                        }
                        None => return Err(StoreError::UnknownRef(r.clone())),
                    }
                }
                Ok(out)
            }
            _ => Ok(inner
                .records
                .values()
                .filter_map(|record| match record {
                    StoredRecord::Live {
                        pd_ref, membrane, ..
                    } if pd_ref.type_name == type_name => match selector {
                        Selector::All => Some((pd_ref.clone(), membrane.clone())),
                        Selector::Subject(s) if &membrane.subject_id == s => {
                            Some((pd_ref.clone(), membrane.clone()))
                        }
                        _ => None,
                    },
                    _ => None,
                })
                .collect()),
        }
    }

    /// Load exactly the fields a permission allows. Absent fields are
    /// absent from the result, not defaulted.
    pub fn fetch_fields(
        &self,
        pd_ref: &PdRef,
        allowed: &crate::membrane::Permission,
        _cap: &AccessCapability,
    ) -> Result<BTreeMap<String, FieldValue>, StoreError> {
        use crate::membrane::Permission;
        if *allowed == Permission::None {
            return Err(StoreError::NoneView);
        }
        let inner = self.inner.read().unwrap();
        match inner.records.get(pd_ref) {
            Some(StoredRecord::Live { values, .. }) => Ok(match allowed {
                Permission::All => values.clone(),
                Permission::Fields(fields) => values
                    .iter()
                    .filter(|(name, _)| fields.contains(*name))
                    .map(|(name, value)| (name.clone(), value.clone()))
                    .collect(),
                Permission::None => unreachable!(),
            }),
            Some(StoredRecord::Tombstoned { .. }) => {
                Err(StoreError::RefTombstoned(pd_ref.clone()))
            }
            None => Err(StoreError::UnknownRef(pd_ref.clone())),
        }
    }

    pub fn update_record(
        &self,
        pd_ref: &PdRef,
        new_values: BTreeMap<String, FieldValue>,
        _cap: &AccessCapability,
    ) -> Result<(), StoreError> {
        let mut inner = self.inner.write().unwrap();
        let decl = inner
            .catalog
            .get(&pd_ref.type_name)
            .ok_or_else(|| StoreError::UnknownType(pd_ref.type_name.clone()))?
            .clone();
        check_values_subset(&decl, &new_values)?;
        let record = match inner.records.get(pd_ref) {
            Some(r) => r.clone(),
            None => return Err(StoreError::UnknownRef(pd_ref.clone())),
        };
        let StoredRecord::Live {
            pd_ref: r,
            mut values,
            membrane,
        } = record
        else {
            return Err(StoreError::RefTombstoned(pd_ref.clone()));
        };
        values.extend(new_values);
        let updated = StoredRecord::Live {
            pd_ref: r,
            values,
            membrane,
        };
        self.append_record(&inner, &updated)?;
        inner.records.insert(pd_ref.clone(), updated);
        Ok(())
    }

    pub fn copy_record(
        &self,
        pd_ref: &PdRef,
        _cap: &AccessCapability,
    ) -> Result<PdRef, StoreError> {
        let mut inner = self.inner.write().unwrap();
        let record = match inner.records.get(pd_ref) {
            Some(r) => r.clone(),
            None => return Err(StoreError::UnknownRef(pd_ref.clone())),
        };
        let StoredRecord::Live {
            values,
            mut membrane,
            ..
        } = record
        else {
            return Err(StoreError::RefTombstoned(pd_ref.clone()));
        };
        membrane.lineage.push(LineageEntry::Record(pd_ref.clone()));
        let new_ref = PdRef::fresh(&pd_ref.type_name);
        let copy = StoredRecord::Live {
            pd_ref: new_ref.clone(),
            values,
            membrane,
        };
        self.append_record(&inner, &copy)?;
        inner.records.insert(new_ref.clone(), copy);
        Ok(new_ref)
    }

    /// Replace one purpose's consent on the targeted records and every
    /// membrane sharing their copy groups. Returns how many membranes
    /// were updated.
    pub fn override_consent(
        &self,
        target: &ConsentTarget,
        purpose: &str,
        grant: ConsentGrant,
        _cap: &AccessCapability,
    ) -> Result<usize, StoreError> {
        let mut inner = self.inner.write().unwrap();
        let seed_groups: BTreeSet<CopyGroupId> = match target {
            ConsentTarget::Ref(r) => match inner.records.get(r) {
                Some(StoredRecord::Live { membrane, .. }) => [membrane.copy_group].into(),
                Some(StoredRecord::Tombstoned { .. }) => {
                    return Err(StoreError::RefTombstoned(r.clone()))
                }
                None => return Err(StoreError::UnknownRef(r.clone())),
            },
            ConsentTarget::Subject(subject) => inner
                .records
                .values()
                .filter_map(|record| match record {
                    StoredRecord::Live { membrane, .. }
                        if membrane.subject_id == *subject =>
                    {
                        Some(membrane.copy_group)
                    }
                    _ => None,
                })
                .collect(),
        };

        let targets: Vec<PdRef> = inner
            .records
            .values()
            .filter_map(|record| match record {
                StoredRecord::Live {
                    pd_ref, membrane, ..
                } if seed_groups.contains(&membrane.copy_group) => Some(pd_ref.clone()),
                _ => None,
            })
            .collect();

        let mut updated = Vec::new();
        for r in &targets {
            let Some(StoredRecord::Live {
                pd_ref,
                values,
                membrane,
            }) = inner.records.get(r).cloned()
            else {
                continue;
            };
            let decl = inner
                .catalog
                .get(&pd_ref.type_name)
                .ok_or_else(|| StoreError::UnknownType(pd_ref.type_name.clone()))?;
            let mut membrane = membrane;
            membrane.set_consent(purpose, grant.clone(), decl)?;
            updated.push(StoredRecord::Live {
                pd_ref,
                values,
                membrane,
            });
        }
        let count = updated.len();
        for record in updated {
            self.append_record(&inner, &record)?;
            inner
                .records
                .insert(record.pd_ref().clone(), record);
        }
        Ok(count)
    }

    /// The canonical bytes of a live record, exactly as persisted. This is
    /// what gets sealed into an erasure envelope.
    pub fn canonical_live_record(
        &self,
        pd_ref: &PdRef,
        _cap: &AccessCapability,
    ) -> Result<Vec<u8>, StoreError> {
        let inner = self.inner.read().unwrap();
        match inner.records.get(pd_ref) {
            Some(record @ StoredRecord::Live { .. }) => Ok(encode_record(record)),
            Some(StoredRecord::Tombstoned { .. }) => {
                Err(StoreError::RefTombstoned(pd_ref.clone()))
            }
            None => Err(StoreError::UnknownRef(pd_ref.clone())),
        }
    }

    /// Replace a live record with its ciphertext tombstone and compact the
    /// partition so no plaintext bytes remain on disk.
    pub fn tombstone_record(
        &self,
        pd_ref: &PdRef,
        envelope: Envelope,
        _cap: &AccessCapability,
    ) -> Result<(), StoreError> {
        let mut inner = self.inner.write().unwrap();
        let sens = match inner.records.get(pd_ref) {
            Some(StoredRecord::Live { membrane, .. }) => membrane.sensitivity,
            Some(StoredRecord::Tombstoned { .. }) => {
                return Err(StoreError::RefTombstoned(pd_ref.clone()))
            }
            None => return Err(StoreError::UnknownRef(pd_ref.clone())),
        };
        inner.tombstone_partition.insert(pd_ref.clone(), sens);
        inner.records.insert(
            pd_ref.clone(),
            StoredRecord::Tombstoned {
                pd_ref: pd_ref.clone(),
                envelope,
            },
        );
        self.compact_partition(&mut inner, sens)?;
        Ok(())
    }

    /// Crypto-erase every live record whose retention elapsed, using the
    /// configured authority key. Returns the erased (ref, subject) pairs.
    pub fn sweep_expired(
        &self,
        now: i64,
        cap: &AccessCapability,
    ) -> Result<Vec<(PdRef, String)>, StoreError> {
        let key = self.authority_key().ok_or(StoreError::NoAuthorityKey)?;
        let expired: Vec<(PdRef, String)> = {
            let inner = self.inner.read().unwrap();
            inner
                .records
                .values()
                .filter_map(|record| match record {
                    StoredRecord::Live {
                        pd_ref, membrane, ..
                    } if is_expired(membrane, now) => {
                        Some((pd_ref.clone(), membrane.subject_id.clone()))
                    }
                    _ => None,
                })
                .collect()
        };
        for (pd_ref, _) in &expired {
            let plaintext = self.canonical_live_record(pd_ref, cap)?;
            let envelope = crypto::seal(&key, &plaintext);
            self.tombstone_record(pd_ref, envelope, cap)?;
        }
        Ok(expired)
    }

    // ---- snapshots for rights and verification ----

    /// Full live records of one subject, for the right-of-access export.
    pub fn subject_records(
        &self,
        subject: &str,
        _cap: &AccessCapability,
    ) -> Vec<(PdRef, BTreeMap<String, FieldValue>, Membrane)> {
        let inner = self.inner.read().unwrap();
        inner
            .records
            .values()
            .filter_map(|record| match record {
                StoredRecord::Live {
                    pd_ref,
                    values,
                    membrane,
                } if membrane.subject_id == subject => {
                    Some((pd_ref.clone(), values.clone(), membrane.clone()))
                }
                _ => None,
            })
            .collect()
    }

    /// Live refs matched by a consent/forget target.
    pub fn resolve_target(&self, target: &ConsentTarget) -> Result<Vec<PdRef>, StoreError> {
        let inner = self.inner.read().unwrap();
        match target {
            ConsentTarget::Ref(r) => match inner.records.get(r) {
                Some(StoredRecord::Live { .. }) => Ok(vec![r.clone()]),
                Some(StoredRecord::Tombstoned { .. }) => Ok(vec![]),
                None => Err(StoreError::UnknownRef(r.clone())),
            },
            ConsentTarget::Subject(subject) => Ok(inner
                .records
                .values()
                .filter_map(|record| match record {
                    StoredRecord::Live {
                        pd_ref, membrane, ..
                    } if membrane.subject_id == *subject => Some(pd_ref.clone()),
                    _ => None,
                })
                .collect()),
        }
    }

    pub fn envelope_of(&self, pd_ref: &PdRef) -> Result<Envelope, StoreError> {
        let inner = self.inner.read().unwrap();
        match inner.records.get(pd_ref) {
            Some(StoredRecord::Tombstoned { envelope, .. }) => Ok(envelope.clone()),
            Some(StoredRecord::Live { .. }) => Err(StoreError::Corrupt(format!(
                "record {pd_ref} is live, not tombstoned"
            ))),
            None => Err(StoreError::UnknownRef(pd_ref.clone())),
        }
    }

    /// Every stored record, for integrity scans.
    pub fn all_records(&self, _cap: &AccessCapability) -> Vec<StoredRecord> {
        self.inner.read().unwrap().records.values().cloned().collect()
    }

    /// Structural integrity check: every live record type-checks against
    /// the catalog with a valid membrane, and every copy group is
    /// internally consistent.
    pub fn check_integrity(&self) -> Result<(), StoreError> {
        let inner = self.inner.read().unwrap();
        self.verify_membranes(&inner)?;
        let mut groups: BTreeMap<CopyGroupId, Vec<Membrane>> = BTreeMap::new();
        for record in inner.records.values() {
            if let StoredRecord::Live { membrane, .. } = record {
                groups
                    .entry(membrane.copy_group)
                    .or_default()
                    .push(membrane.clone());
            }
        }
        for (group, membranes) in groups {
            if !check_copy_consistency(&membranes)? {
                return Err(StoreError::Corrupt(format!(
                    "copy group {group} has diverged membranes"
                )));
            }
        }
        Ok(())
    }
}

fn sensitivity_from_keyword(s: &str) -> Result<Sensitivity, StoreError> {
    match s {
        "low" => Ok(Sensitivity::Low),
        "medium" => Ok(Sensitivity::Medium),
        "high" => Ok(Sensitivity::High),
        other => Err(StoreError::Corrupt(format!("unknown sensitivity `{other}`"))),
    }
}

fn check_values_subset(
    decl: &ValidatedTypeDecl,
    values: &BTreeMap<String, FieldValue>,
) -> Result<(), StoreError> {
    for (name, value) in values {
        let field = decl.field(name).ok_or_else(|| StoreError::TypeMismatch {
            type_name: decl.name.clone(),
            detail: format!("undeclared field `{name}`"),
        })?;
        if field.ty != value.kind() {
            return Err(StoreError::TypeMismatch {
                type_name: decl.name.clone(),
                detail: format!(
                    "field `{name}` expects {}, got {}",
                    field.ty.keyword(),
                    value.kind().keyword()
                ),
            });
        }
    }
    Ok(())
}

fn check_values_complete(
    decl: &ValidatedTypeDecl,
    values: &BTreeMap<String, FieldValue>,
) -> Result<(), StoreError> {
    check_values_subset(decl, values)?;
    for field in &decl.fields {
        if !values.contains_key(&field.name) {
            return Err(StoreError::TypeMismatch {
                type_name: decl.name.clone(),
                detail: format!("missing field `{}`", field.name),
            });
        }
    }
    Ok(())
}

fn check_membrane_views(
    decl: &ValidatedTypeDecl,
    membrane: &Membrane,
) -> Result<(), StoreError> {
    for grant in membrane.consents.values() {
        if let ConsentGrant::View(view) = grant {
            if decl.view(view).is_none() {
                return Err(StoreError::Membrane(MembraneError::UnknownView {
                    type_name: decl.name.clone(),
                    view: view.clone(),
                }));
            }
        }
    }
    Ok(())
}

fn read_segment_entries(path: &Path) -> Result<Vec<Vec<u8>>, StoreError> {
    let mut file = fs::File::open(path)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;
    let mut entries = Vec::new();
    let mut pos = 0usize;
    while pos < data.len() {
        if pos + 4 > data.len() {
            return Err(StoreError::Corrupt(format!(
                "truncated length prefix in {}",
                path.display()
            )));
        }
        let len = u32::from_le_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + len > data.len() {
            return Err(StoreError::Corrupt(format!(
                "truncated entry in {}",
                path.display()
            )));
        }
        entries.push(data[pos..pos + len].to_vec());
        pos += len;
    }
    Ok(entries)
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn base64_decode(text: &str) -> Result<Vec<u8>, StoreError> {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD
        .decode(text.as_bytes())
        .map_err(|e| StoreError::Corrupt(format!("bad base64 in manifest: {e}")))
}
