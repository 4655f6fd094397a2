//! The per-record metadata envelope and its permission algebra.
//!
//! A membrane travels with every stored record and is consulted before any
//! field of that record becomes visible: it carries the subject, origin,
//! per-purpose consents, collection time, retention period, sensitivity
//! and lineage. Permissions form the lattice `none ≤ fields(S) ≤ all`,
//! with field sets ordered by inclusion.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Months, TimeZone, Utc};
use thiserror::Error;

use crate::ids::{CopyGroupId, PdRef};
use crate::pdtype::{Duration, DurationUnit, Grant, Sensitivity, TypeDecl, ValidatedTypeDecl};

/// Consent as stored in a membrane. `View` comes from declarations and
/// subject overrides; `Fields` only appears on derived membranes, where
/// intersecting two views rarely lands on a named view again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsentGrant {
    All,
    None,
    View(String),
    Fields(BTreeSet<String>),
}

impl From<Grant> for ConsentGrant {
    fn from(g: Grant) -> ConsentGrant {
        match g {
            Grant::All => ConsentGrant::All,
            Grant::None => ConsentGrant::None,
            Grant::View(v) => ConsentGrant::View(v),
        }
    }
}

/// The resolved permission of one purpose over one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Permission {
    All,
    None,
    Fields(BTreeSet<String>),
}

impl Permission {
    /// Most-restrictive combination on the lattice none < fields < all.
    /// Field sets combine by intersection; an empty intersection collapses
    /// to `None`.
    pub fn intersect(&self, other: &Permission, all_fields: &BTreeSet<String>) -> Permission {
        let to_set = |p: &Permission| -> Option<BTreeSet<String>> {
            match p {
                Permission::All => Some(all_fields.clone()),
                Permission::None => None,
                Permission::Fields(s) => Some(s.clone()),
            }
        };
        match (to_set(self), to_set(other)) {
            (Some(a), Some(b)) => {
                let inter: BTreeSet<String> = a.intersection(&b).cloned().collect();
                if inter.is_empty() {
                    Permission::None
                } else if inter == *all_fields {
                    Permission::All
                } else {
                    Permission::Fields(inter)
                }
            }
            _ => Permission::None,
        }
    }

    /// Lattice order: `self ≤ other`.
    pub fn is_subset_of(&self, other: &Permission, all_fields: &BTreeSet<String>) -> bool {
        let as_set = |p: &Permission| -> BTreeSet<String> {
            match p {
                Permission::All => all_fields.clone(),
                Permission::None => BTreeSet::new(),
                Permission::Fields(s) => s.clone(),
            }
        };
        as_set(self).is_subset(&as_set(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembraneOrigin {
    Subject,
    Sysadmin,
    ThirdParty,
    Derived,
}

impl MembraneOrigin {
    pub fn keyword(self) -> &'static str {
        match self {
            MembraneOrigin::Subject => "subject",
            MembraneOrigin::Sysadmin => "sysadmin",
            MembraneOrigin::ThirdParty => "third_party",
            MembraneOrigin::Derived => "derived",
        }
    }
}

impl From<crate::pdtype::Origin> for MembraneOrigin {
    fn from(o: crate::pdtype::Origin) -> MembraneOrigin {
        match o {
            crate::pdtype::Origin::Subject => MembraneOrigin::Subject,
            crate::pdtype::Origin::Sysadmin => MembraneOrigin::Sysadmin,
            crate::pdtype::Origin::ThirdParty => MembraneOrigin::ThirdParty,
        }
    }
}

/// One step in a record's provenance: the record it was copied or derived
/// from, or the processing that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineageEntry {
    Record(PdRef),
    Processing(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Membrane {
    pub subject_id: String,
    pub type_name: String,
    pub origin: MembraneOrigin,
    pub consents: BTreeMap<String, ConsentGrant>,
    /// UTC seconds.
    pub collected_at: i64,
    pub ttl: Duration,
    pub sensitivity: Sensitivity,
    pub lineage: Vec<LineageEntry>,
    pub copy_group: CopyGroupId,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MembraneError {
    #[error("grant references unknown view `{view}` on type `{type_name}`")]
    UnknownView { type_name: String, view: String },
    #[error("cannot derive a membrane from zero inputs")]
    EmptyInputs,
    #[error("membranes belong to different copy groups")]
    MixedGroups,
}

/// Build the membrane a freshly collected record starts with: the type's
/// default consent, retention and sensitivity.
pub fn membrane_from_defaults(
    decl: &ValidatedTypeDecl,
    subject_id: &str,
    origin: MembraneOrigin,
    now: i64,
) -> Membrane {
    Membrane {
        subject_id: subject_id.to_string(),
        type_name: decl.name.clone(),
        origin,
        consents: decl
            .default_consent
            .iter()
            .map(|(p, g)| (p.clone(), g.clone().into()))
            .collect(),
        collected_at: now,
        ttl: decl.ttl,
        sensitivity: decl.sensitivity,
        lineage: Vec::new(),
        copy_group: CopyGroupId::fresh(),
    }
}

impl Membrane {
    /// Replace the consent for one purpose. Unknown purposes are accepted:
    /// a subject may grant or revoke ahead of a purpose being used.
    pub fn set_consent(
        &mut self,
        purpose: &str,
        grant: ConsentGrant,
        decl: &TypeDecl,
    ) -> Result<(), MembraneError> {
        if let ConsentGrant::View(view) = &grant {
            if decl.view(view).is_none() {
                return Err(MembraneError::UnknownView {
                    type_name: self.type_name.clone(),
                    view: view.clone(),
                });
            }
        }
        self.consents.insert(purpose.to_string(), grant);
        Ok(())
    }
}

/// Resolve what a purpose may see of a record. Total: unknown purposes and
/// absent consent entries resolve to `None`.
pub fn effective_view(m: &Membrane, purpose: &str, decl: &TypeDecl) -> Permission {
    match m.consents.get(purpose) {
        Option::None => Permission::None,
        Some(ConsentGrant::All) => Permission::All,
        Some(ConsentGrant::None) => Permission::None,
        Some(ConsentGrant::View(view)) => match decl.view(view) {
            Some(v) => {
                if v.members.is_empty() {
                    Permission::None
                } else {
                    Permission::Fields(v.members.clone())
                }
            }
            Option::None => Permission::None,
        },
        Some(ConsentGrant::Fields(fields)) => {
            if fields.is_empty() {
                Permission::None
            } else {
                Permission::Fields(fields.clone())
            }
        }
    }
}

/// Calendar expiry: months and years land on the same day-of-month,
/// clamped to month end.
pub fn expiry_timestamp(collected_at: i64, ttl: Duration) -> i64 {
    let start: DateTime<Utc> = Utc
        .timestamp_opt(collected_at, 0)
        .single()
        .unwrap_or_else(|| Utc.timestamp_opt(0, 0).unwrap());
    let end = match ttl.unit {
        DurationUnit::Day => start + chrono::Duration::days(ttl.magnitude as i64),
        DurationUnit::Month => start
            .checked_add_months(Months::new(ttl.magnitude))
            .unwrap_or(DateTime::<Utc>::MAX_UTC),
        DurationUnit::Year => start
            .checked_add_months(Months::new(ttl.magnitude.saturating_mul(12)))
            .unwrap_or(DateTime::<Utc>::MAX_UTC),
    };
    end.timestamp()
}

/// True iff the record's retention period has elapsed. The boundary
/// instant counts as expired.
pub fn is_expired(m: &Membrane, now: i64) -> bool {
    now >= expiry_timestamp(m.collected_at, m.ttl)
}

/// One input to membrane derivation.
pub struct DeriveInput<'a> {
    pub record: &'a PdRef,
    pub membrane: &'a Membrane,
    pub decl: &'a TypeDecl,
}

/// Build the membrane of a record generated by a processing: per purpose
/// the most-restrictive combination across inputs, the shortest remaining
/// retention, the highest sensitivity, and lineage pointing at the inputs
/// and the processing.
pub fn derive_membrane(
    inputs: &[DeriveInput<'_>],
    processing_id: &str,
    now: i64,
) -> Result<Membrane, MembraneError> {
    if inputs.is_empty() {
        return Err(MembraneError::EmptyInputs);
    }

    // A purpose absent from any input resolves to none there, so only
    // purposes present in every input can survive the combination.
    let mut purposes: BTreeSet<String> = inputs[0].membrane.consents.keys().cloned().collect();
    for input in &inputs[1..] {
        purposes.retain(|p| input.membrane.consents.contains_key(p));
    }

    let mut consents = BTreeMap::new();
    for purpose in purposes {
        let mut combined: Option<Permission> = Option::None;
        for input in inputs {
            let perm = effective_view(input.membrane, &purpose, input.decl);
            let all_fields = input.decl.field_names();
            combined = Some(match combined {
                Option::None => perm,
                Some(acc) => acc.intersect(&perm, &all_fields),
            });
        }
        let grant = match combined.unwrap_or(Permission::None) {
            Permission::All => ConsentGrant::All,
            Permission::None => ConsentGrant::None,
            Permission::Fields(fields) => ConsentGrant::Fields(fields),
        };
        consents.insert(purpose, grant);
    }

    let min_expiry = inputs
        .iter()
        .map(|i| expiry_timestamp(i.membrane.collected_at, i.membrane.ttl))
        .min()
        .unwrap();
    let remaining_secs = (min_expiry - now).max(0);
    // Remaining lifetime re-expressed in whole days from now, at least one.
    let remaining_days = ((remaining_secs + 86_399) / 86_400).max(1) as u32;

    let sensitivity = inputs
        .iter()
        .map(|i| i.membrane.sensitivity)
        .max()
        .unwrap();

    let mut subjects: Vec<String> = inputs
        .iter()
        .map(|i| i.membrane.subject_id.clone())
        .collect();
    subjects.sort();
    subjects.dedup();
    let subject_id = subjects.join("+");

    let mut lineage: Vec<LineageEntry> = inputs
        .iter()
        .map(|i| LineageEntry::Record(i.record.clone()))
        .collect();
    lineage.push(LineageEntry::Processing(processing_id.to_string()));

    Ok(Membrane {
        subject_id,
        type_name: inputs[0].membrane.type_name.clone(),
        origin: MembraneOrigin::Derived,
        consents,
        collected_at: now,
        ttl: Duration {
            magnitude: remaining_days,
            unit: DurationUnit::Day,
        },
        sensitivity,
        lineage,
        copy_group: CopyGroupId::fresh(),
    })
}

/// True iff all membranes of one copy group agree on consents, retention
/// and sensitivity.
pub fn check_copy_consistency(group: &[Membrane]) -> Result<bool, MembraneError> {
    let Some(first) = group.first() else {
        return Ok(true);
    };
    if group.iter().any(|m| m.copy_group != first.copy_group) {
        return Err(MembraneError::MixedGroups);
    }
    Ok(group.iter().all(|m| {
        m.consents == first.consents && m.ttl == first.ttl && m.sensitivity == first.sensitivity
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdtype::{parse_type_file, validate};

    fn user_decl() -> ValidatedTypeDecl {
        let decls =
            parse_type_file(include_str!("../corpus/user.pdt")).expect("corpus parses");
        validate(&decls[0], &BTreeSet::new()).expect("corpus validates")
    }

    fn ts(date: &str) -> i64 {
        DateTime::parse_from_rfc3339(&format!("{date}T00:00:00Z"))
            .unwrap()
            .timestamp()
    }

    #[test]
    fn defaults_copy_the_declared_consent() {
        let decl = user_decl();
        let m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 1000);
        assert_eq!(m.consents["purpose1"], ConsentGrant::All);
        assert_eq!(m.consents["purpose2"], ConsentGrant::None);
        assert_eq!(m.consents["purpose3"], ConsentGrant::View("v_ano".into()));
        assert_eq!(m.collected_at, 1000);
        assert!(m.lineage.is_empty());
    }

    #[test]
    fn defaults_are_deterministic_modulo_clock() {
        let decl = user_decl();
        let a = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 1000);
        let b = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 2000);
        assert_eq!(a.consents, b.consents);
        assert_eq!(a.ttl, b.ttl);
        assert_eq!(a.sensitivity, b.sensitivity);
        assert_ne!(a.collected_at, b.collected_at);
        assert_ne!(a.copy_group, b.copy_group);
    }

    #[test]
    fn empty_consent_block_denies_everything() {
        let decls = parse_type_file("type t { fields { a: int }; }").unwrap();
        let decl = validate(&decls[0], &BTreeSet::new()).unwrap();
        let m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        assert_eq!(effective_view(&m, "anything", &decl), Permission::None);
    }

    #[test]
    fn effective_view_matches_listing_defaults() {
        let decl = user_decl();
        let m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        assert_eq!(effective_view(&m, "purpose1", &decl), Permission::All);
        assert_eq!(effective_view(&m, "purpose2", &decl), Permission::None);
        assert_eq!(
            effective_view(&m, "purpose3", &decl),
            Permission::Fields(["year_of_birthdate".to_string()].into())
        );
    }

    #[test]
    fn revocation_is_last_writer_wins() {
        let decl = user_decl();
        let mut m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        m.set_consent("purpose1", ConsentGrant::None, &decl).unwrap();
        assert_eq!(effective_view(&m, "purpose1", &decl), Permission::None);
    }

    #[test]
    fn override_unknown_view_is_rejected() {
        let decl = user_decl();
        let mut m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        let err = m
            .set_consent("purpose1", ConsentGrant::View("v_missing".into()), &decl)
            .unwrap_err();
        assert!(matches!(err, MembraneError::UnknownView { .. }));
    }

    #[test]
    fn override_unknown_purpose_is_allowed() {
        let decl = user_decl();
        let mut m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        m.set_consent("future_purpose", ConsentGrant::All, &decl)
            .unwrap();
        assert_eq!(effective_view(&m, "future_purpose", &decl), Permission::All);
    }

    #[test]
    fn expiry_calendar_arithmetic() {
        let decl = user_decl();
        let mut m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        m.collected_at = ts("2023-01-01");
        assert!(is_expired(&m, ts("2024-06-01")));
        assert!(!is_expired(&m, ts("2023-12-31")));
        // Boundary instant is expired.
        assert!(is_expired(&m, ts("2024-01-01")));
        assert!(!is_expired(&m, ts("2024-01-01") - 1));
    }

    #[test]
    fn month_addition_clamps_to_month_end() {
        let jan31 = ts("2023-01-31");
        let ttl = Duration {
            magnitude: 1,
            unit: DurationUnit::Month,
        };
        assert_eq!(expiry_timestamp(jan31, ttl), ts("2023-02-28"));
        let jan31_leap = ts("2024-01-31");
        assert_eq!(expiry_timestamp(jan31_leap, ttl), ts("2024-02-29"));
    }

    #[test]
    fn expiry_is_monotone_in_now() {
        let decl = user_decl();
        let m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, ts("2023-03-15"));
        let mut seen_expired = false;
        for day in 0..800 {
            let now = ts("2023-03-15") + day * 86_400;
            let e = is_expired(&m, now);
            assert!(!seen_expired || e, "expiry must not flip back at day {day}");
            seen_expired = e;
        }
        assert!(seen_expired);
    }

    fn derive_single(m: &Membrane, decl: &TypeDecl) -> Membrane {
        let r = PdRef::fresh(&m.type_name);
        derive_membrane(
            &[DeriveInput {
                record: &r,
                membrane: m,
                decl,
            }],
            "proc1",
            m.collected_at,
        )
        .unwrap()
    }

    #[test]
    fn derive_singleton_keeps_permissions() {
        let decl = user_decl();
        let m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        let d = derive_single(&m, &decl);
        assert_eq!(d.origin, MembraneOrigin::Derived);
        for purpose in ["purpose1", "purpose2", "purpose3"] {
            assert_eq!(
                effective_view(&d, purpose, &decl),
                effective_view(&m, purpose, &decl),
                "purpose {purpose}"
            );
        }
        assert_eq!(d.lineage.len(), 2);
    }

    #[test]
    fn derive_empty_inputs_is_an_error() {
        assert_eq!(
            derive_membrane(&[], "p", 0).unwrap_err(),
            MembraneError::EmptyInputs
        );
    }

    #[test]
    fn derive_takes_max_sensitivity() {
        let decl = user_decl();
        let mut a = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        let mut b = membrane_from_defaults(&decl, "s2", MembraneOrigin::Subject, 0);
        a.sensitivity = Sensitivity::Low;
        b.sensitivity = Sensitivity::High;
        let ra = PdRef::fresh("user");
        let rb = PdRef::fresh("user");
        let d = derive_membrane(
            &[
                DeriveInput {
                    record: &ra,
                    membrane: &a,
                    decl: &decl,
                },
                DeriveInput {
                    record: &rb,
                    membrane: &b,
                    decl: &decl,
                },
            ],
            "p",
            0,
        )
        .unwrap();
        assert_eq!(d.sensitivity, Sensitivity::High);
    }

    /// Brute-force oracle over all grant-pair combinations: the derived
    /// permission equals the lattice meet computed by explicit field-set
    /// enumeration.
    #[test]
    fn derive_pairwise_combination_oracle() {
        let decl = user_decl();
        let all_fields = decl.field_names();
        let grants: Vec<ConsentGrant> = vec![
            ConsentGrant::All,
            ConsentGrant::None,
            ConsentGrant::View("v_ano".into()),
            ConsentGrant::View("v_name".into()),
            ConsentGrant::Fields(["name".to_string(), "pwd".to_string()].into()),
        ];
        for ga in &grants {
            for gb in &grants {
                let mut a = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
                let mut b = membrane_from_defaults(&decl, "s2", MembraneOrigin::Subject, 0);
                a.consents.insert("p".into(), ga.clone());
                b.consents.insert("p".into(), gb.clone());
                let ra = PdRef::fresh("user");
                let rb = PdRef::fresh("user");
                let d = derive_membrane(
                    &[
                        DeriveInput {
                            record: &ra,
                            membrane: &a,
                            decl: &decl,
                        },
                        DeriveInput {
                            record: &rb,
                            membrane: &b,
                            decl: &decl,
                        },
                    ],
                    "p",
                    0,
                )
                .unwrap();
                let got = effective_view(&d, "p", &decl);

                // Oracle: resolve each grant to a field set, intersect.
                let resolve = |g: &ConsentGrant| -> BTreeSet<String> {
                    match g {
                        ConsentGrant::All => all_fields.clone(),
                        ConsentGrant::None => BTreeSet::new(),
                        ConsentGrant::View(v) => decl.view(v).unwrap().members.clone(),
                        ConsentGrant::Fields(s) => s.clone(),
                    }
                };
                let expect_set: BTreeSet<String> =
                    resolve(ga).intersection(&resolve(gb)).cloned().collect();
                let expected = if expect_set.is_empty() {
                    Permission::None
                } else if expect_set == all_fields {
                    Permission::All
                } else {
                    Permission::Fields(expect_set)
                };
                assert_eq!(got, expected, "combining {ga:?} with {gb:?}");

                // Derivation restrictiveness against both inputs.
                assert!(got.is_subset_of(&effective_view(&a, "p", &decl), &all_fields));
                assert!(got.is_subset_of(&effective_view(&b, "p", &decl), &all_fields));
            }
        }
    }

    #[test]
    fn derive_all_and_fields_yields_fields() {
        let decl = user_decl();
        let mut a = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        let mut b = membrane_from_defaults(&decl, "s2", MembraneOrigin::Subject, 0);
        a.consents.insert("p".into(), ConsentGrant::All);
        b.consents.insert(
            "p".into(),
            ConsentGrant::Fields(["name".to_string()].into()),
        );
        let ra = PdRef::fresh("user");
        let rb = PdRef::fresh("user");
        let d = derive_membrane(
            &[
                DeriveInput {
                    record: &ra,
                    membrane: &a,
                    decl: &decl,
                },
                DeriveInput {
                    record: &rb,
                    membrane: &b,
                    decl: &decl,
                },
            ],
            "p",
            0,
        )
        .unwrap();
        assert_eq!(
            effective_view(&d, "p", &decl),
            Permission::Fields(["name".to_string()].into())
        );
    }

    #[test]
    fn derive_ttl_is_min_remaining() {
        let decl = user_decl();
        let t0 = ts("2023-01-01");
        let mut a = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, t0);
        let mut b = membrane_from_defaults(&decl, "s2", MembraneOrigin::Subject, t0);
        a.ttl = Duration {
            magnitude: 10,
            unit: DurationUnit::Day,
        };
        b.ttl = Duration {
            magnitude: 1,
            unit: DurationUnit::Year,
        };
        let now = t0 + 4 * 86_400;
        let ra = PdRef::fresh("user");
        let rb = PdRef::fresh("user");
        let d = derive_membrane(
            &[
                DeriveInput {
                    record: &ra,
                    membrane: &a,
                    decl: &decl,
                },
                DeriveInput {
                    record: &rb,
                    membrane: &b,
                    decl: &decl,
                },
            ],
            "p",
            now,
        )
        .unwrap();
        assert_eq!(
            d.ttl,
            Duration {
                magnitude: 6,
                unit: DurationUnit::Day
            }
        );
        // The derived record never outlives its shortest-lived input.
        assert!(expiry_timestamp(d.collected_at, d.ttl) <= expiry_timestamp(t0, a.ttl));
    }

    #[test]
    fn copy_consistency_detects_drift() {
        let decl = user_decl();
        let m = membrane_from_defaults(&decl, "s1", MembraneOrigin::Subject, 0);
        let copy = m.clone();
        assert!(check_copy_consistency(&[m.clone(), copy.clone()]).unwrap());

        let mut desynced = copy;
        desynced
            .set_consent("purpose1", ConsentGrant::None, &decl)
            .unwrap();
        assert!(!check_copy_consistency(&[m.clone(), desynced]).unwrap());

        let mut other = m.clone();
        other.copy_group = CopyGroupId::fresh();
        assert_eq!(
            check_copy_consistency(&[m, other]).unwrap_err(),
            MembraneError::MixedGroups
        );
    }
}
