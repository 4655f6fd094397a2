use super::*;
use crate::audit::AuditFilter;
use crate::crypto::generate_keypair;
use crate::pdtype::{parse_type_file, validate};
use crate::pipeline::builtin_collect;
use crate::registry::PsCatalog;
use crate::store::Selector;

const PERSON_PDT: &str = include_str!("../../corpus/person.pdt");
const USER_PDT: &str = include_str!("../../corpus/user.pdt");
const COMPUTE_AGE: &str = include_str!("../../corpus/compute_age.pproc");

/// 2024-06-01T00:00:00Z.
const NOW: i64 = 1_717_200_000;

struct Fixture {
    _dir: tempfile::TempDir,
    store: Store,
    audit: AuditLog,
}

fn fixture(pdt: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::init(dir.path()).unwrap();
    for decl in parse_type_file(pdt).unwrap() {
        store.create_table(validate(&decl, &store.type_names()).unwrap()).unwrap();
    }
    let audit = AuditLog::open(dir.path()).unwrap();
    Fixture {
        _dir: dir,
        store,
        audit,
    }
}

fn cap() -> AccessCapability {
    AccessCapability::for_pipeline()
}

fn collect_chiraz(f: &Fixture) -> PdRef {
    let payload = r#"[{"subject_id": "chiraz", "first_name": "Chiraz", "last_name": "Benamor"}]"#;
    builtin_collect(&f.store, &f.audit, "person", "web_form", payload, NOW, &cap())
        .unwrap()
        .refs
        .remove(0)
}

#[test]
fn export_uses_declared_field_names_as_keys() {
    let f = fixture(PERSON_PDT);
    collect_chiraz(&f);
    let doc = export_subject(&f.store, &f.audit, "chiraz", NOW).unwrap();
    assert!(doc.contains("first_name \"Chiraz\""));
    assert!(doc.contains("last_name \"Benamor\""));
    // The failure mode the export exists to avoid: a value used as a key.
    assert!(!doc.contains("Chiraz: \"Benamor\""));
    assert!(doc.contains("records 1"));
    assert!(doc.contains("sensitivity medium"));
    assert!(doc.contains("consent marketing none"));
    assert!(doc.contains("consent research view v_name"));
}

#[test]
fn export_of_unknown_subject_is_empty() {
    let f = fixture(PERSON_PDT);
    let doc = export_subject(&f.store, &f.audit, "nobody", NOW).unwrap();
    assert!(doc.contains("records 0"));
    assert!(!doc.contains("record person:"));
}

#[test]
fn export_includes_processing_log_entries_after_an_invoke() {
    let f = fixture(USER_PDT);
    let payload = r#"[{"subject_id": "chiraz", "name": "Chiraz", "pwd": "a", "year_of_birthdate": 1990}]"#;
    builtin_collect(&f.store, &f.audit, "user", "web_form", payload, NOW, &cap()).unwrap();
    let ps = PsCatalog::open(&f.store).unwrap();
    ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW).unwrap();
    ps.ps_invoke(&f.store, &f.audit, "compute_age", Selector::All, None, false, NOW)
        .unwrap();

    let doc = export_subject(&f.store, &f.audit, "chiraz", NOW).unwrap();
    assert!(doc.contains("kind=execute"));
    assert!(doc.contains("processing=compute_age"));
    assert!(doc.contains("outcome=executed"));
    // Join oracle: every audit entry naming the subject's refs shows up.
    let refs: std::collections::BTreeSet<PdRef> = f
        .store
        .subject_records("chiraz", &AccessCapability::for_rights())
        .into_iter()
        .map(|(r, _, _)| r)
        .collect();
    for entry in f.audit.entries_for_subject("chiraz", &refs) {
        assert!(doc.contains(&format!("seq={}", entry.seq)));
    }
}

#[test]
fn forget_counts_live_records_and_is_idempotent() {
    let f = fixture(PERSON_PDT);
    let r1 = collect_chiraz(&f);
    // A copy counts as its own record.
    crate::pipeline::builtin_copy(&f.store, &f.audit, &r1, NOW, &cap()).unwrap();
    let (pk, _sk) = generate_keypair();

    let count = forget(&f.store, &f.audit, &ConsentTarget::Subject("chiraz".into()), &pk, NOW)
        .unwrap();
    assert_eq!(count, 2);
    let again = forget(&f.store, &f.audit, &ConsentTarget::Subject("chiraz".into()), &pk, NOW)
        .unwrap();
    assert_eq!(again, 0);
}

#[test]
fn forget_then_export_shows_events_but_no_values() {
    let f = fixture(PERSON_PDT);
    collect_chiraz(&f);
    let (pk, _sk) = generate_keypair();
    forget(&f.store, &f.audit, &ConsentTarget::Subject("chiraz".into()), &pk, NOW).unwrap();

    let doc = export_subject(&f.store, &f.audit, "chiraz", NOW).unwrap();
    assert!(doc.contains("records 0"));
    assert!(!doc.contains("Benamor"));
    assert!(doc.contains("kind=forget"));
}

#[test]
fn authority_recovers_the_exact_canonical_bytes() {
    let f = fixture(PERSON_PDT);
    let pd_ref = collect_chiraz(&f);
    let rights_cap = AccessCapability::for_rights();
    let before = f.store.canonical_live_record(&pd_ref, &rights_cap).unwrap();
    let (pk, sk) = generate_keypair();
    forget(&f.store, &f.audit, &ConsentTarget::Ref(pd_ref.clone()), &pk, NOW).unwrap();

    let envelope = f.store.envelope_of(&pd_ref).unwrap();
    let recovered = authority_decrypt(&envelope, &sk).unwrap();
    assert_eq!(recovered, before);

    let (_other_pk, other_sk) = generate_keypair();
    assert!(authority_decrypt(&envelope, &other_sk).is_err());
}

#[test]
fn sweep_erases_expired_records_and_audits_each() {
    let f = fixture(PERSON_PDT);
    collect_chiraz(&f);
    let (pk, _sk) = generate_keypair();
    f.store.set_authority_key(pk).unwrap();

    // Within the 2Y retention: nothing to do.
    assert_eq!(sweep(&f.store, &f.audit, NOW).unwrap(), 0);
    // Three years on: erased and audited.
    let later = NOW + 3 * 365 * 86_400;
    assert_eq!(sweep(&f.store, &f.audit, later).unwrap(), 1);
    let entries = f.audit.query(&AuditFilter {
        kind: Some(crate::audit::AuditKind::Sweep),
        ..Default::default()
    });
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].event.subject.as_deref(), Some("chiraz"));
}
