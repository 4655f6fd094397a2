use super::*;
use crate::membrane::ConsentGrant;
use crate::pdtype::{parse_type_file, validate};
use crate::store::ConsentTarget;

const USER_PDT: &str = include_str!("../../corpus/user.pdt");
const COMPUTE_AGE: &str = include_str!("../../corpus/compute_age.pproc");

/// 2024-06-01T00:00:00Z.
const NOW: i64 = 1_717_200_000;

struct Fixture {
    _dir: tempfile::TempDir,
    store: Store,
    audit: AuditLog,
    ps: PsCatalog,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::init(dir.path()).unwrap();
    for decl in parse_type_file(USER_PDT).unwrap() {
        store.create_table(validate(&decl, &store.type_names()).unwrap()).unwrap();
    }
    let audit = AuditLog::open(dir.path()).unwrap();
    let ps = PsCatalog::open(&store).unwrap();
    Fixture {
        _dir: dir,
        store,
        audit,
        ps,
    }
}

fn two_users() -> &'static str {
    r#"[{"subject_id": "chiraz", "name": "Chiraz", "pwd": "a", "year_of_birthdate": 1990},
        {"subject_id": "karim", "name": "Karim", "pwd": "b", "year_of_birthdate": 1984}]"#
}

#[test]
fn compute_age_registers_without_alert() {
    let f = fixture();
    let outcome = f
        .ps
        .ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW)
        .unwrap();
    assert_eq!(outcome, RegisterOutcome::Registered("compute_age".into()));
    let list = f.ps.list_processings();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0].purpose, "purpose3");
    assert_eq!(list[0].declared_view, "v_ano");
    assert_eq!(list[0].state, ProcessingState::Registered);
}

#[test]
fn missing_purpose_is_a_hard_reject() {
    let f = fixture();
    let src = "input: user all\noutput: int\n42\n";
    let err = f.ps.ps_register(&f.store, "p", src, false, NOW).unwrap_err();
    assert!(matches!(err, PsError::Lang(ProcLangError::MissingPurpose)));
    assert!(f.ps.list_processings().is_empty());
}

#[test]
fn access_outside_declared_view_raises_an_alert_until_approved() {
    let f = fixture();
    // Reads year_of_birthdate while only claiming v_name.
    let src = "purpose: purpose3\ninput: user view v_name\noutput: int\n\
               current_year() - in.year_of_birthdate\n";
    let outcome = f.ps.ps_register(&f.store, "sneaky", src, false, NOW).unwrap();
    let RegisterOutcome::Alert { id, message } = outcome else {
        panic!("expected an alert, got {outcome:?}");
    };
    assert_eq!(id, "sneaky");
    assert!(message.contains("year_of_birthdate"));
    assert_eq!(f.ps.pending_alerts().len(), 1);
    // Not runnable while pending.
    assert!(matches!(
        f.ps.ps_invoke(&f.store, &f.audit, "sneaky", Selector::All, None, false, NOW),
        Err(PsError::UnknownProcessing(_))
    ));
    // Re-run without approval: the alert stands.
    let again = f.ps.ps_register(&f.store, "sneaky", src, false, NOW).unwrap();
    assert!(matches!(again, RegisterOutcome::Alert { .. }));
    // Re-run with approval: registered, approval recorded.
    let approved = f.ps.ps_register(&f.store, "sneaky", src, true, NOW).unwrap();
    assert_eq!(approved, RegisterOutcome::Registered("sneaky".into()));
    assert!(f.ps.pending_alerts().is_empty());
    let reg = f.ps.get("sneaky").unwrap();
    assert!(reg.processing.approved);
    assert!(reg.alert.is_some());
}

#[test]
fn ps_approve_promotes_a_parked_alert() {
    let f = fixture();
    let src = "purpose: purpose1\ninput: user view v_ano\noutput: string\nin.name\n";
    let outcome = f.ps.ps_register(&f.store, "peek", src, false, NOW).unwrap();
    assert!(matches!(outcome, RegisterOutcome::Alert { .. }));
    f.ps.ps_approve(&f.store, "peek", NOW + 10).unwrap();
    let reg = f.ps.get("peek").unwrap();
    assert!(reg.processing.approved);
    assert_eq!(
        f.ps.list_processings()[0].state,
        ProcessingState::RegisteredApproved
    );
    assert!(matches!(
        f.ps.ps_approve(&f.store, "peek", NOW),
        Err(PsError::NoPendingAlert(_))
    ));
}

#[test]
fn every_catalog_entry_is_within_view_or_approved() {
    let f = fixture();
    f.ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW).unwrap();
    let src = "purpose: purpose1\ninput: user view v_ano\noutput: string\nin.name\n";
    f.ps.ps_register(&f.store, "peek", src, true, NOW).unwrap();
    for summary in f.ps.list_processings() {
        let reg = f.ps.get(&summary.id).unwrap();
        let ok = access_alert(&reg.processing, &f.store).unwrap().is_none()
            || reg.processing.approved;
        assert!(ok, "{} violates registration soundness", summary.id);
    }
}

#[test]
fn invoke_filters_by_the_consent_matrix() {
    let f = fixture();
    let cap = AccessCapability::for_pipeline();
    let report = builtin_collect(
        &f.store, &f.audit, "user", "web_form", two_users(), NOW, &cap,
    )
    .unwrap();
    f.store
        .override_consent(
            &ConsentTarget::Ref(report.refs[1].clone()),
            "purpose3",
            ConsentGrant::None,
            &cap,
        )
        .unwrap();
    f.ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW).unwrap();

    let result = f
        .ps
        .ps_invoke(&f.store, &f.audit, "compute_age", Selector::All, None, false, NOW)
        .unwrap();
    assert_eq!(result.scalars.len(), 1);
    assert_eq!(result.scalars[0].0, report.refs[0]);
    assert_eq!(result.scalars[0].1, Value::Int(34));
    assert_eq!(result.skipped, vec![(report.refs[1].clone(), "no-consent".to_string())]);
    assert!(result.pd_refs.is_empty());
}

#[test]
fn purpose2_invoke_processes_nothing_on_defaults() {
    let f = fixture();
    let cap = AccessCapability::for_pipeline();
    builtin_collect(&f.store, &f.audit, "user", "web_form", two_users(), NOW, &cap).unwrap();
    let src = "purpose: purpose2\ninput: user all\noutput: int\n42\n";
    f.ps.ps_register(&f.store, "p2", src, false, NOW).unwrap();
    let result = f
        .ps
        .ps_invoke(&f.store, &f.audit, "p2", Selector::All, None, false, NOW)
        .unwrap();
    assert!(result.scalars.is_empty());
    assert_eq!(result.skipped.len(), 2);
    assert!(result.skipped.iter().all(|(_, why)| why == "no-consent"));
}

#[test]
fn invoke_with_collection_creates_then_processes() {
    let f = fixture();
    f.ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW).unwrap();
    let result = f
        .ps
        .ps_invoke(
            &f.store,
            &f.audit,
            "compute_age",
            Selector::All,
            Some(("web_form", two_users())),
            true,
            NOW,
        )
        .unwrap();
    assert_eq!(result.collected.len(), 2);
    assert_eq!(result.scalars.len(), 2);
}

#[test]
fn unknown_processing_is_an_error() {
    let f = fixture();
    assert!(matches!(
        f.ps.ps_invoke(&f.store, &f.audit, "ghost", Selector::All, None, false, NOW),
        Err(PsError::UnknownProcessing(_))
    ));
}

#[test]
fn catalog_and_run_counter_survive_reopen() {
    let f = fixture();
    f.ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW).unwrap();
    let src = "purpose: purpose1\ninput: user view v_ano\noutput: string\nin.name\n";
    f.ps.ps_register(&f.store, "peek", src, false, NOW).unwrap();
    let r1 = f
        .ps
        .ps_invoke(&f.store, &f.audit, "compute_age", Selector::All, None, false, NOW)
        .unwrap();

    let reopened = PsCatalog::open(&f.store).unwrap();
    assert_eq!(reopened.list_processings(), f.ps.list_processings());
    let r2 = reopened
        .ps_invoke(&f.store, &f.audit, "compute_age", Selector::All, None, false, NOW)
        .unwrap();
    assert!(r2.run_id > r1.run_id);
}

#[test]
fn duplicate_registration_is_rejected() {
    let f = fixture();
    f.ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW).unwrap();
    assert!(matches!(
        f.ps.ps_register(&f.store, "compute_age", COMPUTE_AGE, false, NOW),
        Err(PsError::DuplicateProcessing(_))
    ));
}
