use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;

pub(crate) const USER_PDT: &str = include_str!("../../corpus/user.pdt");

fn parse_one(text: &str) -> TypeDecl {
    let mut decls = parse_type_file(text).unwrap();
    assert_eq!(decls.len(), 1);
    decls.pop().unwrap()
}

#[test]
fn parses_user_corpus() {
    let decl = parse_one(USER_PDT);
    assert_eq!(decl.name, "user");
    assert_eq!(decl.fields.len(), 3);
    assert_eq!(decl.views.len(), 2);
    assert_eq!(decl.default_consent.len(), 3);
    assert_eq!(decl.collection.len(), 2);
    assert_eq!(decl.origin, Origin::Subject);
    assert_eq!(
        decl.ttl,
        Duration {
            magnitude: 1,
            unit: DurationUnit::Year
        }
    );
    assert_eq!(decl.sensitivity, Sensitivity::High);
    assert_eq!(decl.default_consent["purpose1"], Grant::All);
    assert_eq!(decl.default_consent["purpose2"], Grant::None);
    assert_eq!(
        decl.default_consent["purpose3"],
        Grant::View("v_ano".into())
    );
    assert_eq!(decl.collection["web_form"], "user_form.html");
}

#[test]
fn minimal_declaration_gets_defaults() {
    let decl = parse_one("type t { fields { a: int }; }");
    assert_eq!(decl.fields.len(), 1);
    assert!(decl.views.is_empty());
    assert!(decl.default_consent.is_empty());
    assert!(decl.collection.is_empty());
    assert_eq!(decl.origin, Origin::Subject);
    assert_eq!(decl.sensitivity, Sensitivity::High);
}

#[test]
fn rejects_sensitivity_typo() {
    let text = "type t { fields { a: int }; sensitivity: hight; }";
    assert!(matches!(
        parse_type_file(text),
        Err(PdTypeError::Syntax { .. })
    ));
}

#[test]
fn rejects_duplicate_field() {
    let text = "type t { fields { a: int, a: string }; }";
    assert!(matches!(
        parse_type_file(text),
        Err(PdTypeError::DuplicateName { kind: "field", .. })
    ));
}

#[test]
fn rejects_trailing_garbage() {
    let text = "type t { fields { a: int }; } garbage";
    assert!(matches!(
        parse_type_file(text),
        Err(PdTypeError::Syntax { .. })
    ));
}

#[test]
fn duration_parsing() {
    assert_eq!(
        parse_duration("1Y").unwrap(),
        Duration {
            magnitude: 1,
            unit: DurationUnit::Year
        }
    );
    assert_eq!(
        parse_duration("30D").unwrap(),
        Duration {
            magnitude: 30,
            unit: DurationUnit::Day
        }
    );
    assert!(parse_duration("0M").is_err());
    assert!(parse_duration("-1Y").is_err());
    assert!(parse_duration("1W").is_err());
    assert!(parse_duration("Y").is_err());
}

#[test]
fn validate_catches_unknown_view_member() {
    // The uncorrected corpus shape: view names a field that is not declared.
    let text = "type user { fields { name: string }; view v_ano { age }; }";
    let decl = parse_one(text);
    let err = validate(&decl, &BTreeSet::new()).unwrap_err();
    assert_eq!(
        err,
        PdTypeError::UnknownField {
            view: "v_ano".into(),
            field: "age".into()
        }
    );
}

#[test]
fn validate_catches_dangling_consent_view() {
    let text = "type t { fields { a: int }; consent { p: v_missing }; }";
    let decl = parse_one(text);
    let err = validate(&decl, &BTreeSet::new()).unwrap_err();
    assert_eq!(
        err,
        PdTypeError::UnknownView {
            purpose: "p".into(),
            view: "v_missing".into()
        }
    );
}

#[test]
fn validate_rejects_duplicate_type() {
    let decl = parse_one("type t { fields { a: int }; }");
    let mut known = BTreeSet::new();
    known.insert("t".to_string());
    assert_eq!(
        validate(&decl, &known).unwrap_err(),
        PdTypeError::DuplicateType("t".into())
    );
}

#[test]
fn validate_is_pure() {
    let decl = parse_one(USER_PDT);
    let a = validate(&decl, &BTreeSet::new()).unwrap();
    let b = validate(&decl, &BTreeSet::new()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corpus_round_trips() {
    let decl = parse_one(USER_PDT);
    let printed = canonical_print(&decl);
    assert_eq!(parse_one(&printed), decl);
}

#[test]
fn canonical_print_is_deterministic() {
    let a = parse_one(USER_PDT);
    let b = parse_one(&canonical_print(&a));
    assert_eq!(canonical_print(&a), canonical_print(&b));
}

// ---- generator for valid declarations ----

const RESERVED: &[&str] = &[
    "type", "fields", "view", "consent", "collection", "origin", "age", "sensitivity", "all",
    "none",
];

pub(crate) fn ident_strategy() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}".prop_filter("reserved word", |s| !RESERVED.contains(&s.as_str()))
}

pub(crate) fn arb_type_decl() -> impl Strategy<Value = TypeDecl> {
    let scalar = prop_oneof![
        Just(ScalarType::String),
        Just(ScalarType::Int),
        Just(ScalarType::Float),
        Just(ScalarType::Bool),
        Just(ScalarType::Date),
    ];
    (
        ident_strategy(),
        proptest::collection::btree_map(ident_strategy(), scalar, 1..6),
    )
        .prop_flat_map(|(name, field_map)| {
            let fields: Vec<FieldDecl> = field_map
                .into_iter()
                .map(|(name, ty)| FieldDecl { name, ty })
                .collect();
            let field_names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();
            let view = (
                ident_strategy(),
                proptest::sample::subsequence(field_names.clone(), 1..=field_names.len()),
            );
            let views = proptest::collection::btree_map(
                ident_strategy(),
                view.prop_map(|(_, members)| members.into_iter().collect::<BTreeSet<_>>()),
                0..4,
            );
            (Just((name, fields)), views)
        })
        .prop_flat_map(|((name, fields), view_map)| {
            let views: Vec<ViewDecl> = view_map
                .into_iter()
                .map(|(name, members)| ViewDecl { name, members })
                .collect();
            let view_names: Vec<String> = views.iter().map(|v| v.name.clone()).collect();
            let grant = if view_names.is_empty() {
                prop_oneof![Just(Grant::All), Just(Grant::None)].boxed()
            } else {
                prop_oneof![
                    Just(Grant::All),
                    Just(Grant::None),
                    proptest::sample::select(view_names).prop_map(Grant::View),
                ]
                .boxed()
            };
            let consent = proptest::collection::btree_map(ident_strategy(), grant, 0..4);
            let collection = proptest::collection::btree_map(
                ident_strategy(),
                "[a-z][a-z0-9_./-]{0,12}",
                0..3,
            );
            (
                Just((name, fields, views)),
                consent,
                collection,
                prop_oneof![
                    Just(Origin::Subject),
                    Just(Origin::Sysadmin),
                    Just(Origin::ThirdParty)
                ],
                (1u32..100, prop_oneof![
                    Just(DurationUnit::Day),
                    Just(DurationUnit::Month),
                    Just(DurationUnit::Year)
                ]),
                prop_oneof![
                    Just(Sensitivity::Low),
                    Just(Sensitivity::Medium),
                    Just(Sensitivity::High)
                ],
            )
        })
        .prop_map(
            |((name, fields, views), consent, collection, origin, (mag, unit), sensitivity)| {
                // Purpose names may collide with field/view names; consent keys
                // stay as generated. Grants already reference real views.
                TypeDecl {
                    name,
                    fields,
                    views,
                    default_consent: consent
                        .into_iter()
                        .collect::<BTreeMap<String, Grant>>(),
                    collection,
                    origin,
                    ttl: Duration {
                        magnitude: mag,
                        unit,
                    },
                    sensitivity,
                }
            },
        )
}

proptest! {
    #[test]
    fn round_trip_property(decl in arb_type_decl()) {
        let printed = canonical_print(&decl);
        let parsed = parse_type_file(&printed).unwrap();
        prop_assert_eq!(parsed.len(), 1);
        prop_assert_eq!(&parsed[0], &decl);
    }

    #[test]
    fn fuzzed_mutations_never_panic(decl in arb_type_decl(), idx in 0usize..4096, byte in 0u8..128) {
        let mut text = canonical_print(&decl).into_bytes();
        let i = idx % text.len();
        text[i] = byte;
        if let Ok(text) = String::from_utf8(text) {
            // Any outcome is fine as long as it is a Result, not a panic.
            let _ = parse_type_file(&text);
        }
    }
}
