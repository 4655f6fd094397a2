//! Canonical record encoding.
//!
//! One record encodes to UTF-8 text with a fixed line order: header,
//! membrane, consent lines sorted by purpose, field lines sorted by field
//! name. The same bytes are written to segment files, sealed into erasure
//! envelopes, and compared in golden tests — the layout below is frozen.
//!
//! ```text
//! record v1
//! ref: user:00..ff                      (type name + 32 hex digits)
//! state: live                           (or `tombstoned`)
//! subject: "s1"                         (JSON string)
//! origin: subject
//! collected_at: 1672531200              (UTC seconds)
//! ttl: 1Y
//! sensitivity: high
//! copy_group: 00..ff                    (32 hex digits)
//! lineage: -                            (or `ref user:..;proc "name"`)
//! consent purpose1: all                 (`none`, `view v`, `fields a,b`)
//! field name: str "Chiraz"              (`int`, `float`, `bool`, `date`)
//! ```
//!
//! A tombstoned record keeps only `record`/`ref`/`state` and a single
//! `envelope:` line.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::crypto::Envelope;
use crate::ids::{CopyGroupId, PdRef};
use crate::membrane::{ConsentGrant, LineageEntry, Membrane, MembraneOrigin};
use crate::pdtype::{Duration, DurationUnit, ScalarType, Sensitivity};

/// A scalar field value.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Str(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Date(NaiveDate),
}

impl FieldValue {
    pub fn kind(&self) -> ScalarType {
        match self {
            FieldValue::Str(_) => ScalarType::String,
            FieldValue::Int(_) => ScalarType::Int,
            FieldValue::Float(_) => ScalarType::Float,
            FieldValue::Bool(_) => ScalarType::Bool,
            FieldValue::Date(_) => ScalarType::Date,
        }
    }

    fn encode(&self) -> String {
        match self {
            FieldValue::Str(s) => format!("str {}", serde_json::to_string(s).unwrap()),
            FieldValue::Int(i) => format!("int {i}"),
            FieldValue::Float(f) => format!("float {f:?}"),
            FieldValue::Bool(b) => format!("bool {b}"),
            FieldValue::Date(d) => format!("date {d}"),
        }
    }

    fn decode(text: &str) -> Result<FieldValue, CodecError> {
        let (kind, rest) = text
            .split_once(' ')
            .ok_or_else(|| CodecError(format!("malformed field value `{text}`")))?;
        let err = |e: &dyn std::fmt::Display| CodecError(format!("bad {kind} value: {e}"));
        match kind {
            "str" => serde_json::from_str(rest)
                .map(FieldValue::Str)
                .map_err(|e| err(&e)),
            "int" => rest.parse().map(FieldValue::Int).map_err(|e| err(&e)),
            "float" => rest.parse().map(FieldValue::Float).map_err(|e| err(&e)),
            "bool" => rest.parse().map(FieldValue::Bool).map_err(|e| err(&e)),
            "date" => rest.parse().map(FieldValue::Date).map_err(|e| err(&e)),
            other => Err(CodecError(format!("unknown value kind `{other}`"))),
        }
    }
}

/// A record as it exists in the store: either live with values and a
/// membrane, or a ciphertext-only tombstone. A live record without a
/// membrane is unrepresentable.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredRecord {
    Live {
        pd_ref: PdRef,
        values: BTreeMap<String, FieldValue>,
        membrane: Membrane,
    },
    Tombstoned {
        pd_ref: PdRef,
        envelope: Envelope,
    },
}

impl StoredRecord {
    pub fn pd_ref(&self) -> &PdRef {
        match self {
            StoredRecord::Live { pd_ref, .. } => pd_ref,
            StoredRecord::Tombstoned { pd_ref, .. } => pd_ref,
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self, StoredRecord::Live { .. })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("corrupt record encoding: {0}")]
pub struct CodecError(pub String);

fn encode_grant(grant: &ConsentGrant) -> String {
    match grant {
        ConsentGrant::All => "all".into(),
        ConsentGrant::None => "none".into(),
        ConsentGrant::View(v) => format!("view {v}"),
        ConsentGrant::Fields(fields) => {
            format!("fields {}", fields.iter().cloned().collect::<Vec<_>>().join(","))
        }
    }
}

fn decode_grant(text: &str) -> Result<ConsentGrant, CodecError> {
    match text {
        "all" => Ok(ConsentGrant::All),
        "none" => Ok(ConsentGrant::None),
        _ => {
            if let Some(v) = text.strip_prefix("view ") {
                Ok(ConsentGrant::View(v.to_string()))
            } else if let Some(fields) = text.strip_prefix("fields ") {
                Ok(ConsentGrant::Fields(
                    fields.split(',').map(str::to_string).collect(),
                ))
            } else {
                Err(CodecError(format!("malformed grant `{text}`")))
            }
        }
    }
}

fn encode_lineage(lineage: &[LineageEntry]) -> String {
    if lineage.is_empty() {
        return "-".into();
    }
    lineage
        .iter()
        .map(|entry| match entry {
            LineageEntry::Record(r) => format!("ref {r}"),
            LineageEntry::Processing(p) => {
                format!("proc {}", serde_json::to_string(p).unwrap())
            }
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_lineage(text: &str) -> Result<Vec<LineageEntry>, CodecError> {
    if text == "-" {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|part| {
            if let Some(r) = part.strip_prefix("ref ") {
                r.parse().map(LineageEntry::Record).map_err(CodecError)
            } else if let Some(p) = part.strip_prefix("proc ") {
                serde_json::from_str(p)
                    .map(LineageEntry::Processing)
                    .map_err(|e| CodecError(e.to_string()))
            } else {
                Err(CodecError(format!("malformed lineage entry `{part}`")))
            }
        })
        .collect()
}

pub fn encode_record(record: &StoredRecord) -> Vec<u8> {
    let mut out = String::from("record v1\n");
    match record {
        StoredRecord::Live {
            pd_ref,
            values,
            membrane,
        } => {
            out.push_str(&format!("ref: {pd_ref}\n"));
            out.push_str("state: live\n");
            out.push_str(&format!(
                "subject: {}\n",
                serde_json::to_string(&membrane.subject_id).unwrap()
            ));
            out.push_str(&format!("origin: {}\n", membrane.origin.keyword()));
            out.push_str(&format!("collected_at: {}\n", membrane.collected_at));
            out.push_str(&format!("ttl: {}\n", membrane.ttl));
            out.push_str(&format!(
                "sensitivity: {}\n",
                membrane.sensitivity.keyword()
            ));
            out.push_str(&format!("copy_group: {}\n", membrane.copy_group));
            out.push_str(&format!("lineage: {}\n", encode_lineage(&membrane.lineage)));
            for (purpose, grant) in &membrane.consents {
                out.push_str(&format!("consent {purpose}: {}\n", encode_grant(grant)));
            }
            for (name, value) in values {
                out.push_str(&format!("field {name}: {}\n", value.encode()));
            }
        }
        StoredRecord::Tombstoned { pd_ref, envelope } => {
            out.push_str(&format!("ref: {pd_ref}\n"));
            out.push_str("state: tombstoned\n");
            out.push_str(&format!("envelope: {}\n", envelope.encode()));
        }
    }
    out.into_bytes()
}

struct Lines<'a> {
    lines: std::str::Lines<'a>,
    peeked: Option<&'a str>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<&'a str> {
        self.peeked.take().or_else(|| self.lines.next())
    }

    fn peek(&mut self) -> Option<&'a str> {
        if self.peeked.is_none() {
            self.peeked = self.lines.next();
        }
        self.peeked
    }

    fn expect_prefixed(&mut self, prefix: &str) -> Result<&'a str, CodecError> {
        let line = self
            .next()
            .ok_or_else(|| CodecError(format!("missing `{prefix}` line")))?;
        line.strip_prefix(prefix)
            .ok_or_else(|| CodecError(format!("expected `{prefix}`, got `{line}`")))
    }
}

pub fn decode_record(bytes: &[u8]) -> Result<StoredRecord, CodecError> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| CodecError(format!("not UTF-8: {e}")))?;
    let mut lines = Lines {
        lines: text.lines(),
        peeked: None,
    };

    let header = lines.next().unwrap_or_default();
    if header != "record v1" {
        return Err(CodecError(format!("bad header `{header}`")));
    }
    let pd_ref: PdRef = lines.expect_prefixed("ref: ")?.parse().map_err(CodecError)?;
    let state = lines.expect_prefixed("state: ")?;
    match state {
        "tombstoned" => {
            let envelope = Envelope::decode(lines.expect_prefixed("envelope: ")?)
                .map_err(|e| CodecError(e.to_string()))?;
            Ok(StoredRecord::Tombstoned { pd_ref, envelope })
        }
        "live" => {
            let subject_id: String = serde_json::from_str(lines.expect_prefixed("subject: ")?)
                .map_err(|e| CodecError(e.to_string()))?;
            let origin = match lines.expect_prefixed("origin: ")? {
                "subject" => MembraneOrigin::Subject,
                "sysadmin" => MembraneOrigin::Sysadmin,
                "third_party" => MembraneOrigin::ThirdParty,
                "derived" => MembraneOrigin::Derived,
                other => return Err(CodecError(format!("unknown origin `{other}`"))),
            };
            let collected_at: i64 = lines
                .expect_prefixed("collected_at: ")?
                .parse()
                .map_err(|e| CodecError(format!("bad collected_at: {e}")))?;
            let ttl = decode_ttl(lines.expect_prefixed("ttl: ")?)?;
            let sensitivity = match lines.expect_prefixed("sensitivity: ")? {
                "low" => Sensitivity::Low,
                "medium" => Sensitivity::Medium,
                "high" => Sensitivity::High,
                other => return Err(CodecError(format!("unknown sensitivity `{other}`"))),
            };
            let copy_group: CopyGroupId = lines
                .expect_prefixed("copy_group: ")?
                .parse()
                .map_err(CodecError)?;
            let lineage = decode_lineage(lines.expect_prefixed("lineage: ")?)?;

            let mut consents = BTreeMap::new();
            while let Some(line) = lines.peek() {
                let Some(rest) = line.strip_prefix("consent ") else {
                    break;
                };
                lines.next();
                let (purpose, grant) = rest
                    .split_once(": ")
                    .ok_or_else(|| CodecError(format!("malformed consent line `{line}`")))?;
                consents.insert(purpose.to_string(), decode_grant(grant)?);
            }

            let mut values = BTreeMap::new();
            while let Some(line) = lines.next() {
                let rest = line
                    .strip_prefix("field ")
                    .ok_or_else(|| CodecError(format!("unexpected line `{line}`")))?;
                let (name, value) = rest
                    .split_once(": ")
                    .ok_or_else(|| CodecError(format!("malformed field line `{line}`")))?;
                values.insert(name.to_string(), FieldValue::decode(value)?);
            }

            let membrane = Membrane {
                subject_id,
                type_name: pd_ref.type_name.clone(),
                origin,
                consents,
                collected_at,
                ttl,
                sensitivity,
                lineage,
                copy_group,
            };
            Ok(StoredRecord::Live {
                pd_ref,
                values,
                membrane,
            })
        }
        other => Err(CodecError(format!("unknown state `{other}`"))),
    }
}

fn decode_ttl(text: &str) -> Result<Duration, CodecError> {
    let (digits, unit) = text.split_at(text.len().saturating_sub(1));
    let unit = match unit {
        "D" => DurationUnit::Day,
        "M" => DurationUnit::Month,
        "Y" => DurationUnit::Year,
        _ => return Err(CodecError(format!("bad ttl `{text}`"))),
    };
    let magnitude = digits
        .parse()
        .map_err(|e| CodecError(format!("bad ttl `{text}`: {e}")))?;
    Ok(Duration { magnitude, unit })
}
