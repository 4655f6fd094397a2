//! The personal-data type declaration language.
//!
//! A `.pdt` file declares one or more record types together with their
//! default membrane: fields, named views (the unit of data minimization),
//! default consent per purpose, collection sources, origin, retention
//! period and sensitivity.

mod parse;
mod print;

pub use parse::{parse_duration, parse_type_file};
pub use print::canonical_print;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

/// Scalar field types. No nested or record fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    String,
    Int,
    Float,
    Bool,
    Date,
}

impl ScalarType {
    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::String => "string",
            ScalarType::Int => "int",
            ScalarType::Float => "float",
            ScalarType::Bool => "bool",
            ScalarType::Date => "date",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub ty: ScalarType,
}

/// A named subset of a type's fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewDecl {
    pub name: String,
    pub members: BTreeSet<String>,
}

/// A consent grant as written in a type declaration: full access, no
/// access, or access restricted to a named view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grant {
    All,
    None,
    View(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationUnit {
    Day,
    Month,
    Year,
}

impl DurationUnit {
    pub fn letter(self) -> char {
        match self {
            DurationUnit::Day => 'D',
            DurationUnit::Month => 'M',
            DurationUnit::Year => 'Y',
        }
    }
}

/// A calendar retention period, e.g. `1Y` or `30D`. Magnitude is always
/// at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Duration {
    pub magnitude: u32,
    pub unit: DurationUnit,
}

impl std::fmt::Display for Duration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.magnitude, self.unit.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Subject,
    Sysadmin,
    ThirdParty,
}

impl Origin {
    pub fn keyword(self) -> &'static str {
        match self {
            Origin::Subject => "subject",
            Origin::Sysadmin => "sysadmin",
            Origin::ThirdParty => "third_party",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sensitivity {
    Low,
    Medium,
    High,
}

impl Sensitivity {
    pub fn keyword(self) -> &'static str {
        match self {
            Sensitivity::Low => "low",
            Sensitivity::Medium => "medium",
            Sensitivity::High => "high",
        }
    }

    pub const ALL: [Sensitivity; 3] = [Sensitivity::Low, Sensitivity::Medium, Sensitivity::High];
}

/// A parsed type declaration. Field order is declaration order; views,
/// consent entries and collection sources are kept sorted by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDecl {
    pub name: String,
    pub fields: Vec<FieldDecl>,
    pub views: Vec<ViewDecl>,
    pub default_consent: BTreeMap<String, Grant>,
    pub collection: BTreeMap<String, String>,
    pub origin: Origin,
    pub ttl: Duration,
    pub sensitivity: Sensitivity,
}

impl TypeDecl {
    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_names(&self) -> BTreeSet<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    pub fn view(&self, name: &str) -> Option<&ViewDecl> {
        self.views.iter().find(|v| v.name == name)
    }
}

/// A type declaration whose cross-references have been checked: every
/// view member names a declared field and every consent grant names a
/// declared view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedTypeDecl(TypeDecl);

impl ValidatedTypeDecl {
    pub fn decl(&self) -> &TypeDecl {
        &self.0
    }
}

impl std::ops::Deref for ValidatedTypeDecl {
    type Target = TypeDecl;

    fn deref(&self) -> &TypeDecl {
        &self.0
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PdTypeError {
    #[error("syntax error at line {line}, column {col}: expected {expected}, found {found}")]
    Syntax {
        line: u32,
        col: u32,
        expected: String,
        found: String,
    },
    #[error("duplicate {kind} name `{name}` at line {line}")]
    DuplicateName { kind: &'static str, name: String, line: u32 },
    #[error("view `{view}` references unknown field `{field}`")]
    UnknownField { view: String, field: String },
    #[error("consent for purpose `{purpose}` references unknown view `{view}`")]
    UnknownView { purpose: String, view: String },
    #[error("type `{0}` already exists")]
    DuplicateType(String),
}

/// Check all cross-references of a parsed declaration against itself and
/// the set of already-cataloged type names.
pub fn validate(
    decl: &TypeDecl,
    known_types: &BTreeSet<String>,
) -> Result<ValidatedTypeDecl, PdTypeError> {
    if known_types.contains(&decl.name) {
        return Err(PdTypeError::DuplicateType(decl.name.clone()));
    }
    let fields = decl.field_names();
    for view in &decl.views {
        for member in &view.members {
            if !fields.contains(member) {
                return Err(PdTypeError::UnknownField {
                    view: view.name.clone(),
                    field: member.clone(),
                });
            }
        }
    }
    for (purpose, grant) in &decl.default_consent {
        if let Grant::View(view) = grant {
            if decl.view(view).is_none() {
                return Err(PdTypeError::UnknownView {
                    purpose: purpose.clone(),
                    view: view.clone(),
                });
            }
        }
    }
    Ok(ValidatedTypeDecl(decl.clone()))
}

#[cfg(test)]
mod tests;
