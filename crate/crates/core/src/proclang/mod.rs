//! The processing implementation language.
//!
//! Read-only processing bodies are written in a small expression language
//! instead of arbitrary native code, so the set of fields an
//! implementation can touch is decidable before it ever runs. The
//! language has no file, network or host operations at all; its only
//! inputs are the minimized record and an injected clock, its only
//! outputs a value or a declared fault.

mod eval;
mod parse;

pub use eval::{evaluate, evaluate_traced, EvalError, Value};
pub use parse::parse_processing;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::pdtype::ScalarType;

/// What the implementation claims to need of its input type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeclaredView {
    All,
    View(String),
}

/// What a processing produces: a plain scalar returned by value, or
/// records of a cataloged type that are stored and returned as refs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputKind {
    Scalar(ScalarType),
    Pd(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    /// `in.<field>` — faults if the field was minimized away.
    Input(String),
    /// `has(<field>)` — presence test for minimized inputs.
    Has(String),
    CurrentYear,
    /// `fail("message")` — declared per-record failure.
    Fail(String),
    Var(String),
    Let {
        name: String,
        value: Box<Expr>,
        body: Box<Expr>,
    },
    If {
        cond: Box<Expr>,
        then: Box<Expr>,
        els: Box<Expr>,
    },
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// `new <type> { field: expr, ... }`
    New {
        type_name: String,
        fields: Vec<(String, Expr)>,
    },
}

/// A parsed processing: one purpose and its implementation, plus the
/// statically computed field-access set.
#[derive(Debug, Clone, PartialEq)]
pub struct Processing {
    pub name: String,
    pub purpose: String,
    pub input_type: String,
    pub declared_view: DeclaredView,
    pub output: OutputKind,
    pub body: Expr,
    pub accessed: BTreeSet<String>,
    pub approved: bool,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProcLangError {
    #[error("syntax error at line {line}: expected {expected}, found {found}")]
    Syntax {
        line: u32,
        expected: String,
        found: String,
    },
    #[error("processing has no purpose declaration")]
    MissingPurpose,
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("unknown field `{field}` on type `{type_name}`")]
    UnknownField { type_name: String, field: String },
    #[error("unknown view `{view}` on type `{type_name}`")]
    UnknownView { type_name: String, view: String },
}

/// Every field the body can read on any path: all `in.<f>` and `has(f)`
/// occurrences across all branches. A superset of any dynamic trace.
pub fn static_field_analysis(body: &Expr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_fields(body, &mut out);
    out
}

fn collect_fields(expr: &Expr, out: &mut BTreeSet<String>) {
    match expr {
        Expr::Input(f) | Expr::Has(f) => {
            out.insert(f.clone());
        }
        Expr::Let { value, body, .. } => {
            collect_fields(value, out);
            collect_fields(body, out);
        }
        Expr::If { cond, then, els } => {
            collect_fields(cond, out);
            collect_fields(then, out);
            collect_fields(els, out);
        }
        Expr::Neg(e) | Expr::Not(e) => collect_fields(e, out),
        Expr::Binary(_, a, b) => {
            collect_fields(a, out);
            collect_fields(b, out);
        }
        Expr::New { fields, .. } => {
            for (_, e) in fields {
                collect_fields(e, out);
            }
        }
        Expr::Int(_)
        | Expr::Float(_)
        | Expr::Str(_)
        | Expr::Bool(_)
        | Expr::CurrentYear
        | Expr::Fail(_)
        | Expr::Var(_) => {}
    }
}
