//! Evaluator. Deterministic given (body, minimized input, clock); every
//! failure mode is a declared fault that the pipeline maps to a
//! per-record skip.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{BinOp, Expr, Processing};
use crate::store::encoding::FieldValue;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Date(chrono::NaiveDate),
    Record(String, BTreeMap<String, Value>),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::Bool(_) => "bool",
            Value::Date(_) => "date",
            Value::Record(..) => "record",
        }
    }
}

impl From<FieldValue> for Value {
    fn from(v: FieldValue) -> Value {
        match v {
            FieldValue::Str(s) => Value::Str(s),
            FieldValue::Int(i) => Value::Int(i),
            FieldValue::Float(f) => Value::Float(f),
            FieldValue::Bool(b) => Value::Bool(b),
            FieldValue::Date(d) => Value::Date(d),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("read of field `{0}` which is not in the minimized input")]
    AbsentFieldRead(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("type fault: {0}")]
    TypeFault(String),
    #[error("processing failed: {0}")]
    Fail(String),
    #[error("unbound variable `{0}`")]
    UnboundVar(String),
}

struct Ctx<'a> {
    input: &'a BTreeMap<String, FieldValue>,
    clock_year: i64,
    bindings: Vec<(String, Value)>,
    reads: BTreeSet<String>,
}

/// Evaluate a processing body over a minimized input, recording which
/// fields were dynamically observed (reads and presence tests), even when
/// evaluation faults partway.
pub fn evaluate_traced(
    p: &Processing,
    input: &BTreeMap<String, FieldValue>,
    clock_year: i64,
) -> (Result<Value, EvalError>, BTreeSet<String>) {
    let mut ctx = Ctx {
        input,
        clock_year,
        bindings: Vec::new(),
        reads: BTreeSet::new(),
    };
    let result = eval(&p.body, &mut ctx);
    (result, ctx.reads)
}

pub fn evaluate(
    p: &Processing,
    input: &BTreeMap<String, FieldValue>,
    clock_year: i64,
) -> Result<Value, EvalError> {
    evaluate_traced(p, input, clock_year).0
}

fn eval(expr: &Expr, ctx: &mut Ctx<'_>) -> Result<Value, EvalError> {
    match expr {
        Expr::Int(i) => Ok(Value::Int(*i)),
        Expr::Float(f) => Ok(Value::Float(*f)),
        Expr::Str(s) => Ok(Value::Str(s.clone())),
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::CurrentYear => Ok(Value::Int(ctx.clock_year)),
        Expr::Fail(msg) => Err(EvalError::Fail(msg.clone())),
        Expr::Input(field) => {
            ctx.reads.insert(field.clone());
            match ctx.input.get(field) {
                Some(v) => Ok(v.clone().into()),
                None => Err(EvalError::AbsentFieldRead(field.clone())),
            }
        }
        Expr::Has(field) => {
            ctx.reads.insert(field.clone());
            Ok(Value::Bool(ctx.input.contains_key(field)))
        }
        Expr::Var(name) => ctx
            .bindings
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| EvalError::UnboundVar(name.clone())),
        Expr::Let { name, value, body } => {
            let value = eval(value, ctx)?;
            ctx.bindings.push((name.clone(), value));
            let result = eval(body, ctx);
            ctx.bindings.pop();
            result
        }
        Expr::If { cond, then, els } => match eval(cond, ctx)? {
            Value::Bool(true) => eval(then, ctx),
            Value::Bool(false) => eval(els, ctx),
            other => Err(EvalError::TypeFault(format!(
                "if condition must be bool, got {}",
                other.kind()
            ))),
        },
        Expr::Neg(e) => match eval(e, ctx)? {
            Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
            Value::Float(f) => Ok(Value::Float(-f)),
            other => Err(EvalError::TypeFault(format!(
                "cannot negate {}",
                other.kind()
            ))),
        },
        Expr::Not(e) => match eval(e, ctx)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(EvalError::TypeFault(format!(
                "`not` expects bool, got {}",
                other.kind()
            ))),
        },
        Expr::Binary(op, lhs, rhs) => {
            // `and`/`or` short-circuit; everything else is strict.
            match op {
                BinOp::And => {
                    return match eval(lhs, ctx)? {
                        Value::Bool(false) => Ok(Value::Bool(false)),
                        Value::Bool(true) => match eval(rhs, ctx)? {
                            Value::Bool(b) => Ok(Value::Bool(b)),
                            other => Err(type_fault("and", &other)),
                        },
                        other => Err(type_fault("and", &other)),
                    }
                }
                BinOp::Or => {
                    return match eval(lhs, ctx)? {
                        Value::Bool(true) => Ok(Value::Bool(true)),
                        Value::Bool(false) => match eval(rhs, ctx)? {
                            Value::Bool(b) => Ok(Value::Bool(b)),
                            other => Err(type_fault("or", &other)),
                        },
                        other => Err(type_fault("or", &other)),
                    }
                }
                _ => {}
            }
            let a = eval(lhs, ctx)?;
            let b = eval(rhs, ctx)?;
            binary(*op, a, b)
        }
        Expr::New { type_name, fields } => {
            let mut values = BTreeMap::new();
            for (name, e) in fields {
                values.insert(name.clone(), eval(e, ctx)?);
            }
            Ok(Value::Record(type_name.clone(), values))
        }
    }
}

fn type_fault(op: &str, v: &Value) -> EvalError {
    EvalError::TypeFault(format!("`{op}` expects bool, got {}", v.kind()))
}

fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, EvalError> {
    use BinOp::*;
    match op {
        Add | Sub | Mul | Div => arith(op, a, b),
        Eq => Ok(Value::Bool(equal(&a, &b)?)),
        Ne => Ok(Value::Bool(!equal(&a, &b)?)),
        Lt | Le | Gt | Ge => {
            let ord = compare(&a, &b)?;
            Ok(Value::Bool(match op {
                Lt => ord == std::cmp::Ordering::Less,
                Le => ord != std::cmp::Ordering::Greater,
                Gt => ord == std::cmp::Ordering::Greater,
                Ge => ord != std::cmp::Ordering::Less,
                _ => unreachable!(),
            }))
        }
        And | Or => unreachable!("handled by the caller"),
    }
}

fn arith(op: BinOp, a: Value, b: Value) -> Result<Value, EvalError> {
    use BinOp::*;
    match (a, b) {
        (Value::Int(a), Value::Int(b)) => match op {
            Add => a.checked_add(b).map(Value::Int).ok_or(EvalError::Overflow),
            Sub => a.checked_sub(b).map(Value::Int).ok_or(EvalError::Overflow),
            Mul => a.checked_mul(b).map(Value::Int).ok_or(EvalError::Overflow),
            Div => {
                if b == 0 {
                    Err(EvalError::DivisionByZero)
                } else {
                    a.checked_div(b).map(Value::Int).ok_or(EvalError::Overflow)
                }
            }
            _ => unreachable!(),
        },
        (Value::Float(a), Value::Float(b)) => Ok(Value::Float(match op {
            Add => a + b,
            Sub => a - b,
            Mul => a * b,
            Div => a / b,
            _ => unreachable!(),
        })),
        (Value::Str(a), Value::Str(b)) if op == Add => Ok(Value::Str(a + &b)),
        (a, b) => Err(EvalError::TypeFault(format!(
            "arithmetic on {} and {}",
            a.kind(),
            b.kind()
        ))),
    }
}

fn equal(a: &Value, b: &Value) -> Result<bool, EvalError> {
    match (a, b) {
        (Value::Int(a), Value::Int(b)) => Ok(a == b),
        (Value::Float(a), Value::Float(b)) => Ok(a == b),
        (Value::Str(a), Value::Str(b)) => Ok(a == b),
        (Value::Bool(a), Value::Bool(b)) => Ok(a == b),
        (Value::Date(a), Value::Date(b)) => Ok(a == b),
        _ => Err(EvalError::TypeFault(format!(
            "equality between {} and {}",
            a.kind(),
            b.kind()
        ))),
    }
}

fn compare(a: &Value, b: &Value) -> Result<std::cmp::Ordering, EvalError> {
    match (a, b) {
        (Value::Int(a), Value::Int(b)) => Ok(a.cmp(b)),
        (Value::Float(a), Value::Float(b)) => {
            a.partial_cmp(b).ok_or_else(|| EvalError::TypeFault("NaN comparison".into()))
        }
        (Value::Str(a), Value::Str(b)) => Ok(a.cmp(b)),
        (Value::Date(a), Value::Date(b)) => Ok(a.cmp(b)),
        _ => Err(EvalError::TypeFault(format!(
            "ordering between {} and {}",
            a.kind(),
            b.kind()
        ))),
    }
}
