//! Python bindings: one `PdStore` class wrapping the runtime facade,
//! plus authority-key helpers. Scalars cross into Python as native
//! values; personal data only ever crosses as refs, mirroring the Rust
//! surface.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pdstore::audit::AuditFilter;
use pdstore::crypto::{self, AuthorityPrivateKey, AuthorityPublicKey};
use pdstore::proclang::Value;
use pdstore::registry::RegisterOutcome;
use pdstore::rights;
use pdstore::runtime::{parse_grant, Runtime, RuntimeError};
use pdstore::store::{ConsentTarget, Selector};
use pdstore::PdRef;

fn runtime_err(e: RuntimeError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_ref(text: &str) -> PyResult<PdRef> {
    text.parse().map_err(|e: String| PyValueError::new_err(e))
}

fn target(subject: Option<String>, pd_ref: Option<String>) -> PyResult<ConsentTarget> {
    match (subject, pd_ref) {
        (Some(s), None) => Ok(ConsentTarget::Subject(s)),
        (None, Some(r)) => Ok(ConsentTarget::Ref(parse_ref(&r)?)),
        _ => Err(PyValueError::new_err(
            "pass exactly one of subject= or ref=",
        )),
    }
}

fn selector(subject: Option<String>, pd_ref: Option<String>) -> PyResult<Selector> {
    Ok(match (subject, pd_ref) {
        (Some(s), None) => Selector::Subject(s),
        (None, Some(r)) => Selector::Refs(vec![parse_ref(&r)?]),
        (None, None) => Selector::All,
        _ => {
            return Err(PyValueError::new_err(
                "pass at most one of subject= or ref=",
            ))
        }
    })
}

fn value_to_py(py: Python<'_>, value: &Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        Value::Int(i) => i.into_pyobject(py)?.into_any().unbind(),
        Value::Float(f) => f.into_pyobject(py)?.into_any().unbind(),
        Value::Str(s) => s.into_pyobject(py)?.into_any().unbind(),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        Value::Date(d) => d.to_string().into_pyobject(py)?.into_any().unbind(),
        Value::Record(..) => {
            return Err(PyRuntimeError::new_err(
                "record values never cross the boundary",
            ))
        }
    })
}

/// The outcome of one invocation, with personal data present only as refs.
#[pyclass(frozen)]
struct InvokeOutcome {
    #[pyo3(get)]
    run_id: u64,
    #[pyo3(get)]
    scalars: Vec<(String, Py<PyAny>)>,
    #[pyo3(get)]
    pd_refs: Vec<String>,
    #[pyo3(get)]
    skipped: Vec<(String, String)>,
    #[pyo3(get)]
    collected: Vec<String>,
}

#[pyclass(frozen)]
struct PdStore {
    rt: Runtime,
}

#[pymethods]
impl PdStore {
    /// Create a new store directory.
    #[staticmethod]
    fn init(path: PathBuf) -> PyResult<PdStore> {
        Ok(PdStore {
            rt: Runtime::init(&path).map_err(runtime_err)?,
        })
    }

    /// Open an existing store directory.
    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<PdStore> {
        Ok(PdStore {
            rt: Runtime::open(&path).map_err(runtime_err)?,
        })
    }

    /// Load every type declaration in a `.pdt` text; returns the names.
    fn load_types(&self, text: &str) -> PyResult<Vec<String>> {
        self.rt.load_types(text).map_err(runtime_err)
    }

    fn type_names(&self) -> Vec<String> {
        self.rt.store().type_names().into_iter().collect()
    }

    /// Collect records from a JSON payload through a declared source.
    /// Returns (refs, skipped) where skipped is (entry index, reason).
    fn collect(
        &self,
        type_name: &str,
        source: &str,
        payload_json: &str,
        now: i64,
    ) -> PyResult<(Vec<String>, Vec<(usize, String)>)> {
        let report = self
            .rt
            .collect(type_name, source, payload_json, now)
            .map_err(runtime_err)?;
        Ok((
            report.refs.iter().map(|r| r.to_string()).collect(),
            report
                .skipped
                .into_iter()
                .map(|(i, e)| (i, e.to_string()))
                .collect(),
        ))
    }

    /// Override one purpose's consent: grant is "all", "none" or a view
    /// name. Returns how many membranes changed (copies included).
    #[pyo3(signature = (purpose, grant, now, subject=None, ref_=None))]
    fn set_consent(
        &self,
        purpose: &str,
        grant: &str,
        now: i64,
        subject: Option<String>,
        ref_: Option<String>,
    ) -> PyResult<usize> {
        self.rt
            .set_consent(&target(subject, ref_)?, purpose, parse_grant(grant), now)
            .map_err(runtime_err)
    }

    /// Register a processing. Returns (registered, alert_message).
    #[pyo3(signature = (id, source, now, approve=false))]
    fn register(
        &self,
        id: &str,
        source: &str,
        now: i64,
        approve: bool,
    ) -> PyResult<(bool, Option<String>)> {
        match self.rt.register(id, source, approve, now).map_err(runtime_err)? {
            RegisterOutcome::Registered(_) => Ok((true, None)),
            RegisterOutcome::Alert { message, .. } => Ok((false, Some(message))),
        }
    }

    fn approve(&self, id: &str, now: i64) -> PyResult<()> {
        self.rt.approve(id, now).map_err(runtime_err)
    }

    /// (id, purpose, input type, declared view, output, state) rows.
    fn list_processings(&self) -> Vec<(String, String, String, String, String, String)> {
        self.rt
            .list_processings()
            .into_iter()
            .map(|p| {
                (
                    p.id,
                    p.purpose,
                    p.input_type,
                    p.declared_view,
                    p.output,
                    p.state.keyword().to_string(),
                )
            })
            .collect()
    }

    #[pyo3(signature = (id, now, subject=None, ref_=None, collect_source=None, collect_payload=None))]
    fn invoke(
        &self,
        py: Python<'_>,
        id: &str,
        now: i64,
        subject: Option<String>,
        ref_: Option<String>,
        collect_source: Option<String>,
        collect_payload: Option<String>,
    ) -> PyResult<InvokeOutcome> {
        let do_collect = collect_source.is_some();
        let collection = match (&collect_source, &collect_payload) {
            (Some(s), Some(p)) => Some((s.as_str(), p.as_str())),
            (None, None) => None,
            _ => {
                return Err(PyValueError::new_err(
                    "collect_source and collect_payload go together",
                ))
            }
        };
        let result = self
            .rt
            .invoke(id, selector(subject, ref_)?, collection, do_collect, now)
            .map_err(runtime_err)?;
        let mut scalars = Vec::new();
        for (pd_ref, value) in &result.scalars {
            scalars.push((pd_ref.to_string(), value_to_py(py, value)?));
        }
        Ok(InvokeOutcome {
            run_id: result.run_id,
            scalars,
            pd_refs: result.pd_refs.iter().map(|r| r.to_string()).collect(),
            skipped: result
                .skipped
                .into_iter()
                .map(|(r, why)| (r.to_string(), why))
                .collect(),
            collected: result.collected.iter().map(|r| r.to_string()).collect(),
        })
    }

    /// Right of access: the structured export document.
    fn export(&self, subject: &str, now: i64) -> PyResult<String> {
        self.rt.export(subject, now).map_err(runtime_err)
    }

    /// Right to be forgotten. Returns the number of records erased.
    #[pyo3(signature = (now, subject=None, ref_=None))]
    fn forget(&self, now: i64, subject: Option<String>, ref_: Option<String>) -> PyResult<usize> {
        self.rt
            .forget(&target(subject, ref_)?, now)
            .map_err(runtime_err)
    }

    fn sweep(&self, now: i64) -> PyResult<usize> {
        self.rt.sweep(now).map_err(runtime_err)
    }

    fn set_authority_key(&self, armored: &str) -> PyResult<()> {
        let key = AuthorityPublicKey::from_armored(armored)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.rt.set_authority_key(key).map_err(runtime_err)
    }

    /// What the authority does with a tombstone: recover the canonical
    /// pre-erase bytes using the private key.
    fn authority_decrypt(&self, ref_: &str, private_armored: &str) -> PyResult<Vec<u8>> {
        let pd_ref = parse_ref(ref_)?;
        let envelope = self
            .rt
            .store()
            .envelope_of(&pd_ref)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let key = AuthorityPrivateKey::from_armored(private_armored)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        rights::authority_decrypt(&envelope, &key)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Audit entries as rendered lines, filterable by subject/ref/run.
    #[pyo3(signature = (subject=None, ref_=None, run=None))]
    fn audit(
        &self,
        subject: Option<String>,
        ref_: Option<String>,
        run: Option<u64>,
    ) -> PyResult<Vec<(u64, i64, String, String, String)>> {
        let filter = AuditFilter {
            subject,
            pd_ref: match ref_ {
                Some(r) => Some(parse_ref(&r)?),
                None => None,
            },
            kind: None,
            run,
        };
        Ok(self
            .rt
            .audit_show(&filter)
            .into_iter()
            .map(|e| {
                (
                    e.seq,
                    e.ts,
                    e.event.kind.keyword().to_string(),
                    e.event
                        .pd_ref
                        .map(|r| r.to_string())
                        .unwrap_or_else(|| "-".into()),
                    e.event.outcome,
                )
            })
            .collect())
    }
}

/// Generate an authority keypair as armored text: (public, private).
#[pyfunction]
fn generate_keypair() -> (String, String) {
    let (pk, sk) = crypto::generate_keypair();
    (pk.to_armored(), sk.to_armored())
}

#[pymodule]
fn pdstore_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PdStore>()?;
    m.add_class::<InvokeOutcome>()?;
    m.add_function(wrap_pyfunction!(generate_keypair, m)?)?;
    Ok(())
}
