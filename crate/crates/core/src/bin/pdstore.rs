//! Operator and subject command line over a store directory.
//!
//! Exit codes: 0 success, 1 domain error (printed as a single
//! `error: <Name>: <message>` line), 2 usage error. No subcommand prints
//! raw field values; the right-of-access export goes to a file.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{NaiveDate, Utc};
use clap::{ArgGroup, Parser, Subcommand};

use pdstore::audit::AuditFilter;
use pdstore::crypto::{generate_keypair, AuthorityPrivateKey, AuthorityPublicKey};
use pdstore::registry::RegisterOutcome;
use pdstore::runtime::{parse_grant, Runtime, RuntimeError};
use pdstore::store::{ConsentTarget, Selector};
use pdstore::PdRef;

#[derive(Parser)]
#[command(name = "pdstore", about = "A consent-enforcing personal data store")]
struct Cli {
    /// Store directory (or set PDSTORE_DIR).
    #[arg(long, global = true, env = "PDSTORE_DIR")]
    store: Option<PathBuf>,
    /// Clock override for reproducible runs: YYYY-MM-DD or epoch seconds.
    #[arg(long, global = true)]
    now: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a new empty store directory.
    Init { dir: PathBuf },
    /// Type catalog operations.
    #[command(subcommand)]
    Types(TypesCmd),
    /// Collect records from a payload file through a declared source.
    Collect {
        #[arg(long = "type")]
        type_name: String,
        #[arg(long)]
        source: String,
        #[arg(long)]
        input: PathBuf,
    },
    /// Consent overrides.
    #[command(subcommand)]
    Consent(ConsentCmd),
    /// Processing registration and catalog.
    #[command(subcommand)]
    Proc(ProcCmd),
    /// Invoke a registered processing.
    #[command(group(ArgGroup::new("sel").args(["all", "ref_", "subject"])))]
    Invoke {
        id: String,
        #[arg(long)]
        all: bool,
        #[arg(long = "ref")]
        ref_: Option<String>,
        #[arg(long)]
        subject: Option<String>,
        /// Run the collection built-in before the pipeline.
        #[arg(long, requires = "source", requires = "input")]
        collect: bool,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Subject rights.
    #[command(subcommand)]
    Rights(RightsCmd),
    /// Show audit log entries.
    Audit {
        #[command(subcommand)]
        cmd: AuditCmd,
    },
    /// Crypto-erase everything past its retention window.
    Sweep,
    /// Authority key handling.
    #[command(subcommand)]
    Authority(AuthorityCmd),
}

#[derive(Subcommand)]
enum TypesCmd {
    /// Load every type declaration from a .pdt file.
    Load { file: PathBuf },
    /// List cataloged type names.
    List,
}

#[derive(Subcommand)]
enum ConsentCmd {
    #[command(group(ArgGroup::new("tgt").required(true).args(["ref_", "subject"])))]
    Set {
        #[arg(long = "ref")]
        ref_: Option<String>,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        purpose: String,
        /// `all`, `none`, or a view name.
        #[arg(long)]
        grant: String,
    },
}

#[derive(Subcommand)]
enum ProcCmd {
    /// Register a .pproc file under its file stem.
    Register {
        file: PathBuf,
        #[arg(long)]
        approve: bool,
    },
    /// Approve a pending alert.
    Approve { id: String },
    List,
}

#[derive(Subcommand)]
enum RightsCmd {
    Export {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(group(ArgGroup::new("tgt").required(true).args(["ref_", "subject"])))]
    Forget {
        #[arg(long = "ref")]
        ref_: Option<String>,
        #[arg(long)]
        subject: Option<String>,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    Show {
        #[arg(long)]
        subject: Option<String>,
        #[arg(long = "ref")]
        ref_: Option<String>,
        #[arg(long)]
        run: Option<u64>,
    },
}

#[derive(Subcommand)]
enum AuthorityCmd {
    /// Generate a keypair; the private key stays with the authorities.
    Keygen {
        #[arg(long)]
        public_out: PathBuf,
        #[arg(long)]
        private_out: PathBuf,
    },
    /// Configure the store's authority public key.
    SetKey { file: PathBuf },
    /// Decrypt a tombstoned record with the authority private key.
    Decrypt {
        #[arg(long = "ref")]
        ref_: String,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Runtime(RuntimeError),
    Other(String),
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> CliError {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Other(format!("Io: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {}: {e}", error_name(&e));
            ExitCode::FAILURE
        }
        Err(CliError::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

/// The variant name of the root cause, for machine-parsable error lines.
/// Walks the debug form past wrapper variants: `Ps(UnknownProcessing("x"))`
/// names `UnknownProcessing`.
fn error_name(e: &RuntimeError) -> String {
    let debug = format!("{e:?}");
    let mut name = String::new();
    let mut current = String::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in debug.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '(' | '{' => {
                if !current.is_empty() {
                    name = current.clone();
                }
                current.clear();
            }
            c if c.is_ascii_alphanumeric() || c == '_' => current.push(c),
            _ => current.clear(),
        }
    }
    if name.is_empty() {
        name = current;
    }
    name
}

fn parse_now(text: &Option<String>) -> Result<i64, CliError> {
    match text {
        None => Ok(Utc::now().timestamp()),
        Some(word) => {
            if let Ok(secs) = word.parse::<i64>() {
                return Ok(secs);
            }
            let date: NaiveDate = word
                .parse()
                .map_err(|_| CliError::Other(format!("BadClock: `{word}` is not a date")))?;
            Ok(date
                .and_hms_opt(0, 0, 0)
                .expect("midnight exists")
                .and_utc()
                .timestamp())
        }
    }
}

fn parse_ref(text: &str) -> Result<PdRef, CliError> {
    text.parse()
        .map_err(|e: String| CliError::Other(format!("BadRef: {e}")))
}

fn target(ref_: &Option<String>, subject: &Option<String>) -> Result<ConsentTarget, CliError> {
    match (ref_, subject) {
        (Some(r), None) => Ok(ConsentTarget::Ref(parse_ref(r)?)),
        (None, Some(s)) => Ok(ConsentTarget::Subject(s.clone())),
        _ => unreachable!("clap enforces exactly one target"),
    }
}

fn open_runtime(store: &Option<PathBuf>) -> Result<Runtime, CliError> {
    let dir = store
        .as_deref()
        .ok_or_else(|| CliError::Other("NoStore: pass --store or set PDSTORE_DIR".into()))?;
    Ok(Runtime::open(dir)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let now = parse_now(&cli.now)?;
    match cli.command {
        Command::Init { dir } => {
            Runtime::init(&dir)?;
            println!("initialized {}", dir.display());
        }
        Command::Types(TypesCmd::Load { file }) => {
            let rt = open_runtime(&cli.store)?;
            let text = std::fs::read_to_string(&file)?;
            let names = rt.load_types(&text)?;
            println!("loaded {} type(s): {}", names.len(), names.join(", "));
        }
        Command::Types(TypesCmd::List) => {
            let rt = open_runtime(&cli.store)?;
            for name in rt.store().type_names() {
                println!("{name}");
            }
        }
        Command::Collect {
            type_name,
            source,
            input,
        } => {
            let rt = open_runtime(&cli.store)?;
            let payload = std::fs::read_to_string(&input)?;
            let report = rt.collect(&type_name, &source, &payload, now)?;
            println!(
                "collected {} record(s), {} skipped",
                report.refs.len(),
                report.skipped.len()
            );
            for r in &report.refs {
                println!("{r}");
            }
            for (idx, err) in &report.skipped {
                eprintln!("entry {idx} skipped: {err}");
            }
        }
        Command::Consent(ConsentCmd::Set {
            ref_,
            subject,
            purpose,
            grant,
        }) => {
            let rt = open_runtime(&cli.store)?;
            let updated =
                rt.set_consent(&target(&ref_, &subject)?, &purpose, parse_grant(&grant), now)?;
            println!("{updated} membrane(s) updated");
        }
        Command::Proc(ProcCmd::Register { file, approve }) => {
            let rt = open_runtime(&cli.store)?;
            let id = file
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::Other("BadPath: no file stem".into()))?
                .to_string();
            let source = std::fs::read_to_string(&file)?;
            match rt.register(&id, &source, approve, now)? {
                RegisterOutcome::Registered(id) => println!("registered {id}"),
                RegisterOutcome::Alert { id, message } => {
                    println!("alert for {id}: {message}");
                    println!("re-run with --approve, or `proc approve {id}`, to accept");
                }
            }
        }
        Command::Proc(ProcCmd::Approve { id }) => {
            let rt = open_runtime(&cli.store)?;
            rt.approve(&id, now)?;
            println!("approved {id}");
        }
        Command::Proc(ProcCmd::List) => {
            let rt = open_runtime(&cli.store)?;
            for p in rt.list_processings() {
                println!(
                    "{}\tpurpose={}\tinput={}\tview={}\toutput={}\t[{}]",
                    p.id,
                    p.purpose,
                    p.input_type,
                    p.declared_view,
                    p.output,
                    p.state.keyword()
                );
            }
        }
        Command::Invoke {
            id,
            all: _,
            ref_,
            subject,
            collect,
            source,
            input,
        } => {
            let rt = open_runtime(&cli.store)?;
            let selector = match (&ref_, &subject) {
                (Some(r), _) => Selector::Refs(vec![parse_ref(r)?]),
                (_, Some(s)) => Selector::Subject(s.clone()),
                _ => Selector::All,
            };
            let payload = match &input {
                Some(path) => Some(std::fs::read_to_string(path)?),
                None => None,
            };
            let collection = match (&source, &payload) {
                (Some(s), Some(p)) => Some((s.as_str(), p.as_str())),
                _ => None,
            };
            let result = rt.invoke(&id, selector, collection, collect, now)?;
            let mut skip_counts = std::collections::BTreeMap::new();
            for (_, why) in &result.skipped {
                *skip_counts.entry(why.clone()).or_insert(0usize) += 1;
            }
            let skips: Vec<String> = skip_counts
                .iter()
                .map(|(why, n)| format!("{n} skipped({why})"))
                .collect();
            println!(
                "run {}: {} processed, {}",
                result.run_id,
                result.scalars.len() + result.pd_refs.len(),
                if skips.is_empty() {
                    "0 skipped".to_string()
                } else {
                    skips.join(", ")
                }
            );
            for (pd_ref, value) in &result.scalars {
                println!("{pd_ref} -> {value:?}");
            }
            for r in &result.pd_refs {
                println!("generated {r}");
            }
        }
        Command::Rights(RightsCmd::Export { subject, out }) => {
            let rt = open_runtime(&cli.store)?;
            let doc = rt.export(&subject, now)?;
            std::fs::write(&out, doc)?;
            println!("exported to {}", out.display());
        }
        Command::Rights(RightsCmd::Forget { ref_, subject }) => {
            let rt = open_runtime(&cli.store)?;
            let count = rt.forget(&target(&ref_, &subject)?, now)?;
            println!("{count} record(s) erased");
        }
        Command::Audit {
            cmd: AuditCmd::Show { subject, ref_, run },
        } => {
            let rt = open_runtime(&cli.store)?;
            let filter = AuditFilter {
                subject,
                pd_ref: match &ref_ {
                    Some(r) => Some(parse_ref(r)?),
                    None => None,
                },
                kind: None,
                run,
            };
            for entry in rt.audit_show(&filter) {
                let e = &entry.event;
                println!(
                    "seq={} ts={} kind={} run={} processing={} purpose={} ref={} subject={} outcome={} permission={}",
                    entry.seq,
                    entry.ts,
                    e.kind.keyword(),
                    e.run.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                    e.processing.as_deref().unwrap_or("-"),
                    e.purpose.as_deref().unwrap_or("-"),
                    e.pd_ref.as_ref().map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
                    e.subject.as_deref().unwrap_or("-"),
                    e.outcome,
                    e.permission.as_deref().unwrap_or("-"),
                );
            }
        }
        Command::Sweep => {
            let rt = open_runtime(&cli.store)?;
            let count = rt.sweep(now)?;
            println!("{count} record(s) erased");
        }
        Command::Authority(AuthorityCmd::Keygen {
            public_out,
            private_out,
        }) => {
            let (pk, sk) = generate_keypair();
            std::fs::write(&public_out, pk.to_armored())?;
            std::fs::write(&private_out, sk.to_armored())?;
            println!(
                "wrote {} and {}",
                public_out.display(),
                private_out.display()
            );
        }
        Command::Authority(AuthorityCmd::SetKey { file }) => {
            let rt = open_runtime(&cli.store)?;
            let text = std::fs::read_to_string(&file)?;
            let key = AuthorityPublicKey::from_armored(&text)
                .map_err(RuntimeError::Crypto)?;
            rt.set_authority_key(key)?;
            println!("authority key configured");
        }
        Command::Authority(AuthorityCmd::Decrypt { ref_, key, out }) => {
            let rt = open_runtime(&cli.store)?;
            let pd_ref = parse_ref(&ref_)?;
            let envelope = rt
                .store()
                .envelope_of(&pd_ref)
                .map_err(RuntimeError::Store)?;
            let text = std::fs::read_to_string(&key)?;
            let sk = AuthorityPrivateKey::from_armored(&text)
                .map_err(RuntimeError::Crypto)?;
            let plaintext = pdstore::rights::authority_decrypt(&envelope, &sk)
                .map_err(RuntimeError::Crypto)?;
            std::fs::write(&out, plaintext)?;
            println!("decrypted to {}", out.display());
        }
    }
    Ok(())
}
