//! `rta` command implementations. Every command writes reports to `out`,
//! diagnostics to `err`, and returns the process exit code.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | ALLOW, or the command succeeded |
//! | 1  | corpus mismatch, or sweep predicate mismatch |
//! | 2  | usage, config or input error |
//! | 3  | audit chain or replay failure |
//! | 10 | DEFER |
//! | 11 | REQUEST_INFO |
//! | 12 | ESCALATE |

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rta_core::audit::{self, Verification};
use rta_core::corpus::{gate_for, load_corpus, run_corpus, CaseResult};
use rta_core::divergence::{synthetic_problem, sweep_weights, write_sweep_csv, Coupling, SweepConfig};
use rta_core::{
    decision_hash, load_constraint_dir, parse_decision, to_canonical_string, ConstraintSet, DecisionObject,
    OutcomeKind, Schema, ScoringModel, Timestamp, VerdictResult,
};
use rta_service::{config_path, Gateway, GatewayConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

pub fn outcome_exit_code(kind: OutcomeKind) -> i32 {
    match kind {
        OutcomeKind::Allow => 0,
        OutcomeKind::Defer => 10,
        OutcomeKind::RequestInfo => 11,
        OutcomeKind::Escalate => 12,
    }
}

#[derive(Debug, Parser)]
#[command(name = "rta", version, about = "Pre-execution Right-to-Act gate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one decision file against a constraint directory.
    Evaluate(EvaluateArgs),
    /// Case corpus operations.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Sweep scoring weights and compare baseline against gate.
    Diverge(DivergeArgs),
    /// Audit log operations.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Run the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub constraints: PathBuf,
    #[arg(long)]
    pub decision: PathBuf,
    /// Print per-constraint verdicts and reasons to stderr.
    #[arg(long)]
    pub explain: bool,
    /// Evaluation clock (RFC 3339); defaults to now.
    #[arg(long)]
    pub clock: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Run every case and compare against the expected outcomes.
    Run(CorpusRunArgs),
}

#[derive(Debug, Args)]
pub struct CorpusRunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub constraints: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluation clock for every case; defaults to each decision's timing.
    #[arg(long)]
    pub clock: Option<String>,
    /// Emit one canonical JSON result per line instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DivergeArgs {
    #[arg(long)]
    pub features: usize,
    #[arg(long)]
    pub step: f64,
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', required = true)]
    pub theta: Vec<f64>,
    #[arg(long, default_value = "coupled")]
    pub coupling: Coupling,
    /// Only weight vectors with sum at most 1.
    #[arg(long)]
    pub simplex: bool,
    /// Write the per-cell CSV here (`-` for stdout).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Check the hash chain.
    Verify {
        #[arg(long)]
        log: PathBuf,
    },
    /// Re-evaluate logged decisions and report differences.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
        /// Directory of decision files or corpus case files.
        #[arg(long)]
        decisions: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Evaluate(a) => cmd_evaluate(a, out, err),
        Command::Corpus(CorpusCommand::Run(a)) => cmd_corpus_run(a, out, err),
        Command::Diverge(a) => cmd_diverge(a, out, err),
        Command::Audit(AuditCommand::Verify { log }) => cmd_audit_verify(&log, out),
        Command::Audit(AuditCommand::Replay {
            log,
            constraints,
            decisions,
        }) => cmd_audit_replay(&log, &constraints, &decisions, out, err),
        Command::Serve(a) => cmd_serve(a, err),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

#[derive(Debug)]
struct Failure(i32, String);

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure(EXIT_USAGE, e.to_string())
}

type CmdResult = Result<i32, Failure>;

fn parse_clock(raw: Option<&str>) -> Result<Option<Timestamp>, Failure> {
    raw.map(|s| Timestamp::parse(s).map_err(|e| usage(format!("BAD_TIMESTAMP: --clock {s}: {e}"))))
        .transpose()
}

fn load_sets(dir: &Path) -> Result<BTreeMap<String, ConstraintSet>, Failure> {
    load_constraint_dir(dir, &Schema::default()).map_err(|e| usage(format!("{}: {e}", e.code())))
}

fn load_model(path: &Path) -> Result<ScoringModel, Failure> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    ScoringModel::from_json(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn io(e: std::io::Error) -> Failure {
    usage(e)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let sets = load_sets(&a.constraints)?;
    let bytes = std::fs::read(&a.decision).map_err(|e| usage(format!("{}: {e}", a.decision.display())))?;
    let d = parse_decision(&bytes).map_err(|e| usage(format!("{}: {e}", a.decision.display())))?;
    let clock = parse_clock(a.clock.as_deref())?.unwrap_or_else(Timestamp::now);
    let report = gate_for(&sets, &d, &clock).map_err(usage)?;
    writeln!(out, "{}", report.to_canonical_string()).map_err(io)?;
    if a.explain {
        for v in &report.verdicts {
            let mark = match v.result {
                VerdictResult::Pass => "PASS",
                VerdictResult::Fail => "FAIL",
            };
            writeln!(err, "{mark} {}: {}", v.constraint_id, v.reason).map_err(io)?;
        }
        writeln!(err, "outcome: {}", report.outcome.kind).map_err(io)?;
    }
    Ok(outcome_exit_code(report.outcome.kind))
}

fn cmd_corpus_run(a: CorpusRunArgs, out: &mut dyn Write, _err: &mut dyn Write) -> CmdResult {
    let cases = load_corpus(&a.corpus).map_err(usage)?;
    let sets = load_sets(&a.constraints)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let pinned = parse_clock(a.clock.as_deref())?;
    let results = run_corpus(&cases, &sets, model.as_ref(), |c| {
        pinned.clone().unwrap_or_else(|| c.decision.timing.clone())
    })
    .map_err(usage)?;
    if a.json {
        for r in &results {
            let v = serde_json::to_value(r).map_err(usage)?;
            writeln!(out, "{}", to_canonical_string(&v)).map_err(io)?;
        }
    } else {
        write_table(&results, out).map_err(io)?;
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    Ok(if failed == 0 { EXIT_OK } else { EXIT_MISMATCH })
}

fn write_table(results: &[CaseResult], out: &mut dyn Write) -> std::io::Result<()> {
    let width = results.iter().map(|r| r.case_id.len()).max().unwrap_or(4).max(4);
    let show = |b: Option<bool>| match b {
        Some(true) => "allow",
        Some(false) => "reject",
        None => "-",
    };
    writeln!(
        out,
        "{:<width$}  {:<12} {:<12} {:<8} {:<8} result",
        "case", "expected", "gate", "exp_base", "baseline"
    )?;
    for r in results {
        let mut status = if r.passed() { "PASS".to_owned() } else { "FAIL".to_owned() };
        if r.divergent {
            status.push_str(" DIVERGENT");
        }
        writeln!(
            out,
            "{:<width$}  {:<12} {:<12} {:<8} {:<8} {status}",
            r.case_id,
            r.expected_gate.as_str(),
            r.actual_gate.as_str(),
            show(r.expected_baseline),
            show(r.actual_baseline),
        )?;
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let divergent = results.iter().filter(|r| r.divergent).count();
    writeln!(out, "{} cases, {failed} failed, {divergent} divergent", results.len())
}

fn cmd_diverge(a: DivergeArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    if a.features == 0 {
        return Err(usage("INVALID_SPEC: --features must be at least 1"));
    }
    let mut cfg = SweepConfig::new(a.features, a.step, a.theta.clone(), a.coupling);
    cfg.simplex = a.simplex;
    let (set, names, ids) = synthetic_problem(a.features);
    let clock = Timestamp::parse("2026-01-01T00:00:00Z").expect("valid literal");
    let result =
        sweep_weights(&cfg, &set, &names, &ids, &clock).map_err(|e| usage(format!("{}: {e}", e.code())))?;
    let summary = to_canonical_string(&serde_json::to_value(&result.summary).map_err(usage)?);
    match a.csv.as_deref() {
        Some(p) if p == Path::new("-") => {
            write_sweep_csv(&result.cells, a.features, &mut *out).map_err(usage)?;
            writeln!(err, "{summary}").map_err(io)?;
        }
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            write_sweep_csv(&result.cells, a.features, std::io::BufWriter::new(f)).map_err(usage)?;
            writeln!(out, "{summary}").map_err(io)?;
        }
        None => writeln!(out, "{summary}").map_err(io)?,
    }
    Ok(if result.summary.all_match() { EXIT_OK } else { EXIT_MISMATCH })
}

fn cmd_audit_verify(log: &Path, out: &mut dyn Write) -> CmdResult {
    if !log.is_file() {
        return Err(usage(format!("{}: no such log file", log.display())));
    }
    let v = audit::verify(log).map_err(|e| usage(format!("{}: {e}", e.code())))?;
    writeln!(out, "{}", to_canonical_string(&serde_json::to_value(&v).map_err(usage)?)).map_err(io)?;
    Ok(match v {
        Verification::Ok { .. } => EXIT_OK,
        Verification::Corrupt { .. } => EXIT_AUDIT,
    })
}

/// Decision files and corpus case files, keyed by decision hash.
pub fn load_decisions(dir: &Path) -> Result<BTreeMap<String, DecisionObject>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = BTreeMap::new();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| format!("{}: {e}", f.display()))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| format!("{}: MALFORMED_JSON: {e}", f.display()))?;
        let d = match value.get("decision") {
            Some(inner) => DecisionObject::from_value(inner),
            None => DecisionObject::from_value(&value),
        }
        .map_err(|e| format!("{}: {e}", f.display()))?;
        out.insert(decision_hash(&d), d);
    }
    Ok(out)
}

fn cmd_audit_replay(
    log: &Path,
    constraints: &Path,
    decisions: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CmdResult {
    let sets = load_sets(constraints)?;
    let decisions = load_decisions(decisions).map_err(usage)?;
    let records = match audit::read_verified(log) {
        Ok(r) => r,
        Err(e @ audit::AuditError::ChainCorrupt { .. }) => {
            writeln!(err, "{}: {e}", e.code()).map_err(io)?;
            return Ok(EXIT_AUDIT);
        }
        Err(e) => return Err(usage(format!("{}: {e}", e.code()))),
    };
    let mismatches = match audit::replay_records(&records, &sets, &decisions) {
        Ok(m) => m,
        Err(e) => {
            writeln!(err, "{}: {e}", e.code()).map_err(io)?;
            return Ok(EXIT_AUDIT);
        }
    };
    for m in &mismatches {
        writeln!(out, "{}", to_canonical_string(&serde_json::to_value(m).map_err(usage)?)).map_err(io)?;
    }
    writeln!(err, "{} records replayed, {} mismatches", records.len(), mismatches.len()).map_err(io)?;
    Ok(if mismatches.is_empty() { EXIT_OK } else { EXIT_AUDIT })
}

fn cmd_serve(a: ServeArgs, err: &mut dyn Write) -> CmdResult {
    let path = config_path(a.config.as_deref()).ok_or_else(|| usage("serve needs --config or RTA_CONFIG"))?;
    let cfg = GatewayConfig::load(&path).map_err(usage)?;
    let gateway = Gateway::boot(&cfg, rta_service::system_clock()).map_err(usage)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io)?;
    runtime.block_on(async {
        let listener = rta_service::bind(cfg.listen).await.map_err(usage)?;
        let addr = listener.local_addr().map_err(io)?;
        writeln!(err, "listening on {addr}; classes: {}", gateway.loaded_classes().join(", ")).map_err(io)?;
        rta_service::serve(gateway, listener, shutdown_signal()).await.map_err(io)?;
        writeln!(err, "shut down").map_err(io)?;
        Ok(EXIT_OK)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
