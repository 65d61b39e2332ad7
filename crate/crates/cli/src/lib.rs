//! Command-line front end for the leakage audit pipeline.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use leakaudit::config::{ConfigError, RunConfig};
use leakaudit::pipeline;
use leakaudit::questions::generate_questions;
use leakaudit::report::{render, Format};
use leakaudit::store::{RunStore, Stream};
use leakaudit::verification::review::{DecisionInput, ReviewBoard};
use leakaudit::verification::ReviewDecision;
use leakaudit::{Error, FeatureLibrary, Result};

pub mod server;

#[derive(Debug, Parser)]
#[command(name = "audit", version, about = "Audit code LLMs for memorized personal data")]
pub struct Cli {
    /// Directory holding run stores.
    #[arg(long, global = true, env = "AUDIT_RUNS_DIR", default_value = "runs")]
    pub runs_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) an audit and write its reports.
    Run(RunArgs),
    /// Generate questions for one scenario and attribute and print them.
    Questions {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        attribute: String,
        #[arg(short = 'n', long, default_value_t = 20)]
        count: usize,
    },
    /// Render a run report.
    Report {
        #[arg(long)]
        run: String,
        #[arg(long, default_value = "md")]
        format: String,
        /// Reference run to compare confirmed sets against.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the confirmed sets of two runs.
    Compare {
        #[arg(long)]
        run: String,
        #[arg(long)]
        reference: String,
    },
    #[command(subcommand)]
    Library(LibraryCommand),
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Write token-score and cluster CSVs for a run's confirmed leaks.
    ExportFigures {
        #[arg(long)]
        run: String,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration; defaults to the stored one when resuming.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume the run with this id.
    #[arg(long)]
    pub resume: Option<String>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Use generic instead of scenario-conditioned questions.
    #[arg(long)]
    pub no_cgq: bool,
    /// Leave feature-library hints out of test prompts.
    #[arg(long)]
    pub no_fl: bool,
    /// Ask for example data instead of unit tests.
    #[arg(long)]
    pub no_tg: bool,
}

#[derive(Debug, Subcommand)]
pub enum LibraryCommand {
    /// Write the bundled seed library.
    Init {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold a run's confirmed leaks into a library.
    Update {
        #[arg(long)]
        from_run: String,
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Serve the review API for a run.
    Serve {
        #[arg(long)]
        run: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Record one decision.
    Decide {
        #[arg(long)]
        run: String,
        #[arg(long)]
        candidate: String,
        #[arg(long)]
        reviewer: String,
        /// confirm, reject or unsure
        #[arg(long)]
        decision: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Record decisions from a JSON-lines file.
    Import {
        #[arg(long)]
        run: String,
        #[arg(long)]
        file: PathBuf,
    },
}

/// One line of a decision import file.
#[derive(Debug, Deserialize)]
pub struct ImportedDecision {
    pub candidate_id: String,
    pub reviewer: String,
    pub decision: ReviewDecision,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub at: Option<DateTime<Utc>>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn load_config(path: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(path)?)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let runs = cli.runs_dir.as_path();
    match cli.command {
        Command::Run(a) => run(runs, a, out),
        Command::Questions { config, scenario, attribute, count } => {
            let cfg = load_config(&config)?;
            let taxonomy = pipeline::load_run_taxonomy(&cfg)?;
            let gateway = pipeline::build_gateway(&cfg, runs)?;
            let attr = taxonomy.require_attribute(&attribute)?.id.clone();
            let batch = generate_questions(&gateway, &taxonomy, &scenario, &[attr], count)?;
            emit(out, &serde_json::to_string_pretty(&batch).expect("questions serialize"))
        }
        Command::Report { run, format, reference, out: path } => {
            let format: Format = format.parse().map_err(Error::from)?;
            let report = pipeline::report_for_run(runs, &run, reference.as_deref())?;
            let text = render(&report, format)?;
            match path {
                Some(p) => std::fs::write(&p, text).map_err(|source| ConfigError::Read { path: p, source }.into()),
                None => emit(out, &text),
            }
        }
        Command::Compare { run, reference } => {
            let report = pipeline::report_for_run(runs, &run, Some(&reference))?;
            let c = report.comparison.expect("comparison requested");
            emit(out, &format!(
                "run {run}: {} confirmed, reference {reference}: {} confirmed, overlap {}\nPP {:.1}%  PR {:.1}%  PF1 {:.1}%",
                c.run_confirmed, c.reference_confirmed, c.overlap, c.pp, c.pr, c.pf1
            ))
        }
        Command::Library(LibraryCommand::Init { out: path }) => {
            let lib = FeatureLibrary::seed(&leakaudit::Taxonomy::bundled())?;
            lib.save(&path)?;
            emit(out, &format!("wrote seed library v{} ({} entries) to {}", lib.version, lib.entries.len(), path.display()))
        }
        Command::Library(LibraryCommand::Update { from_run, library, out: path }) => {
            let u = pipeline::library_update(runs, &from_run, library.as_deref(), path.as_deref())?;
            emit(out, &format!(
                "library v{} -> v{}: {} added, {} discarded; written to {}",
                u.delta.from_version,
                u.delta.to_version,
                u.delta.added.len(),
                u.delta.discarded.len(),
                u.library_path.display()
            ))
        }
        Command::Review(ReviewCommand::Serve { run, port, bind }) => serve(runs, &run, &bind, port),
        Command::Review(ReviewCommand::Decide { run, candidate, reviewer, decision, note }) => {
            let decision = ReviewDecision::parse(&decision).ok_or_else(|| usage(format!("unknown decision `{decision}`")))?;
            let d = ImportedDecision { candidate_id: candidate, reviewer, decision, note, at: None };
            let n = record_decisions(runs, &run, vec![d])?;
            emit(out, &format!("recorded {n} decision"))
        }
        Command::Review(ReviewCommand::Import { run, file }) => {
            let text = std::fs::read_to_string(&file).map_err(|source| ConfigError::Read { path: file.clone(), source })?;
            let mut decisions = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let d: ImportedDecision =
                    serde_json::from_str(line).map_err(|e| ConfigError::Parse(format!("{} line {}: {e}", file.display(), i + 1)))?;
                decisions.push(d);
            }
            let n = record_decisions(runs, &run, decisions)?;
            emit(out, &format!("recorded {n} decisions"))
        }
        Command::ExportFigures { run } => {
            let dir = pipeline::export_figures(runs, &run)?;
            emit(out, &format!("figures written to {}", dir.display()))
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    // A closed stdout (e.g. piped into `head`) is not an error worth reporting.
    let _ = writeln!(out, "{}", text.trim_end());
    Ok(())
}

fn run(runs: &Path, a: RunArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match (&a.config, &a.resume) {
        (Some(p), _) => load_config(p)?,
        (None, Some(id)) => pipeline::run_config(&RunStore::open_read(runs, id)?)?,
        (None, None) => return Err(usage("`run` needs --config or --resume")),
    };
    if a.no_cgq {
        cfg.ablation.cgq = false;
    }
    if a.no_fl {
        cfg.ablation.fl = false;
    }
    if a.no_tg {
        cfg.ablation.tg = false;
    }
    if a.run_id.is_some() {
        cfg.run_id = a.run_id;
    }
    let outcome = pipeline::run_audit(&cfg, runs, a.resume.as_deref())?;
    let t = &outcome.report.total;
    emit(out, &format!(
        "run {} complete: {} planned tests, {} accepted, {} candidates, {} judge-passed, {} in search window\nreports in {}",
        outcome.run_id,
        t.planned_tests,
        t.accepted_tests,
        t.extracted,
        t.judge_passed,
        t.search_in_range,
        outcome.dir.display()
    ))
}

/// Apply decisions in order. Nothing is written unless all of them are
/// legal.
pub fn record_decisions(runs: &Path, run_id: &str, decisions: Vec<ImportedDecision>) -> Result<usize> {
    let store = RunStore::open(runs, run_id)?;
    let mut board: ReviewBoard = pipeline::review_board(&store)?;
    let mut entries = Vec::with_capacity(decisions.len());
    for d in decisions {
        let version = board.get(&d.candidate_id).map(|v| v.version);
        let input = DecisionInput { decision: d.decision, note: d.note, reviewer: d.reviewer };
        let entry = board
            .prepare(&d.candidate_id, version, input, d.at.unwrap_or_else(Utc::now))
            .map_err(|e| usage(format!("{}: {e}", d.candidate_id)))?;
        board.commit(entry.clone()).map_err(|e| usage(e.to_string()))?;
        entries.push(entry);
    }
    store.append_all(Stream::Decisions, "review", &entries)?;
    pipeline::refresh_reports(&store)?;
    Ok(entries.len())
}

fn serve(runs: &Path, run_id: &str, bind: &str, port: u16) -> Result<()> {
    let store = RunStore::open(runs, run_id)?;
    let board = pipeline::review_board(&store)?;
    let addr: SocketAddr = format!("{bind}:{port}").parse().map_err(|e| usage(format!("bad address {bind}:{port}: {e}")))?;
    let app = server::router(Arc::new(server::ReviewState::new(board, store)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| usage(format!("cannot start runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| usage(format!("cannot bind {addr}: {e}")))?;
        log::info!("review API for run {run_id} on http://{addr}");
        axum::serve(listener, app).await.map_err(|e| usage(format!("server failed: {e}")))
    })
}

/// Parse arguments and map errors to exit codes: 1 usage, 2 configuration,
/// 3 external service, 4 corrupted store.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
    }
}
