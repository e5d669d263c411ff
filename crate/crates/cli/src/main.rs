//! `causal-probe`: batch scoring, causal probing and attention analysis of
//! driving planners.
//!
//! Exit codes: 0 on success, 1 when more than `fail-threshold` of the
//! scenarios failed, 2 on configuration or input errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod corpus;
mod output;

use commands::Outcome;
use config::{Overrides, RunConfig};
use output::{OutDir, RunEntry, RunManifest};

#[derive(Parser)]
#[command(name = "causal-probe", version, about)]
struct Cli {
    /// JSON config file; flags override its keys.
    #[arg(long, global = true, env = "CAUSAL_PROBE_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Validate a corpus and write its canonical form and digest.
    Ingest,
    /// Open-loop displacement and heading metrics at each horizon.
    ScoreOpen,
    /// Non-reactive replay and closed-loop metrics.
    ScoreClosed,
    /// Lateral-offset and history-inversion probes.
    Probe,
    /// Bucketed attention proportions from a tensor dump.
    Attention,
    /// Group-relative policy objective terms for recorded groups.
    Grpo,
    /// Square-root stratified allocation of a sampling budget.
    Sample,
    /// Join all recorded summaries in the output directory.
    Report,
    /// Serve the configured built-in agent over stdin/stdout.
    AgentServe,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::ScoreOpen => "score-open",
            Command::ScoreClosed => "score-closed",
            Command::Probe => "probe",
            Command::Attention => "attention",
            Command::Grpo => "grpo",
            Command::Sample => "sample",
            Command::Report => "report",
            Command::AgentServe => "agent-serve",
        }
    }

    fn run(self, cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
        match self {
            Command::Ingest => commands::ingest::ingest(cfg, out),
            Command::ScoreOpen => commands::score::score_open(cfg, out),
            Command::ScoreClosed => commands::score::score_closed(cfg, out),
            Command::Probe => commands::probe::probe(cfg, out),
            Command::Attention => commands::analysis::attention(cfg, out),
            Command::Grpo => commands::analysis::grpo(cfg, out),
            Command::Sample => commands::analysis::sample(cfg, out),
            Command::Report => commands::report::report(cfg, out),
            Command::AgentServe => unreachable!("handled before output setup"),
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    init_logging(&cfg.log_level);
    if let Command::AgentServe = cli.command {
        commands::serve::agent_serve(&cfg)?;
        return Ok(ExitCode::SUCCESS);
    }
    let started_at = output::now();
    let mut out = OutDir::create(&cfg.out)?;
    let outcome = cli.command.run(&cfg, &mut out)?;
    RunManifest::record(
        &cfg.out,
        cli.command.name(),
        RunEntry {
            config: cfg.clone(),
            corpus_digest: outcome.corpus_digest.clone(),
            started_at,
            finished_at: output::now(),
            scenarios: outcome.scenarios,
            failed: outcome.failed,
            files: out.written().to_vec(),
        },
    )?;
    if outcome.failure_fraction() > cfg.fail_threshold {
        eprintln!(
            "error: {} of {} scenarios failed (threshold {})",
            outcome.failed, outcome.scenarios, cfg.fail_threshold
        );
        return Ok(ExitCode::from(1));
    }
    if outcome.scenarios > 0 {
        log::info!(
            "{}: {} scenarios, {} failed; results in {}",
            cli.command.name(),
            outcome.scenarios,
            outcome.failed,
            cfg.out.display()
        );
    } else {
        log::info!("{}: results in {}", cli.command.name(), cfg.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
