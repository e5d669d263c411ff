//! `agent-serve`: exposes a built-in planner over the line protocol on
//! stdin/stdout, so external-agent plumbing can be exercised end to end.

use anyhow::{Context, Result};

use causal_probe_core::agents::serve;

use crate::config::RunConfig;
use crate::corpus;

pub fn agent_serve(cfg: &RunConfig) -> Result<()> {
    // the expert echo needs the logs it replays
    let records = match &cfg.corpus {
        Some(_) => corpus::load(cfg)?.records,
        None => Vec::new(),
    };
    let mut planner = cfg.agent_spec().build(&records, cfg.seed).context("constructing agent")?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(stdin.lock(), stdout.lock(), planner.as_mut()).context("serving requests")
}
