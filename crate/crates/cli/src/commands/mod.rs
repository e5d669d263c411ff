//! Subcommand implementations. Each returns an [`Outcome`]; the caller
//! records it in the manifest and turns the failure fraction into the exit
//! code.

use anyhow::{Context, Result};
use rayon::prelude::*;

use causal_probe_core::agents::{AgentError, PlanRequest, PlanResponse, Planner};
use causal_probe_core::scenario::ScenarioRecord;

use crate::config::RunConfig;

pub mod analysis;
pub mod ingest;
pub mod probe;
pub mod report;
pub mod score;
pub mod serve;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub scenarios: usize,
    pub failed: usize,
    pub corpus_digest: Option<String>,
}

impl Outcome {
    pub fn failure_fraction(&self) -> f64 {
        if self.scenarios == 0 {
            0.0
        } else {
            self.failed as f64 / self.scenarios as f64
        }
    }
}

/// Stands in for a planner whose construction failed inside a worker, so
/// the affected scenarios are reported as failures instead of aborting.
struct Unavailable(String);

impl Planner for Unavailable {
    fn plan(&mut self, _: &PlanRequest) -> Result<PlanResponse, AgentError> {
        Err(AgentError::Io(self.0.clone()))
    }
}

/// Maps `f` over `records` on a pool of `cfg.jobs` workers, each with its own
/// planner. Results come back in input order, so output never depends on
/// scheduling.
pub fn par_scenarios<R, F>(cfg: &RunConfig, records: &[ScenarioRecord], f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&mut dyn Planner, &ScenarioRecord) -> R + Sync,
{
    let spec = cfg.agent_spec();
    // surface agent configuration problems before any scenario runs
    drop(spec.build(records, cfg.seed).context("constructing agent")?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(|| {
        records
            .par_iter()
            .map_init(
                || match spec.build(records, cfg.seed) {
                    Ok(p) => p,
                    Err(e) => Box::new(Unavailable(e.to_string())) as Box<dyn Planner>,
                },
                |planner, rec| f(planner.as_mut(), rec),
            )
            .collect()
    }))
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}
