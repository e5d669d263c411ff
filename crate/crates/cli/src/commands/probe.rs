//! `probe`: lateral-offset and history-inversion probes over a corpus.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{Context, Result};
use serde::Serialize;

use causal_probe_core::agents::Direction;
use causal_probe_core::probe::{aggregate, probe_scenario, ProbeKind, ProbeOutcome};

use super::{par_scenarios, Outcome};
use crate::config::RunConfig;
use crate::corpus;
use crate::output::OutDir;

/// One CSV row per probe outcome.
#[derive(Debug, Serialize)]
pub struct OutcomeRow<'a> {
    pub scenario_id: &'a str,
    pub scenario_type: &'a str,
    pub kind: &'static str,
    pub ego_speed_mps: f64,
    pub final_lateral_deviation_m: f64,
    pub direction_baseline: &'static str,
    pub direction_perturbed: &'static str,
    pub flipped: bool,
    pub reasoning_direction: Option<&'static str>,
    pub contradiction: bool,
    pub flagged: bool,
}

pub fn kind_name(k: ProbeKind) -> &'static str {
    match k {
        ProbeKind::LateralOffset => "lateral_offset",
        ProbeKind::DirectionInversion => "direction_inversion",
    }
}

impl<'a> From<&'a ProbeOutcome> for OutcomeRow<'a> {
    fn from(o: &'a ProbeOutcome) -> Self {
        Self {
            scenario_id: &o.scenario_id,
            scenario_type: &o.scenario_type,
            kind: kind_name(o.kind),
            ego_speed_mps: o.ego_speed_mps,
            final_lateral_deviation_m: o.final_lateral_deviation_m,
            direction_baseline: o.direction_baseline.as_str(),
            direction_perturbed: o.direction_perturbed.as_str(),
            flipped: o.flipped,
            reasoning_direction: o.reasoning_direction.map(Direction::as_str),
            contradiction: o.contradiction,
            flagged: o.flagged,
        }
    }
}

fn load_labels(cfg: &RunConfig) -> Result<BTreeMap<String, Direction>> {
    let Some(path) = &cfg.labels else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing labels {}", path.display()))
}

pub fn probe(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let spec = cfg.perturbation_spec();
    spec.validate()?;
    let labels = load_labels(cfg)?;
    let corpus = corpus::load(cfg)?;
    let per_scenario = par_scenarios(cfg, &corpus.records, |planner, rec| {
        probe_scenario(planner, rec, &spec, labels.get(&rec.id).copied())
    })?;
    let report = aggregate(&spec, per_scenario.into_iter().flatten().collect());
    let failed_ids: BTreeSet<&str> = report.invalid.iter().map(|o| o.scenario_id.as_str()).collect();
    let rows: Vec<OutcomeRow> = report.outcomes.iter().map(Into::into).collect();
    out.json("probe_report.json", &report)?;
    out.csv("probe_outcomes.csv", &rows)?;
    log::info!(
        "verdict {:?}: flagged {:?}, inversion rate {:?}",
        report.verdict,
        report.flagged_fraction,
        report.inversion_rate
    );
    Ok(Outcome {
        scenarios: corpus.attempted(),
        failed: failed_ids.len() + corpus.errors.len(),
        corpus_digest: Some(corpus.digest()),
    })
}
