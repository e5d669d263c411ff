//! `score-open` and `score-closed`.

use std::collections::BTreeMap;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use causal_probe_core::closedloop::{evaluate_closed_loop, ClosedLoopReport};
use causal_probe_core::openloop::{evaluate_open_loop, OpenLoopReport};

use super::{mean, par_scenarios, Outcome};
use crate::config::RunConfig;
use crate::corpus::{self, LineError};
use crate::output::OutDir;

/// Group label covering every scenario type.
pub const ALL_TYPES: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSummaryRow {
    pub horizon_s: f64,
    pub scenario_type: String,
    pub scenarios: usize,
    pub failed: usize,
    /// Failed scenarios count as 0.
    pub mean_score: f64,
    pub mean_ade: Option<f64>,
    pub mean_fde: Option<f64>,
    pub mean_ahe: Option<f64>,
    pub mean_fhe: Option<f64>,
    pub mean_miss_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedSummaryRow {
    pub scenario_type: String,
    pub scenarios: usize,
    pub failed: usize,
    /// Failed scenarios count as 0.
    pub mean_score: f64,
    pub no_collision: Option<f64>,
    pub drivable: Option<f64>,
    pub progress_gate: Option<f64>,
    pub direction: Option<f64>,
    pub ttc: Option<f64>,
    pub speed: Option<f64>,
    pub progress: Option<f64>,
    pub comfort: Option<f64>,
    pub collisions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary<R> {
    pub rows: Vec<R>,
    pub corpus_errors: Vec<LineErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineErrorRecord {
    pub line: usize,
    pub error: String,
}

impl From<&LineError> for LineErrorRecord {
    fn from(e: &LineError) -> Self {
        Self {
            line: e.line,
            error: e.error.clone(),
        }
    }
}

/// Groups items by scenario type, plus one [`ALL_TYPES`] group.
fn grouped<'a, T>(items: &'a [T], ty: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<&'a T>> {
    let mut out: BTreeMap<String, Vec<&T>> = BTreeMap::new();
    for it in items {
        out.entry(ty(it).to_owned()).or_default().push(it);
        out.entry(ALL_TYPES.to_owned()).or_default().push(it);
    }
    out
}

pub fn open_summary(reports: &[OpenLoopReport], horizon_s: f64) -> Vec<OpenSummaryRow> {
    grouped(reports, |r| &r.scenario_type)
        .into_iter()
        .map(|(ty, rs)| {
            let ok: Vec<&&OpenLoopReport> = rs.iter().filter(|r| r.error.is_none()).collect();
            let m = |f: fn(&OpenLoopReport) -> f64| mean(ok.iter().map(|r| f(r)));
            OpenSummaryRow {
                horizon_s,
                scenario_type: ty,
                scenarios: rs.len(),
                failed: rs.len() - ok.len(),
                mean_score: mean(rs.iter().map(|r| r.score)).unwrap_or(0.0),
                mean_ade: m(|r| r.ade),
                mean_fde: m(|r| r.fde),
                mean_ahe: m(|r| r.ahe),
                mean_fhe: m(|r| r.fhe),
                mean_miss_rate: m(|r| r.miss_rate),
            }
        })
        .collect()
}

pub fn closed_summary(reports: &[ClosedLoopReport]) -> Vec<ClosedSummaryRow> {
    grouped(reports, |r| &r.scenario_type)
        .into_iter()
        .map(|(ty, rs)| {
            let ok: Vec<_> = rs.iter().filter_map(|r| r.breakdown).collect();
            let m = |f: fn(&causal_probe_core::closedloop::ClosedLoopBreakdown) -> f64| {
                mean(ok.iter().map(f))
            };
            ClosedSummaryRow {
                scenario_type: ty,
                scenarios: rs.len(),
                failed: rs.iter().filter(|r| r.error.is_some()).count(),
                mean_score: mean(rs.iter().map(|r| r.score)).unwrap_or(0.0),
                no_collision: m(|b| b.no_collision),
                drivable: m(|b| b.drivable),
                progress_gate: m(|b| b.progress_gate),
                direction: m(|b| b.direction),
                ttc: m(|b| b.ttc),
                speed: m(|b| b.speed),
                progress: m(|b| b.progress),
                comfort: m(|b| b.comfort),
                collisions: rs.iter().map(|r| r.collisions.len()).sum(),
            }
        })
        .collect()
}

/// File name of the per-scenario results at one horizon, e.g. `open_loop_2s.jsonl`.
pub fn open_loop_file(horizon_s: f64) -> String {
    format!("open_loop_{}s.jsonl", horizon_s.round() as i64)
}

pub fn score_open(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let corpus = corpus::load(cfg)?;
    let horizons = cfg.horizon_list()?;
    let ol = cfg.open_loop();
    let per_scenario = par_scenarios(cfg, &corpus.records, |planner, rec| {
        evaluate_open_loop(rec, planner, &horizons, &ol)
    })?;
    let mut rows = Vec::new();
    for (hi, h) in horizons.iter().enumerate() {
        let reports: Vec<OpenLoopReport> = per_scenario.iter().map(|r| r[hi].clone()).collect();
        out.jsonl(&open_loop_file(h.seconds), &reports)?;
        rows.extend(open_summary(&reports, h.seconds));
    }
    out.csv("open_loop_summary.csv", &rows)?;
    out.json(
        "open_loop_summary.json",
        &Summary {
            rows,
            corpus_errors: corpus.errors.iter().map(Into::into).collect(),
        },
    )?;
    let failed = per_scenario
        .iter()
        .filter(|r| r.iter().any(|x| x.error.is_some()))
        .count();
    Ok(Outcome {
        scenarios: corpus.attempted(),
        failed: failed + corpus.errors.len(),
        corpus_digest: Some(corpus.digest()),
    })
}

pub fn score_closed(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let corpus = corpus::load(cfg)?;
    let replay = cfg.replay();
    let reports = par_scenarios(cfg, &corpus.records, |planner, rec| {
        evaluate_closed_loop(rec, planner, &replay)
    })?;
    out.jsonl("closed_loop.jsonl", &reports)?;
    let rows = closed_summary(&reports);
    out.csv("closed_loop_summary.csv", &rows)?;
    out.json(
        "closed_loop_summary.json",
        &Summary {
            rows,
            corpus_errors: corpus.errors.iter().map(Into::into).collect(),
        },
    )?;
    let failed = reports.iter().filter(|r| r.error.is_some()).count();
    Ok(Outcome {
        scenarios: corpus.attempted(),
        failed: failed + corpus.errors.len(),
        corpus_digest: Some(corpus.digest()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use causal_probe_core::openloop::Horizon;
    use causal_probe_core::synthetic::{straight_scenario, SceneParams};

    #[test]
    fn summary_counts_failures_as_zero() {
        let rec = straight_scenario("s", &SceneParams::default());
        let mut ok = OpenLoopReport::failed(&rec, Horizon::ONE_S, "x".into());
        ok.error = None;
        ok.score = 100.0;
        ok.ade = 1.0;
        let bad = OpenLoopReport::failed(&rec, Horizon::ONE_S, "agent_error:timeout".into());
        let rows = open_summary(&[ok, bad], 1.0);
        assert_eq!(rows.len(), 2);
        let all = rows.iter().find(|r| r.scenario_type == ALL_TYPES).unwrap();
        assert_eq!((all.scenarios, all.failed), (2, 1));
        assert_eq!(all.mean_score, 50.0);
        assert_eq!(all.mean_ade, Some(1.0));
    }

    #[test]
    fn file_names() {
        assert_eq!(open_loop_file(1.0), "open_loop_1s.jsonl");
        assert_eq!(open_loop_file(3.0), "open_loop_3s.jsonl");
    }
}
