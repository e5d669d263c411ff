//! `report`: joins the summaries of every recorded run in the output
//! directory into one JSON document and one long-format CSV for plotting.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use causal_probe_core::attention::AttentionReport;
use causal_probe_core::probe::{ProbeReport, Verdict};

use super::analysis::{GrpoReport, SampleReport};
use super::ingest::IngestSummary;
use super::score::{ClosedSummaryRow, OpenSummaryRow, Summary};
use super::Outcome;
use crate::config::RunConfig;
use crate::output::{OutDir, RunManifest};

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeHeadline {
    pub agent: String,
    pub verdict: Verdict,
    pub outcomes: usize,
    pub invalid: usize,
    pub mean_abs_deviation_m: Option<f64>,
    pub flagged_fraction: Option<f64>,
    pub inversion_rate: Option<f64>,
    pub contradictions: usize,
    pub horizon_s: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub corpus_digests: Vec<(String, String)>,
    pub ingest: Option<IngestSummary>,
    pub open_loop: Option<Vec<OpenSummaryRow>>,
    pub closed_loop: Option<Vec<ClosedSummaryRow>>,
    pub probe: Option<ProbeHeadline>,
    pub attention: Option<AttentionReport>,
    pub grpo_mean_objective: Option<f64>,
    pub sample: Option<SampleReport>,
}

/// Long-format row: one metric value per line.
#[derive(Debug, Serialize)]
struct MetricRow {
    command: &'static str,
    group: String,
    horizon_s: Option<f64>,
    metric: String,
    value: f64,
}

fn read<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn agent_name(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.agent)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn report(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let dir = cfg.out.as_path();
    let manifest = RunManifest::load_or_new(dir);
    if manifest.runs.is_empty() {
        bail!("no recorded runs in {}", dir.display());
    }
    let mut rep = Report {
        tool_version: manifest.tool_version.clone(),
        ..Report::default()
    };
    let mut rows = Vec::new();
    for (command, run) in &manifest.runs {
        if let Some(d) = &run.corpus_digest {
            rep.corpus_digests.push((command.clone(), d.clone()));
        }
        match command.as_str() {
            "ingest" => rep.ingest = Some(read(dir, "ingest_summary.json")?),
            "score-open" => {
                let s: Summary<OpenSummaryRow> = read(dir, "open_loop_summary.json")?;
                for r in &s.rows {
                    let mut push = |metric: &str, v: Option<f64>| {
                        if let Some(value) = v {
                            rows.push(MetricRow {
                                command: "score-open",
                                group: r.scenario_type.clone(),
                                horizon_s: Some(r.horizon_s),
                                metric: metric.to_owned(),
                                value,
                            });
                        }
                    };
                    push("score", Some(r.mean_score));
                    push("ade", r.mean_ade);
                    push("fde", r.mean_fde);
                    push("ahe", r.mean_ahe);
                    push("fhe", r.mean_fhe);
                    push("miss_rate", r.mean_miss_rate);
                }
                rep.open_loop = Some(s.rows);
            }
            "score-closed" => {
                let s: Summary<ClosedSummaryRow> = read(dir, "closed_loop_summary.json")?;
                for r in &s.rows {
                    let metrics = [
                        ("score", Some(r.mean_score)),
                        ("no_collision", r.no_collision),
                        ("drivable", r.drivable),
                        ("progress_gate", r.progress_gate),
                        ("direction", r.direction),
                        ("ttc", r.ttc),
                        ("speed", r.speed),
                        ("progress", r.progress),
                        ("comfort", r.comfort),
                    ];
                    for (metric, v) in metrics {
                        if let Some(value) = v {
                            rows.push(MetricRow {
                                command: "score-closed",
                                group: r.scenario_type.clone(),
                                horizon_s: None,
                                metric: metric.to_owned(),
                                value,
                            });
                        }
                    }
                }
                rep.closed_loop = Some(s.rows);
            }
            "probe" => {
                let p: ProbeReport = read(dir, "probe_report.json")?;
                let head = ProbeHeadline {
                    agent: agent_name(&run.config),
                    verdict: p.verdict,
                    outcomes: p.outcomes.len(),
                    invalid: p.invalid.len(),
                    mean_abs_deviation_m: p.mean_abs_deviation_m,
                    flagged_fraction: p.flagged_fraction,
                    inversion_rate: p.inversion_rate,
                    contradictions: p.contradictions,
                    horizon_s: p.spec.horizon_s,
                };
                for (metric, v) in [
                    ("mean_abs_deviation_m", head.mean_abs_deviation_m),
                    ("flagged_fraction", head.flagged_fraction),
                    ("inversion_rate", head.inversion_rate),
                ] {
                    if let Some(value) = v {
                        rows.push(MetricRow {
                            command: "probe",
                            group: head.agent.clone(),
                            horizon_s: Some(head.horizon_s),
                            metric: metric.to_owned(),
                            value,
                        });
                    }
                }
                rep.probe = Some(head);
            }
            "attention" => {
                let a: AttentionReport = read(dir, "attention_report.json")?;
                for r in &a.rows {
                    for (source, &value) in &r.proportions {
                        rows.push(MetricRow {
                            command: "attention",
                            group: format!("{}/{}", r.bucket, r.target),
                            horizon_s: None,
                            metric: source.clone(),
                            value,
                        });
                    }
                }
                rep.attention = Some(a);
            }
            "grpo" => {
                let g: GrpoReport = read(dir, "grpo_terms.json")?;
                rep.grpo_mean_objective = Some(g.mean_objective);
            }
            "sample" => rep.sample = Some(read(dir, "sample_allocation.json")?),
            "report" => {}
            other => log::warn!("ignoring unknown run `{other}` in manifest"),
        }
    }
    out.json("report.json", &rep)?;
    out.csv("report_metrics.csv", &rows)?;
    Ok(Outcome::default())
}
