//! `attention`, `grpo` and `sample`: thin wrappers over the core math.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use causal_probe_core::attention::{build_report, load_dump};
use causal_probe_core::grpo::{grpo_objective_terms, GroupObjective, GroupSample, GrpoConfig, RewardWeights};
use causal_probe_core::sampling::sqrt_stratified_sample;
use causal_probe_core::scenario::{write_scenarios, ScenarioRecord};

use super::Outcome;
use crate::config::RunConfig;
use crate::corpus;
use crate::output::OutDir;

#[derive(Debug, Serialize)]
struct AttentionRow<'a> {
    bucket: &'a str,
    layer: usize,
    target: &'a str,
    source: &'a str,
    proportion: f64,
}

pub fn attention(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let path = cfg.dump.as_ref().context("no attention dump configured (set --dump)")?;
    let dump = load_dump(path).with_context(|| format!("attention dump {}", path.display()))?;
    let targets: Vec<&str> = cfg.targets.iter().map(String::as_str).collect();
    let report = build_report(&dump, &targets)?;
    let rows: Vec<AttentionRow> = report
        .rows
        .iter()
        .flat_map(|r| {
            r.proportions.iter().map(move |(source, &proportion)| AttentionRow {
                bucket: &r.bucket,
                layer: r.layer,
                target: &r.target,
                source,
                proportion,
            })
        })
        .collect();
    out.json("attention_report.json", &report)?;
    out.csv("attention_report.csv", &rows)?;
    Ok(Outcome::default())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GrpoReport {
    pub config: GrpoConfig,
    pub weights: RewardWeights,
    pub groups: Vec<GroupObjective>,
    pub mean_objective: f64,
}

#[derive(Debug, Serialize)]
struct GrpoRow {
    group: usize,
    output: usize,
    reward: f64,
    advantage: f64,
    ratio: f64,
    clipped_weight: f64,
    kl: f64,
    term: f64,
}

/// Accepts one JSON group object per line, or any whitespace-separated
/// sequence of them.
pub fn parse_groups(text: &str) -> Result<Vec<GroupSample>> {
    serde_json::Deserializer::from_str(text)
        .into_iter::<GroupSample>()
        .enumerate()
        .map(|(i, g)| g.with_context(|| format!("group {i}")))
        .collect()
}

pub fn grpo(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let path = cfg.grpo_input.as_ref().context("no group file configured (set --grpo-input)")?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let samples = parse_groups(&text)?;
    if samples.is_empty() {
        bail!("{} contains no groups", path.display());
    }
    let gc = cfg.grpo();
    let weights = cfg.reward_weights()?;
    let groups = samples
        .iter()
        .enumerate()
        .map(|(i, g)| grpo_objective_terms(g, &gc, &weights).with_context(|| format!("group {i}")))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<GrpoRow> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| {
            g.outputs.iter().enumerate().map(move |(oi, o)| GrpoRow {
                group: gi,
                output: oi,
                reward: o.reward,
                advantage: o.advantage,
                ratio: o.ratio,
                clipped_weight: o.clipped_weight,
                kl: o.kl,
                term: o.term,
            })
        })
        .collect();
    let mean_objective = groups.iter().map(|g| g.objective).sum::<f64>() / groups.len() as f64;
    out.json(
        "grpo_terms.json",
        &GrpoReport {
            config: gc,
            weights,
            groups,
            mean_objective,
        },
    )?;
    out.csv("grpo_terms.csv", &rows)?;
    Ok(Outcome::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumAllocation {
    pub name: String,
    pub size: u64,
    pub allocated: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleReport {
    pub budget: u64,
    pub strata: Vec<StratumAllocation>,
}

/// Seeded pick of `counts[type]` records per type, in file order.
fn pick(records: &[ScenarioRecord], counts: &BTreeMap<String, u64>, seed: u64) -> Vec<ScenarioRecord> {
    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_type.entry(&r.scenario_type).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; records.len()];
    for (ty, idx) in by_type {
        let n = counts.get(ty).copied().unwrap_or(0) as usize;
        for k in rand::seq::index::sample(&mut rng, idx.len(), n.min(idx.len())) {
            chosen[idx[k]] = true;
        }
    }
    records
        .iter()
        .zip(chosen)
        .filter_map(|(r, c)| c.then(|| r.clone()))
        .collect()
}

pub fn sample(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let budget = cfg.budget.context("no sampling budget configured (set --budget)")?;
    let (names, sizes, corpus) = if cfg.strata.is_empty() {
        let corpus = corpus::load(cfg)?;
        let counts = corpus.count_by_type();
        let names: Vec<String> = counts.keys().cloned().collect();
        let sizes: Vec<u64> = counts.values().map(|&n| n as u64).collect();
        (names, sizes, Some(corpus))
    } else {
        let names = (0..cfg.strata.len()).map(|i| format!("stratum-{i}")).collect();
        (names, cfg.strata.clone(), None)
    };
    let alloc = sqrt_stratified_sample(&sizes, budget)?;
    let strata: Vec<StratumAllocation> = names
        .into_iter()
        .zip(sizes.iter().zip(&alloc))
        .map(|(name, (&size, &allocated))| StratumAllocation { name, size, allocated })
        .collect();
    out.csv("sample_allocation.csv", &strata)?;
    let mut outcome = Outcome::default();
    if let Some(corpus) = corpus {
        let counts: BTreeMap<String, u64> = strata.iter().map(|s| (s.name.clone(), s.allocated)).collect();
        let picked = pick(&corpus.records, &counts, cfg.seed);
        out.text("sampled_corpus.jsonl", &write_scenarios(&picked))?;
        outcome = Outcome {
            scenarios: corpus.attempted(),
            failed: corpus.errors.len(),
            corpus_digest: Some(corpus.digest()),
        };
    }
    out.json("sample_allocation.json", &SampleReport { budget, strata })?;
    Ok(outcome)
}
