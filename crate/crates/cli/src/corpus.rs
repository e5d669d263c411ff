//! Corpus loading, per-line error collection and seeded per-type slicing.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use causal_probe_core::scenario::{corpus_digest, scan_scenarios, ScenarioRecord};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub error: String,
}

#[derive(Debug)]
pub struct Corpus {
    pub records: Vec<ScenarioRecord>,
    /// Lines that failed to parse or validate; each counts as a failed
    /// scenario.
    pub errors: Vec<LineError>,
}

impl Corpus {
    pub fn digest(&self) -> String {
        corpus_digest(&self.records)
    }

    /// Records plus unparseable lines.
    pub fn attempted(&self) -> usize {
        self.records.len() + self.errors.len()
    }

    pub fn count_by_type(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.scenario_type.clone()).or_insert(0) += 1;
        }
        out
    }
}

pub fn parse_corpus(text: &str) -> Corpus {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (line, r) in scan_scenarios(text) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("corpus {e}");
                errors.push(LineError {
                    line,
                    error: e.to_string(),
                });
            }
        }
    }
    Corpus { records, errors }
}

/// Reads the configured corpus and applies the type filter and per-type
/// limit. Fails when nothing is left to evaluate.
pub fn load(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.corpus.as_ref().context("no corpus configured (set --corpus)")?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    let mut corpus = parse_corpus(&text);
    corpus.records = slice(corpus.records, &cfg.scenario_types, cfg.per_type_limit, cfg.seed);
    if corpus.attempted() == 0 {
        bail!("corpus {} contains no scenarios", path.display());
    }
    Ok(corpus)
}

/// Keeps the listed types (all when empty) and, per type, a seeded random
/// subset of at most `limit` records. File order is preserved.
pub fn slice(
    records: Vec<ScenarioRecord>,
    types: &[String],
    limit: Option<usize>,
    seed: u64,
) -> Vec<ScenarioRecord> {
    let kept: Vec<ScenarioRecord> = records
        .into_iter()
        .filter(|r| types.is_empty() || types.contains(&r.scenario_type))
        .collect();
    let Some(limit) = limit else {
        return kept;
    };
    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in kept.iter().enumerate() {
        by_type.entry(&r.scenario_type).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; kept.len()];
    for idx in by_type.values() {
        let n = limit.min(idx.len());
        for k in rand::seq::index::sample(&mut rng, idx.len(), n) {
            chosen[idx[k]] = true;
        }
    }
    kept.into_iter()
        .zip(chosen)
        .filter_map(|(r, c)| c.then_some(r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use causal_probe_core::synthetic::mixed_corpus;

    #[test]
    fn slicing_is_seeded_and_ordered() {
        let all = mixed_corpus();
        let a = slice(all.clone(), &[], Some(3), 7);
        let b = slice(all.clone(), &[], Some(3), 7);
        assert_eq!(a, b);
        let counts = Corpus { records: a.clone(), errors: vec![] }.count_by_type();
        assert!(counts.values().all(|&n| n == 3), "{counts:?}");
        let pos = |id: &str| all.iter().position(|r| r.id == id).unwrap();
        assert!(a.windows(2).all(|w| pos(&w[0].id) < pos(&w[1].id)));
        assert_ne!(a, slice(all.clone(), &[], Some(3), 8));
    }

    #[test]
    fn type_filter() {
        let only = slice(mixed_corpus(), &["stationary".into()], None, 0);
        assert_eq!(only.len(), 10);
        assert!(only.iter().all(|r| r.scenario_type == "stationary"));
    }

    #[test]
    fn bad_lines_are_kept_as_errors() {
        let c = parse_corpus("{}\n\nnot json\n");
        assert!(c.records.is_empty());
        assert_eq!(c.errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(c.attempted(), 2);
    }
}
