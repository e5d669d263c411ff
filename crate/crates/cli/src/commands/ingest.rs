//! `ingest`: validate a corpus and write its canonical form.

use std::collections::BTreeMap;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use causal_probe_core::scenario::write_scenarios;

use super::score::LineErrorRecord;
use super::Outcome;
use crate::config::RunConfig;
use crate::corpus;
use crate::output::OutDir;

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    pub corpus_digest: String,
    pub records: usize,
    pub by_type: BTreeMap<String, usize>,
    pub errors: Vec<LineErrorRecord>,
}

pub fn ingest(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome> {
    let corpus = corpus::load(cfg)?;
    out.text("corpus.jsonl", &write_scenarios(&corpus.records))?;
    let digest = corpus.digest();
    out.json(
        "ingest_summary.json",
        &IngestSummary {
            corpus_digest: digest.clone(),
            records: corpus.records.len(),
            by_type: corpus.count_by_type(),
            errors: corpus.errors.iter().map(Into::into).collect(),
        },
    )?;
    Ok(Outcome {
        scenarios: corpus.attempted(),
        failed: corpus.errors.len(),
        corpus_digest: Some(digest),
    })
}
