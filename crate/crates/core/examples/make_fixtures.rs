//! Writes a demo workspace: the 50-scene synthetic corpus, a small attention
//! dump whose planning tokens lean harder on the priors in deeper layers,
//! and a file of GRPO groups.
//!
//! Usage: `cargo run -p causal-probe-core --example make_fixtures -- <dir>`

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use causal_probe_core::attention::{AttentionDump, SegmentMap};
use causal_probe_core::grpo::{GroupOutput, GroupSample, Rewards};
use causal_probe_core::scenario::write_scenarios;
use causal_probe_core::synthetic::mixed_corpus;

const SEGMENTS: [(&str, usize, usize); 5] = [
    ("image", 0, 8),
    ("priors", 8, 12),
    ("other_text", 12, 14),
    ("reasoning", 14, 19),
    ("planning", 19, 24),
];

fn demo_dump(layers: usize, heads: usize) -> AttentionDump {
    let seq = SEGMENTS[SEGMENTS.len() - 1].2;
    let segments =
        SegmentMap::new(SEGMENTS.iter().map(|&(n, a, b)| (n.to_owned(), a..b)), seq).expect("valid segments");
    let mut w = Vec::with_capacity(layers * heads * seq * seq);
    for layer in 0..layers {
        // relative pull of prior tokens rises with depth
        let prior_weight = 1.0 + 2.0 * layer as f64;
        for head in 0..heads {
            for i in 0..seq {
                let raw: Vec<f64> = (0..seq)
                    .map(|j| {
                        if j > i {
                            0.0
                        } else if (8..12).contains(&j) {
                            prior_weight * (1.0 + 0.1 * head as f64)
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                w.extend(raw.iter().map(|x| (x / total) as f32));
            }
        }
    }
    AttentionDump::new(layers, heads, seq, segments, w).expect("consistent shape")
}

fn demo_groups(n: usize, size: usize, seed: u64) -> Vec<GroupSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GroupSample {
            outputs: (0..size)
                .map(|_| {
                    let old: f64 = rng.gen_range(0.05..0.9);
                    GroupOutput {
                        rewards: Rewards {
                            location: rng.gen_range(0.0..1.0),
                            velocity: rng.gen_range(0.0..1.0),
                            format: if rng.gen_bool(0.8) { 1.0 } else { 0.0 },
                        },
                        policy_prob: old * rng.gen_range(0.7..1.3),
                        old_policy_prob: old,
                        ref_policy_prob: old * rng.gen_range(0.8..1.2),
                    }
                })
                .collect(),
        })
        .collect()
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("corpus.jsonl"), write_scenarios(&mixed_corpus()))?;
    std::fs::write(dir.join("attention.bin"), demo_dump(4, 2).to_bytes())?;
    let groups: String = demo_groups(4, 8, 7)
        .iter()
        .map(|g| serde_json::to_string(g).expect("serializable") + "\n")
        .collect();
    std::fs::write(dir.join("groups.jsonl"), groups)?;
    println!("wrote corpus.jsonl, attention.bin and groups.jsonl to {}", dir.display());
    Ok(())
}
