//! Regenerates the seed inputs under `fuzz/corpus/<target>/`.
//!
//! Usage: `cargo run -p causal-probe-core --example fuzz_seeds -- fuzz/corpus`

use std::path::{Path, PathBuf};

use causal_probe_core::agents::{ping_line, PlanRequest, PlanResponse, Planner, PriorExtrapolator, Response};
use causal_probe_core::attention::{uniform_causal_dump, SegmentMap};
use causal_probe_core::grpo::{GroupOutput, GroupSample, Rewards};
use causal_probe_core::scenario::write_scenarios;
use causal_probe_core::synthetic::{curve_scenario, stationary_scenario, straight_scenario, SceneParams};

fn put(dir: &Path, target: &str, name: &str, bytes: impl AsRef<[u8]>) -> std::io::Result<()> {
    let d = dir.join(target);
    std::fs::create_dir_all(&d)?;
    std::fs::write(d.join(name), bytes)
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));
    let p = SceneParams::with_speed(6.0);
    let recs = [
        straight_scenario("straight", &p),
        curve_scenario("curve", &p, true),
        stationary_scenario("stationary", &p),
    ];
    for r in &recs {
        put(&dir, "scenario_line", &format!("{}.jsonl", r.id), write_scenarios(std::slice::from_ref(r)))?;
    }
    put(&dir, "scenario_line", "two_lines.jsonl", write_scenarios(&recs[..2]))?;

    let segments = SegmentMap::new([("priors".to_owned(), 0..3), ("planning".to_owned(), 3..5)], 5)
        .expect("valid segments");
    put(&dir, "attention_dump", "uniform_2x1x5.bin", uniform_causal_dump(2, 1, 5, segments).to_bytes())?;
    let segments = SegmentMap::new(
        [
            ("image".to_owned(), 0..2),
            ("reasoning".to_owned(), 2..3),
            ("planning".to_owned(), 3..4),
        ],
        4,
    )
    .expect("valid segments");
    put(&dir, "attention_dump", "uniform_1x2x4.bin", uniform_causal_dump(1, 2, 4, segments).to_bytes())?;

    let rec = &recs[0];
    let req = PlanRequest::new(
        rec,
        rec.t0(),
        rec.ego_state,
        rec.ego_history.clone(),
        Some(PlanRequest::scene_of(rec)),
        3.0,
        0.5,
    );
    put(&dir, "plan_request", "plan.json", req.to_json_line())?;
    put(&dir, "plan_request", "plan_no_scene.json", PlanRequest { scene: None, ..req.clone() }.to_json_line())?;
    put(&dir, "plan_request", "ping.json", ping_line())?;

    let plan = PriorExtrapolator.plan(&req).expect("extrapolator plans");
    put(&dir, "plan_response", "plan.json", plan.to_json_line())?;
    let with_text = PlanResponse {
        reasoning_text: Some("<think>keep lane</think><answer>go</answer>".into()),
        ..plan
    };
    put(&dir, "plan_response", "plan_with_reasoning.json", with_text.to_json_line())?;
    put(&dir, "plan_response", "pong.json", Response::Pong.to_json_line())?;
    put(&dir, "plan_response", "error.json", Response::Error("no lane".into()).to_json_line())?;

    let output = |location: f64, p: f64| GroupOutput {
        rewards: Rewards {
            location,
            velocity: 1.0 - location,
            format: 1.0,
        },
        policy_prob: p,
        old_policy_prob: 0.5,
        ref_policy_prob: 0.4,
    };
    let group = GroupSample {
        outputs: (0..8).map(|i| output(i as f64 / 8.0, 0.3 + 0.05 * i as f64)).collect(),
    };
    put(&dir, "grpo_group", "eight.json", serde_json::to_string(&group).expect("serializable"))?;
    let flat = GroupSample {
        outputs: (0..8).map(|_| output(0.5, 0.5)).collect(),
    };
    put(&dir, "grpo_group", "flat.json", serde_json::to_string(&flat).expect("serializable"))?;
    println!("seeds written to {}", dir.display());
    Ok(())
}
