//! Cross-module flows through the public API: corpus files, replay,
//! probes, the mock planners' invariances and the attention file format.

use std::collections::BTreeMap;
use std::io::Cursor;

use causal_probe_core::agents::{
    parse_response_line, serve, AblationFlag, AgentKind, AgentSpec, PlanRequest, Planner, PriorExtrapolator,
    Response, SceneGrounded,
};
use causal_probe_core::attention::{build_report, load_dump, uniform_causal_dump, SegmentMap};
use causal_probe_core::closedloop::{evaluate_closed_loop, run_replay, ReplayConfig};
use causal_probe_core::openloop::{evaluate_open_loop, Horizon, OpenLoopConfig};
use causal_probe_core::probe::{invert_history, perturb_lateral_offset, run_probe, PerturbationSpec, Verdict};
use causal_probe_core::scenario::{corpus_digest, load_scenarios, write_scenarios, ScenarioRecord};
use causal_probe_core::synthetic::{mixed_corpus, straight_scenario, SceneParams};

fn request(rec: &ScenarioRecord) -> PlanRequest {
    PlanRequest::new(
        rec,
        rec.t0(),
        rec.ego_state,
        rec.ego_history.clone(),
        Some(PlanRequest::scene_of(rec)),
        3.0,
        0.1,
    )
}

#[test]
fn corpus_survives_a_trip_through_disk() {
    let recs = mixed_corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    std::fs::write(&path, write_scenarios(&recs)).unwrap();
    let loaded = load_scenarios(&path).unwrap();
    assert_eq!(loaded, recs);
    assert_eq!(corpus_digest(&loaded), corpus_digest(&recs));
    assert_eq!(write_scenarios(&loaded), write_scenarios(&recs));
}

#[test]
fn replay_is_bit_identical_across_runs() {
    let cfg = ReplayConfig::default();
    for rec in mixed_corpus().iter().step_by(7) {
        let mut a = SceneGrounded;
        let mut b = SceneGrounded;
        let ra = run_replay(rec, &mut a, &cfg).unwrap();
        let rb = run_replay(rec, &mut b, &cfg).unwrap();
        assert_eq!(ra, rb, "{}", rec.id);
    }
}

#[test]
fn scene_grounded_ignores_perturbed_priors() {
    for rec in &mixed_corpus() {
        let base = request(rec);
        let mut g = SceneGrounded;
        let want = g.plan(&base).unwrap();
        let mut offset = base.clone();
        offset.ego_state = Some(perturb_lateral_offset(&rec.ego_state, 0.1));
        let mut inverted = base.clone();
        inverted.ego_history = Some(invert_history(&rec.ego_history, rec.ego_state.pose));
        assert_eq!(g.plan(&offset).unwrap(), want, "{} offset", rec.id);
        assert_eq!(g.plan(&inverted).unwrap(), want, "{} inverted", rec.id);
        let ablated = base.clone().with_ablations([AblationFlag::NoHistory, AblationFlag::NoNavigation]);
        assert_eq!(g.plan(&ablated).unwrap(), want, "{} ablated", rec.id);
    }
}

#[test]
fn extrapolator_ignores_the_scene() {
    for rec in mixed_corpus().iter().step_by(5) {
        let with_scene = request(rec);
        let mut without = with_scene.clone();
        without.scene = None;
        let mut p = PriorExtrapolator;
        assert_eq!(p.plan(&with_scene).unwrap(), p.plan(&without).unwrap(), "{}", rec.id);
    }
}

#[test]
fn extrapolator_at_ten_mps_deviates_three_meters() {
    let recs: Vec<_> = (0..4)
        .map(|i| straight_scenario(&format!("s{i}"), &SceneParams::with_speed(10.0)))
        .collect();
    let mut p = PriorExtrapolator;
    let spec = PerturbationSpec::default();
    let report = run_probe(&mut p, &recs, &spec, &BTreeMap::new()).unwrap();
    assert_eq!(report.verdict, Verdict::ShortcutReliant);
    assert_eq!(report.flagged_fraction, Some(1.0));
    let dev = report.mean_abs_deviation_m.unwrap();
    assert!((dev - 3.0).abs() < 1e-9, "{dev}");
}

#[test]
fn noisy_planner_sits_between_the_two_mocks() {
    let recs = mixed_corpus();
    let spec = PerturbationSpec::default();
    let flagged = |spec_agent: AgentSpec| {
        let mut p = spec_agent.build(&recs, 3).unwrap();
        run_probe(p.as_mut(), &recs, &spec, &BTreeMap::new())
            .unwrap()
            .mean_abs_deviation_m
            .unwrap()
    };
    let grounded = flagged(AgentSpec::of_kind(AgentKind::MockSceneGrounded));
    let noisy = flagged(AgentSpec {
        noise_sigma_m: 0.5,
        ..AgentSpec::of_kind(AgentKind::MockNoisy)
    });
    let shortcut = flagged(AgentSpec::of_kind(AgentKind::MockPriorExtrapolator));
    assert_eq!(grounded, 0.0);
    assert!(noisy > grounded && noisy < shortcut, "{grounded} {noisy} {shortcut}");
}

#[test]
fn expert_echo_is_perfect_in_both_loops() {
    let recs = mixed_corpus();
    let mut echo = AgentSpec::of_kind(AgentKind::MockExpertEcho).build(&recs, 0).unwrap();
    for rec in recs.iter().step_by(3) {
        for r in evaluate_open_loop(rec, echo.as_mut(), &Horizon::ALL, &OpenLoopConfig::default()) {
            assert_eq!(r.score, 100.0, "{} {}", rec.id, r.horizon_s);
        }
        let cl = evaluate_closed_loop(rec, echo.as_mut(), &ReplayConfig::default());
        assert_eq!(cl.score, 100.0, "{}: {:?}", rec.id, cl);
    }
}

#[test]
fn served_planner_answers_like_the_local_one() {
    let recs = mixed_corpus();
    let reqs: Vec<PlanRequest> = recs.iter().step_by(9).map(request).collect();
    let input: String = reqs.iter().map(|r| r.to_json_line() + "\n").collect();
    let mut out = Vec::new();
    serve(Cursor::new(input), &mut out, &mut SceneGrounded).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
    assert_eq!(lines.len(), reqs.len());
    for (line, req) in lines.iter().zip(&reqs) {
        let Response::Plan(remote) = parse_response_line(line).unwrap() else {
            panic!("expected a plan, got {line}");
        };
        let local = SceneGrounded.plan(req).unwrap();
        assert_eq!(remote.trajectory.points(), local.trajectory.points());
    }
}

#[test]
fn attention_dump_round_trips_through_a_file() {
    let segments = SegmentMap::new(
        [
            ("image".to_owned(), 0..6),
            ("priors".to_owned(), 6..9),
            ("reasoning".to_owned(), 9..13),
            ("planning".to_owned(), 13..16),
        ],
        16,
    )
    .unwrap();
    let dump = uniform_causal_dump(3, 2, 16, segments);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.bin");
    std::fs::write(&path, dump.to_bytes()).unwrap();
    let loaded = load_dump(&path).unwrap();
    assert_eq!(loaded, dump);
    let report = build_report(&loaded, &["reasoning", "planning"]).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!(
        report.rows.iter().map(|r| r.layer).collect::<Vec<_>>(),
        [0, 0, 1, 1, 2, 2]
    );
    for row in &report.rows {
        // causal rows: reasoning never sees planning tokens
        if row.target == "reasoning" {
            assert_eq!(row.proportions["planning"], 0.0);
        }
    }
}
