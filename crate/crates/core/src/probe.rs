//! Training-free causal probes on the ego priors.
//!
//! The lateral-offset probe adds a speed-scaled sideways component to the
//! ego velocity; the inversion probe mirrors the ego history across the
//! current heading axis. A planner grounded in the scene should barely react
//! to either, while one that extrapolates its priors swerves or reverses its
//! maneuver.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, Direction, PlanRequest, PlanResponse, Planner};
use crate::geometry::{Pose2D, Vec2};
use crate::openloop::history_until;
use crate::scenario::{EgoState, ScenarioRecord};
use crate::trajectory::{lateral_longitudinal, TimedPose, Trajectory};

/// Published mean endpoint deviations of two trained planners under the
/// offset probe, in meters. Carried in reports for comparison only.
pub const REFERENCE_DEVIATIONS_M: [(&str, f64); 2] = [("CoT_grpo", 8.71), ("Omnidrive", 7.58)];

/// Verdict cut-offs on the flagged fraction and inversion rate.
pub const SHORTCUT_RATE: f64 = 0.5;
pub const GROUNDED_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    LateralOffset,
    DirectionInversion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub kinds: BTreeSet<ProbeKind>,
    /// Added lateral speed as a fraction of the ego speed. Zero gives a
    /// null perturbation.
    pub offset_factor: f64,
    pub deviation_threshold_m: f64,
    pub turn_threshold_m: f64,
    pub horizon_s: f64,
    pub dt_s: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            kinds: [ProbeKind::LateralOffset, ProbeKind::DirectionInversion].into(),
            offset_factor: 0.1,
            deviation_threshold_m: 1.85,
            turn_threshold_m: 1.0,
            horizon_s: 3.0,
            dt_s: crate::DEFAULT_TICK_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("no scenarios to probe")]
    NoScenarios,
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidSpec(m.into()));
        if self.kinds.is_empty() {
            return bad("at least one probe kind is required");
        }
        if !(self.offset_factor.is_finite() && self.offset_factor >= 0.0) {
            return bad("offset_factor must be finite and non-negative");
        }
        for (name, v) in [
            ("deviation_threshold_m", self.deviation_threshold_m),
            ("turn_threshold_m", self.turn_threshold_m),
            ("horizon_s", self.horizon_s),
            ("dt_s", self.dt_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ProbeError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Adds `factor·|v|` of lateral speed to the left of the heading.
pub fn perturb_lateral_offset(ego: &EgoState, factor: f64) -> EgoState {
    let delta = factor * ego.velocity.norm();
    EgoState {
        velocity: ego.velocity + Vec2::from_heading(ego.pose.heading()).perp() * delta,
        ..*ego
    }
}

/// Mirrors the history across the heading axis of `anchor`.
pub fn invert_history(history: &Trajectory, anchor: Pose2D) -> Trajectory {
    let h_a = anchor.heading();
    let points = history
        .points()
        .iter()
        .map(|p| {
            let (lon, lat) = anchor.to_local(p.position());
            let q = anchor.to_global(lon, -lat);
            TimedPose::new(p.t, q.x, q.y, 2.0 * h_a - p.pose.heading())
        })
        .collect();
    Trajectory::with_dt(points, history.dt()).expect("mirroring keeps timestamps")
}

/// Signed lateral distance between the plan endpoints in the anchor frame.
pub fn final_lateral_deviation(baseline: &Trajectory, perturbed: &Trajectory, anchor: Pose2D) -> f64 {
    let (_, lat_b) = lateral_longitudinal(baseline.last().pose, anchor);
    let (_, lat_p) = lateral_longitudinal(perturbed.last().pose, anchor);
    lat_p - lat_b
}

pub fn classify_direction(plan: &Trajectory, anchor: Pose2D, turn_threshold: f64) -> Direction {
    let (_, lat) = lateral_longitudinal(plan.last().pose, anchor);
    if lat > turn_threshold {
        Direction::Left
    } else if lat < -turn_threshold {
        Direction::Right
    } else {
        Direction::Straight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub scenario_id: String,
    pub scenario_type: String,
    pub kind: ProbeKind,
    pub ego_speed_mps: f64,
    pub baseline_plan: Trajectory,
    pub perturbed_plan: Trajectory,
    pub final_lateral_deviation_m: f64,
    pub direction_baseline: Direction,
    pub direction_perturbed: Direction,
    pub flipped: bool,
    pub reasoning_direction: Option<Direction>,
    pub contradiction: bool,
    pub flagged: bool,
}

/// A probe that could not be completed; excluded from every rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidOutcome {
    pub scenario_id: String,
    pub kind: ProbeKind,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ShortcutReliant,
    Grounded,
    Inconclusive,
}

/// Shortcut-reliant if either rate reaches 0.5, grounded if every measured
/// rate is below 0.1, inconclusive otherwise or when nothing was measured.
pub fn verdict(flagged_fraction: Option<f64>, inversion_rate: Option<f64>) -> Verdict {
    let rates: Vec<f64> = [flagged_fraction, inversion_rate].into_iter().flatten().collect();
    if rates.is_empty() {
        Verdict::Inconclusive
    } else if rates.iter().any(|&r| r >= SHORTCUT_RATE) {
        Verdict::ShortcutReliant
    } else if rates.iter().all(|&r| r < GROUNDED_RATE) {
        Verdict::Grounded
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub spec: PerturbationSpec,
    pub outcomes: Vec<ProbeOutcome>,
    pub invalid: Vec<InvalidOutcome>,
    /// Mean |deviation| over valid offset outcomes.
    pub mean_abs_deviation_m: Option<f64>,
    /// Fraction of valid offset outcomes beyond the deviation threshold.
    pub flagged_fraction: Option<f64>,
    /// Fraction of valid inversion outcomes with a non-straight baseline
    /// whose direction changed.
    pub inversion_rate: Option<f64>,
    pub contradictions: usize,
    pub verdict: Verdict,
    pub reference_deviations_m: BTreeMap<String, f64>,
}

fn request_at_t0(rec: &ScenarioRecord, spec: &PerturbationSpec) -> PlanRequest {
    let history = history_until(rec, &[], rec.t0(), f64::INFINITY);
    PlanRequest::new(
        rec,
        rec.t0(),
        rec.ego_state,
        history,
        Some(PlanRequest::scene_of(rec)),
        spec.horizon_s,
        spec.dt_s,
    )
}

/// Runs every probe kind of `spec` on one scenario. `label` is an external
/// reasoning-direction annotation used when the agent supplies none.
pub fn probe_scenario(
    planner: &mut dyn Planner,
    rec: &ScenarioRecord,
    spec: &PerturbationSpec,
    label: Option<Direction>,
) -> Vec<Result<ProbeOutcome, InvalidOutcome>> {
    let base_req = request_at_t0(rec, spec);
    let baseline = planner.plan(&base_req);
    let anchor = rec.ego_state.pose;
    spec.kinds
        .iter()
        .map(|&kind| {
            let invalid = |e: &AgentError| InvalidOutcome {
                scenario_id: rec.id.clone(),
                kind,
                error: format!("agent_error:{}", e.code()),
            };
            let baseline = baseline.as_ref().map_err(invalid)?;
            let mut req = base_req.clone();
            match kind {
                ProbeKind::LateralOffset => {
                    req.ego_state = Some(perturb_lateral_offset(&rec.ego_state, spec.offset_factor));
                }
                ProbeKind::DirectionInversion => {
                    req.ego_history = req.ego_history.as_ref().map(|h| invert_history(h, anchor));
                }
            }
            let perturbed = planner.plan(&req).map_err(|e| invalid(&e))?;
            Ok(outcome(rec, spec, kind, baseline, perturbed, label))
        })
        .collect()
}

fn outcome(
    rec: &ScenarioRecord,
    spec: &PerturbationSpec,
    kind: ProbeKind,
    baseline: &PlanResponse,
    perturbed: PlanResponse,
    label: Option<Direction>,
) -> ProbeOutcome {
    let anchor = rec.ego_state.pose;
    let deviation = final_lateral_deviation(&baseline.trajectory, &perturbed.trajectory, anchor);
    let direction_baseline = classify_direction(&baseline.trajectory, anchor, spec.turn_threshold_m);
    let direction_perturbed = classify_direction(&perturbed.trajectory, anchor, spec.turn_threshold_m);
    let flipped = direction_baseline != direction_perturbed;
    let reasoning_direction = perturbed.reasoning_direction.or(label);
    let contradiction = reasoning_direction.is_some_and(|d| d != direction_perturbed);
    let flagged = match kind {
        ProbeKind::LateralOffset => deviation.abs() > spec.deviation_threshold_m,
        ProbeKind::DirectionInversion => flipped,
    };
    ProbeOutcome {
        scenario_id: rec.id.clone(),
        scenario_type: rec.scenario_type.clone(),
        kind,
        ego_speed_mps: rec.ego_state.speed(),
        baseline_plan: baseline.trajectory.clone(),
        perturbed_plan: perturbed.trajectory,
        final_lateral_deviation_m: deviation,
        direction_baseline,
        direction_perturbed,
        flipped,
        reasoning_direction,
        contradiction,
        flagged,
    }
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Aggregates per-scenario outcomes into a report.
pub fn aggregate(
    spec: &PerturbationSpec,
    results: Vec<Result<ProbeOutcome, InvalidOutcome>>,
) -> ProbeReport {
    let mut outcomes = Vec::new();
    let mut invalid = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => invalid.push(e),
        }
    }
    let offset: Vec<&ProbeOutcome> = outcomes.iter().filter(|o| o.kind == ProbeKind::LateralOffset).collect();
    let turns: Vec<&ProbeOutcome> = outcomes
        .iter()
        .filter(|o| o.kind == ProbeKind::DirectionInversion && o.direction_baseline != Direction::Straight)
        .collect();
    let mean_abs_deviation_m = (!offset.is_empty()).then(|| {
        offset.iter().map(|o| o.final_lateral_deviation_m.abs()).sum::<f64>() / offset.len() as f64
    });
    let flagged_fraction = fraction(offset.iter().filter(|o| o.flagged).count(), offset.len());
    let inversion_rate = fraction(turns.iter().filter(|o| o.flipped).count(), turns.len());
    let contradictions = outcomes.iter().filter(|o| o.contradiction).count();
    ProbeReport {
        spec: spec.clone(),
        verdict: verdict(flagged_fraction, inversion_rate),
        outcomes,
        invalid,
        mean_abs_deviation_m,
        flagged_fraction,
        inversion_rate,
        contradictions,
        reference_deviations_m: REFERENCE_DEVIATIONS_M
            .iter()
            .map(|&(k, v)| (k.to_owned(), v))
            .collect(),
    }
}

/// Probes every scenario sequentially with one planner.
pub fn run_probe(
    planner: &mut dyn Planner,
    scenarios: &[ScenarioRecord],
    spec: &PerturbationSpec,
    labels: &BTreeMap<String, Direction>,
) -> Result<ProbeReport, ProbeError> {
    spec.validate()?;
    if scenarios.is_empty() {
        return Err(ProbeError::NoScenarios);
    }
    let results = scenarios
        .iter()
        .flat_map(|rec| probe_scenario(planner, rec, spec, labels.get(&rec.id).copied()))
        .collect();
    Ok(aggregate(spec, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{PriorExtrapolator, SceneGrounded};
    use crate::synthetic::{mixed_corpus, straight_scenario, SceneParams};
    use proptest::prelude::*;

    fn ego(heading: f64, v: Vec2) -> EgoState {
        EgoState {
            pose: Pose2D::new(1.0, 2.0, heading),
            velocity: v,
            acceleration: Vec2::ZERO,
            t: 0.0,
        }
    }

    #[test]
    fn offset_examples() {
        let still = ego(0.3, Vec2::ZERO);
        assert_eq!(perturb_lateral_offset(&still, 0.1), still);
        let e = perturb_lateral_offset(&ego(0.0, Vec2::new(10.0, 0.0)), 0.1);
        assert_eq!(e.velocity, Vec2::new(10.0, 1.0));
        let e0 = ego(0.7, Vec2::new(3.0, 4.0));
        let e1 = perturb_lateral_offset(&e0, 0.1);
        let added = e1.velocity - e0.velocity;
        assert!((added.norm() - 0.5).abs() < 1e-12);
    }

    fn rows_with_lat(lats: &[f64]) -> Trajectory {
        let rows: Vec<[f64; 4]> = lats
            .iter()
            .enumerate()
            .map(|(i, &lat)| {
                let t = -0.1 * (lats.len() - 1 - i) as f64;
                [t, 10.0 * t, lat, 0.0]
            })
            .collect();
        Trajectory::from_rows(&rows).unwrap()
    }

    #[test]
    fn inversion_examples() {
        let anchor = Pose2D::new(0.0, 0.0, 0.0);
        let on_axis = rows_with_lat(&[0.0; 5]);
        assert_eq!(invert_history(&on_axis, anchor), on_axis);
        let merged = rows_with_lat(&[2.0, 1.5, 1.0, 0.5, 0.0]);
        let inv = invert_history(&merged, anchor);
        let lats: Vec<f64> = inv.points().iter().map(|p| p.pose.y).collect();
        assert_eq!(lats, vec![-2.0, -1.5, -1.0, -0.5, 0.0]);
    }

    #[test]
    fn deviation_and_direction_examples() {
        let anchor = Pose2D::new(0.0, 0.0, 0.0);
        let straight = Trajectory::from_rows(&[[0.1, 1.0, 0.0, 0.0], [3.0, 30.0, 0.0, 0.0]]).unwrap();
        assert_eq!(final_lateral_deviation(&straight, &straight, anchor), 0.0);
        let drift = Trajectory::from_rows(&[[0.1, 1.0, 0.1, 0.0], [3.0, 30.0, 3.0, 0.0]]).unwrap();
        assert_eq!(final_lateral_deviation(&straight, &drift, anchor), 3.0);
        assert_eq!(classify_direction(&straight, anchor, 1.0), Direction::Straight);
        let left = Trajectory::from_rows(&[[3.0, 30.0, 2.0, 0.0]]).unwrap();
        assert_eq!(classify_direction(&left, anchor, 1.0), Direction::Left);
        let slight = Trajectory::from_rows(&[[3.0, 30.0, -0.5, 0.0]]).unwrap();
        assert_eq!(classify_direction(&slight, anchor, 1.0), Direction::Straight);
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(verdict(Some(0.5), Some(0.0)), Verdict::ShortcutReliant);
        assert_eq!(verdict(Some(0.0), Some(0.5)), Verdict::ShortcutReliant);
        assert_eq!(verdict(Some(0.09), Some(0.0)), Verdict::Grounded);
        assert_eq!(verdict(Some(0.1), Some(0.0)), Verdict::Inconclusive);
        assert_eq!(verdict(None, None), Verdict::Inconclusive);
    }

    #[test]
    fn extrapolator_is_shortcut_reliant_and_grounded_is_not() {
        let spec = PerturbationSpec::default();
        let rec = straight_scenario("s", &SceneParams::with_speed(10.0));
        let report = run_probe(&mut PriorExtrapolator, std::slice::from_ref(&rec), &spec, &BTreeMap::new()).unwrap();
        let offset = report.outcomes.iter().find(|o| o.kind == ProbeKind::LateralOffset).unwrap();
        assert!((offset.final_lateral_deviation_m - 3.0).abs() < 1e-9);
        assert_eq!(report.verdict, Verdict::ShortcutReliant);

        let corpus = mixed_corpus();
        let report = run_probe(&mut SceneGrounded, &corpus, &spec, &BTreeMap::new()).unwrap();
        assert_eq!(report.flagged_fraction, Some(0.0));
        assert_eq!(report.inversion_rate, Some(0.0));
        assert_eq!(report.verdict, Verdict::Grounded);
        assert!(report.invalid.is_empty());
    }

    #[test]
    fn labels_drive_contradictions() {
        let spec = PerturbationSpec::default();
        let rec = straight_scenario("s", &SceneParams::with_speed(10.0));
        let labels = BTreeMap::from([("s".to_owned(), Direction::Straight)]);
        let report = run_probe(&mut PriorExtrapolator, std::slice::from_ref(&rec), &spec, &labels).unwrap();
        // the offset plan ends 3 m to the left while the label says straight
        assert_eq!(report.contradictions, 1);
    }

    #[test]
    fn empty_or_bad_input_is_rejected() {
        let spec = PerturbationSpec::default();
        assert_eq!(
            run_probe(&mut SceneGrounded, &[], &spec, &BTreeMap::new()),
            Err(ProbeError::NoScenarios)
        );
        let bad = PerturbationSpec {
            deviation_threshold_m: 0.0,
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn inversion_is_involution(lats in prop::collection::vec(-5.0f64..5.0, 2..20), hs in prop::collection::vec(-3.0f64..3.0, 20),
                                   ax in -50.0f64..50.0, ay in -50.0f64..50.0, ah in -3.1f64..3.1) {
            let n = lats.len();
            let rows: Vec<[f64; 4]> = (0..n).map(|i| [i as f64 * 0.1, i as f64 + ax, lats[i] + ay, hs[i]]).collect();
            let h = Trajectory::from_rows(&rows).unwrap();
            let anchor = Pose2D::new(ax, ay, ah);
            let twice = invert_history(&invert_history(&h, anchor), anchor);
            for (a, b) in h.points().iter().zip(twice.points()) {
                prop_assert_eq!(a.t, b.t);
                prop_assert!(a.position().distance(b.position()) < 1e-9);
                prop_assert!(crate::geometry::angle_diff_abs(a.pose.heading(), b.pose.heading()) < 1e-9);
            }
            let at_anchor = Trajectory::from_rows(&[[0.0, ax, ay, ah]]).unwrap();
            let fixed = invert_history(&at_anchor, anchor);
            prop_assert_eq!(fixed.first().position(), anchor.position());
        }

        #[test]
        fn offset_keeps_longitudinal_and_grows_speed(h in -3.1f64..3.1, lon in -20.0f64..20.0, lat in 0.0f64..20.0, factor in 0.0f64..1.0) {
            let dir = Vec2::from_heading(h);
            let v = dir * lon + dir.perp() * lat;
            let e0 = ego(h, v);
            let e1 = perturb_lateral_offset(&e0, factor);
            prop_assert!((e1.velocity.dot(dir) - e0.velocity.dot(dir)).abs() < 1e-9);
            prop_assert!(e1.velocity.norm() >= e0.velocity.norm() - 1e-12);
            prop_assert_eq!(e1.pose, e0.pose);
            prop_assert_eq!(e1.acceleration, e0.acceleration);
        }
    }
}
