//! Non-reactive replay and the closed-loop metrics.
//!
//! The ego tracks the most recent plan exactly (linear interpolation between
//! plan samples) and asks for a new plan every replan period; every other
//! object replays its log. The eight sub-metrics are computed on the
//! resulting track and combined as `gate × weighted × 100`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, PlanRequest, Planner};
use crate::geometry::{distance_to_union, project_onto_polyline, OrientedBox, Pose2D, Vec2};
use crate::openloop::history_until;
use crate::scenario::{EgoState, MapModel, ObjectCategory, ScenarioRecord, TrackedObject};
use crate::trajectory::{TimedPose, Trajectory, TrajectoryError};

/// Corner distance beyond which the ego has left the drivable area.
pub const DRIVABLE_TOLERANCE_M: f64 = 0.3;
/// Progress ratio below which the progress gate closes.
pub const PROGRESS_GATE: f64 = 0.2;
/// Floor applied to both progress values.
pub const PROGRESS_FLOOR_M: f64 = 0.1;
pub const TTC_THRESHOLD_S: f64 = 0.95;
/// Over-speed tolerance integrated over the scenario, m/s.
pub const OVERSPEED_TOLERANCE_MPS: f64 = 2.23;
/// Wrong-way distance per 1 s window below which direction is compliant.
pub const WRONG_WAY_OK_M: f64 = 2.0;
/// Wrong-way distance per 1 s window above which direction fails.
pub const WRONG_WAY_FAIL_M: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComfortBounds {
    pub lon_accel_min: f64,
    pub lon_accel_max: f64,
    pub lat_accel_abs: f64,
    pub yaw_rate_abs: f64,
    pub yaw_accel_abs: f64,
    pub lon_jerk_abs: f64,
    pub jerk_abs: f64,
}

impl Default for ComfortBounds {
    fn default() -> Self {
        Self {
            lon_accel_min: -4.05,
            lon_accel_max: 2.40,
            lat_accel_abs: 4.89,
            yaw_rate_abs: 0.95,
            yaw_accel_abs: 1.93,
            lon_jerk_abs: 4.13,
            jerk_abs: 8.37,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub tick_s: f64,
    pub replan_period_s: f64,
    pub ttc_horizon_s: f64,
    pub ttc_step_s: f64,
    pub agent_timeout_s: f64,
    /// Horizon requested from the agent at each replan.
    pub plan_horizon_s: f64,
    pub history_window_s: f64,
    pub ego_half_length_m: f64,
    pub ego_half_width_m: f64,
    /// Objects slower than this at contact count as stopped.
    pub at_fault_speed_mps: f64,
    pub lane_search_radius_m: f64,
    pub send_scene: bool,
    pub comfort: ComfortBounds,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            tick_s: crate::DEFAULT_TICK_S,
            replan_period_s: 1.0,
            ttc_horizon_s: 3.0,
            ttc_step_s: 0.1,
            agent_timeout_s: 30.0,
            plan_horizon_s: 3.0,
            history_window_s: 2.0,
            ego_half_length_m: 2.588,
            ego_half_width_m: 1.1485,
            at_fault_speed_mps: 0.1,
            lane_search_radius_m: 10.0,
            send_scene: true,
            comfort: ComfortBounds::default(),
        }
    }
}

impl ReplayConfig {
    pub fn ego_box(&self, pose: Pose2D) -> OrientedBox {
        OrientedBox::new(pose, self.ego_half_length_m, self.ego_half_width_m)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("agent_error: {0}")]
    Agent(#[from] AgentError),
    #[error("plan at t={t} covers {covered} s but {needed} s are needed")]
    PlanTooShort { t: f64, covered: f64, needed: f64 },
    #[error("invalid plan: {0}")]
    Plan(#[from] TrajectoryError),
    #[error("invalid replay configuration: {0}")]
    Config(String),
    #[error("map has no drivable area")]
    NoDrivableArea,
}

impl ReplayError {
    pub fn tag(&self) -> String {
        match self {
            ReplayError::Agent(e) => format!("agent_error:{}", e.code()),
            ReplayError::PlanTooShort { .. } | ReplayError::Plan(_) => "invalid_plan".into(),
            ReplayError::Config(_) => "config_error".into(),
            ReplayError::NoDrivableArea => "map_error".into(),
        }
    }
}

/// Finite-difference derivatives of the ego track, one value per tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Derivatives {
    pub velocity: Vec<Vec2>,
    pub lon_accel: Vec<f64>,
    pub lat_accel: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
    pub lon_jerk: Vec<f64>,
    pub jerk: Vec<f64>,
}

/// Central differences inside, one-sided at the ends.
fn gradient<T>(xs: &[T], dt: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let n = xs.len();
    if n < 2 {
        return xs.iter().map(|&x| (x - x) * 0.0).collect();
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (xs[1] - xs[0]) * (1.0 / dt)
            } else if i == n - 1 {
                (xs[n - 1] - xs[n - 2]) * (1.0 / dt)
            } else {
                (xs[i + 1] - xs[i - 1]) * (0.5 / dt)
            }
        })
        .collect()
}

fn unwrap_headings(track: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(track.len());
    let mut prev: Option<f64> = None;
    for p in track.points() {
        let h = p.pose.heading();
        let u = match prev {
            None => h,
            Some(q) => q + crate::geometry::wrap_angle(h - q),
        };
        out.push(u);
        prev = Some(u);
    }
    out
}

impl Derivatives {
    pub fn of_track(track: &Trajectory, dt: f64) -> Self {
        let pos = track.positions();
        let velocity = gradient(&pos, dt);
        let accel = gradient(&velocity, dt);
        let heading_dirs: Vec<Vec2> = track
            .points()
            .iter()
            .map(|p| Vec2::from_heading(p.pose.heading()))
            .collect();
        let lon_accel: Vec<f64> = accel.iter().zip(&heading_dirs).map(|(a, h)| a.dot(*h)).collect();
        let lat_accel = accel.iter().zip(&heading_dirs).map(|(a, h)| a.dot(h.perp())).collect();
        let yaw_rate = gradient(&unwrap_headings(track), dt);
        let yaw_accel = gradient(&yaw_rate, dt);
        let lon_jerk = gradient(&lon_accel, dt);
        let jerk = gradient(&accel, dt).iter().map(|j| j.norm()).collect();
        Self {
            velocity,
            lon_accel,
            lat_accel,
            yaw_rate,
            yaw_accel,
            lon_jerk,
            jerk,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub ego_track: Trajectory,
    pub replan_log: Vec<(f64, Trajectory)>,
    pub derivatives: Derivatives,
}

impl Rollout {
    /// Builds a rollout from a given ego track (no agent involved).
    pub fn from_track(ego_track: Trajectory, tick_s: f64) -> Self {
        let derivatives = Derivatives::of_track(&ego_track, tick_s);
        Self {
            ego_track,
            replan_log: Vec::new(),
            derivatives,
        }
    }
}

/// Ego state handed to the agent at replan tick `k`: central differences
/// using the next pose on the plan being tracked.
fn replan_state(
    rec: &ScenarioRecord,
    track: &[TimedPose],
    current: Option<&Trajectory>,
    tick: f64,
) -> EgoState {
    let now = *track.last().expect("track starts at t0");
    let (Some(plan), true) = (current, track.len() >= 2) else {
        return rec.ego_state;
    };
    let prev = track[track.len() - 2].position();
    let next = plan
        .pose_at(now.t + tick)
        .map(|p| p.position())
        .unwrap_or(now.position() + (now.position() - prev));
    let p = now.position();
    EgoState {
        pose: now.pose,
        velocity: (next - prev) * (0.5 / tick),
        acceleration: (next - p * 2.0 + prev) * (1.0 / (tick * tick)),
        t: now.t,
    }
}

/// Replays `rec` with `planner` in the loop.
pub fn run_replay(
    rec: &ScenarioRecord,
    planner: &mut dyn Planner,
    cfg: &ReplayConfig,
) -> Result<Rollout, ReplayError> {
    let tick = cfg.tick_s;
    if !(tick > 0.0 && cfg.replan_period_s >= tick && cfg.plan_horizon_s >= cfg.replan_period_s) {
        return Err(ReplayError::Config(format!(
            "need 0 < tick_s <= replan_period_s <= plan_horizon_s (got {tick}, {}, {})",
            cfg.replan_period_s, cfg.plan_horizon_s
        )));
    }
    let t0 = rec.t0();
    let n_ticks = ((rec.end_time() - t0) / tick + 1e-6).floor() as usize;
    let replan_every = ((cfg.replan_period_s / tick).round() as usize).max(1);
    let scene = cfg.send_scene.then(|| PlanRequest::scene_of(rec));

    let mut track = vec![rec.ego_state.timed_pose()];
    let mut replan_log = Vec::new();
    let mut current: Option<Trajectory> = None;
    for k in 0..n_ticks {
        let t = t0 + k as f64 * tick;
        if k % replan_every == 0 {
            let ego = replan_state(rec, &track, current.as_ref(), tick);
            let history = history_until(rec, &track, t, cfg.history_window_s);
            let remaining = rec.end_time() - t;
            let horizon = cfg.plan_horizon_s.min(remaining);
            let req = PlanRequest::new(rec, t, ego, history, scene.clone(), horizon, tick);
            let resp = planner.plan(&req)?;
            let needed = cfg.replan_period_s.min(remaining);
            let covered = resp.trajectory.end_time() - t;
            if covered + 1e-6 < needed {
                return Err(ReplayError::PlanTooShort { t, covered, needed });
            }
            let anchored = resp.trajectory.anchored_after(ego.timed_pose())?;
            replan_log.push((t, resp.trajectory));
            current = Some(anchored);
        }
        let next_t = t0 + (k + 1) as f64 * tick;
        let plan = current.as_ref().expect("planned at k = 0");
        let pose = plan.pose_at(next_t)?;
        track.push(TimedPose { t: next_t, ..pose });
    }
    let ego_track = Trajectory::with_dt(track, tick)?;
    let mut rollout = Rollout::from_track(ego_track, tick);
    rollout.replan_log = replan_log;
    Ok(rollout)
}

// ---------------------------------------------------------------------------
// sub-metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub object_id: String,
    pub category: ObjectCategory,
    pub t: f64,
    pub at_fault: bool,
}

/// First contact with each object, in time order.
pub fn collisions(rollout: &Rollout, objects: &[TrackedObject], cfg: &ReplayConfig) -> Vec<CollisionEvent> {
    let mut seen = BTreeMap::new();
    for p in rollout.ego_track.points() {
        let ego = cfg.ego_box(p.pose);
        for obj in objects {
            if seen.contains_key(&obj.id) {
                continue;
            }
            let Some((other, vel)) = obj.state_at(p.t) else { continue };
            if !ego.overlaps(&other) {
                continue;
            }
            let contact = ego.intersection_centroid(&other).unwrap_or(other.center.position());
            let (lon, _) = p.pose.to_local(contact);
            let at_fault = vel.norm() < cfg.at_fault_speed_mps || lon > 0.0;
            seen.insert(
                obj.id.clone(),
                CollisionEvent {
                    object_id: obj.id.clone(),
                    category: obj.category,
                    t: p.t,
                    at_fault,
                },
            );
        }
    }
    let mut events: Vec<CollisionEvent> = seen.into_values().collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.object_id.cmp(&b.object_id)));
    events
}

/// Three-tier collision score from the collision events.
pub fn collision_score(events: &[CollisionEvent]) -> f64 {
    let at_fault: Vec<&CollisionEvent> = events.iter().filter(|e| e.at_fault).collect();
    if at_fault.iter().any(|e| e.category.is_agent()) {
        return 0.0;
    }
    match at_fault.len() {
        0 => 1.0,
        1 => 0.5,
        _ => 0.0,
    }
}

/// Largest corner distance to the drivable union at each tick.
pub fn corner_distances(rollout: &Rollout, map: &MapModel, cfg: &ReplayConfig) -> Result<Vec<f64>, ReplayError> {
    if map.drivable_area.is_empty() {
        return Err(ReplayError::NoDrivableArea);
    }
    Ok(rollout
        .ego_track
        .points()
        .iter()
        .map(|p| {
            cfg.ego_box(p.pose)
                .corners()
                .iter()
                .map(|&c| distance_to_union(&map.drivable_area, c))
                .fold(0.0, f64::max)
        })
        .collect())
}

pub fn drivable_compliance(rollout: &Rollout, map: &MapModel, cfg: &ReplayConfig) -> Result<f64, ReplayError> {
    let worst = corner_distances(rollout, map, cfg)?.into_iter().fold(0.0, f64::max);
    Ok(if worst > DRIVABLE_TOLERANCE_M { 0.0 } else { 1.0 })
}

/// `(ratio, gate)` for progress along the expert path.
pub fn progress(rollout: &Rollout, expert: &Trajectory) -> (f64, f64) {
    let path = expert.positions();
    let s = |p: Vec2| project_onto_polyline(&path, p).map_or(0.0, |(s, _, _)| s);
    let p_ego: f64 = rollout
        .ego_track
        .points()
        .windows(2)
        .map(|w| s(w[1].position()) - s(w[0].position()))
        .sum();
    let p_expert: f64 = path.windows(2).map(|w| s(w[1]) - s(w[0])).sum();
    let ratio = progress_ratio(p_ego, p_expert);
    (ratio, if ratio < PROGRESS_GATE { 0.0 } else { 1.0 })
}

pub fn progress_ratio(p_ego: f64, p_expert: f64) -> f64 {
    (p_ego.max(PROGRESS_FLOOR_M) / p_expert.max(PROGRESS_FLOOR_M)).min(1.0)
}

/// Worst wrong-way distance over any window of `round(1 s / tick)` motions.
pub fn worst_wrong_way_distance(rollout: &Rollout, map: &MapModel, cfg: &ReplayConfig) -> f64 {
    let pts = rollout.ego_track.points();
    let against: Vec<f64> = pts
        .windows(2)
        .map(|w| {
            let motion = w[1].position() - w[0].position();
            let len = motion.norm();
            if len == 0.0 {
                return 0.0;
            }
            match map.nearest_lane(w[0].position(), cfg.lane_search_radius_m) {
                Some(m) if motion.dot(m.tangent) < -0.5 * len => len,
                Some(_) => 0.0,
                None => {
                    log::debug!("no lane near ego at t={}; counted as compliant", w[0].t);
                    0.0
                }
            }
        })
        .collect();
    let window = ((1.0 / cfg.tick_s).round() as usize).max(1);
    if against.len() <= window {
        return against.iter().sum();
    }
    against
        .windows(window)
        .map(|w| w.iter().sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn direction_score(worst_wrong_way_m: f64) -> f64 {
    if worst_wrong_way_m < WRONG_WAY_OK_M {
        1.0
    } else if worst_wrong_way_m > WRONG_WAY_FAIL_M {
        0.0
    } else {
        0.5
    }
}

pub fn direction_compliance(rollout: &Rollout, map: &MapModel, cfg: &ReplayConfig) -> f64 {
    direction_score(worst_wrong_way_distance(rollout, map, cfg))
}

/// First projected time at which two boxes moving at constant velocity
/// overlap, if it happens within the horizon.
pub fn time_to_collision(
    ego: &OrientedBox,
    ego_velocity: Vec2,
    other: &OrientedBox,
    other_velocity: Vec2,
    horizon_s: f64,
    step_s: f64,
) -> Option<f64> {
    let steps = (horizon_s / step_s + 1e-9).floor() as usize;
    (0..=steps).map(|k| k as f64 * step_s).find(|&s| {
        ego.translated(ego_velocity * s)
            .overlaps(&other.translated(other_velocity * s))
    })
}

/// Smallest TTC over the rollout; `None` when nothing is ever projected to
/// collide.
pub fn min_ttc(rollout: &Rollout, objects: &[TrackedObject], cfg: &ReplayConfig) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (p, &v) in rollout.ego_track.points().iter().zip(&rollout.derivatives.velocity) {
        let ego = cfg.ego_box(p.pose);
        for obj in objects {
            let Some((other, ov)) = obj.state_at(p.t) else { continue };
            if let Some(ttc) = time_to_collision(&ego, v, &other, ov, cfg.ttc_horizon_s, cfg.ttc_step_s) {
                best = Some(best.map_or(ttc, |b: f64| b.min(ttc)));
            }
        }
    }
    best
}

pub fn ttc_score(min_ttc_s: Option<f64>) -> f64 {
    match min_ttc_s {
        Some(t) if t < TTC_THRESHOLD_S => 0.0,
        _ => 1.0,
    }
}

/// `∫ max(0, speed − limit) dt` by the left rectangle rule and the scenario
/// duration.
pub fn overspeed_integral(rollout: &Rollout, map: &MapModel, cfg: &ReplayConfig) -> (f64, f64) {
    let pts = rollout.ego_track.points();
    let mut v_int = 0.0;
    for (w, v) in pts.windows(2).zip(&rollout.derivatives.velocity) {
        let dt = w[1].t - w[0].t;
        if let Some(m) = map.nearest_lane(w[0].position(), cfg.lane_search_radius_m) {
            v_int += (v.norm() - m.lane.speed_limit).max(0.0) * dt;
        }
    }
    (v_int, rollout.ego_track.span())
}

pub fn speed_score(v_int: f64, duration_s: f64) -> f64 {
    if v_int <= 0.0 {
        return 1.0;
    }
    if duration_s <= 0.0 {
        return 0.0;
    }
    (1.0 - v_int / (OVERSPEED_TOLERANCE_MPS * duration_s)).max(0.0)
}

/// Names of violated comfort bounds (empty when comfortable).
pub fn comfort_violations(d: &Derivatives, b: &ComfortBounds) -> Vec<&'static str> {
    let mut out = Vec::new();
    if d.lon_accel.iter().any(|&a| a < b.lon_accel_min || a > b.lon_accel_max) {
        out.push("lon_accel");
    }
    let exceeds = |xs: &[f64], bound: f64| xs.iter().any(|x| x.abs() > bound);
    for (name, xs, bound) in [
        ("lat_accel", &d.lat_accel, b.lat_accel_abs),
        ("yaw_rate", &d.yaw_rate, b.yaw_rate_abs),
        ("yaw_accel", &d.yaw_accel, b.yaw_accel_abs),
        ("lon_jerk", &d.lon_jerk, b.lon_jerk_abs),
        ("jerk", &d.jerk, b.jerk_abs),
    ] {
        if exceeds(xs, bound) {
            out.push(name);
        }
    }
    out
}

pub fn comfort_score(d: &Derivatives, b: &ComfortBounds) -> f64 {
    if comfort_violations(d, b).is_empty() {
        1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// composite

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopBreakdown {
    pub no_collision: f64,
    pub drivable: f64,
    pub progress_gate: f64,
    pub direction: f64,
    pub ttc: f64,
    pub speed: f64,
    pub progress: f64,
    pub comfort: f64,
}

impl ClosedLoopBreakdown {
    pub fn gate(&self) -> f64 {
        self.no_collision * self.drivable * self.progress_gate
    }

    pub fn weighted(&self) -> f64 {
        (5.0 * self.direction + 5.0 * self.ttc + 4.0 * self.speed + 5.0 * self.progress + 2.0 * self.comfort) / 21.0
    }
}

pub fn closedloop_score(b: &ClosedLoopBreakdown) -> f64 {
    b.gate() * b.weighted() * 100.0
}

/// One line of a closed-loop results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub scenario_id: String,
    pub scenario_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<ClosedLoopBreakdown>,
    pub score: f64,
    #[serde(default)]
    pub collisions: Vec<CollisionEvent>,
    #[serde(default)]
    pub min_ttc_s: Option<f64>,
    #[serde(default)]
    pub overspeed_integral: f64,
    #[serde(default)]
    pub worst_wrong_way_m: f64,
    #[serde(default)]
    pub comfort_violations: Vec<String>,
    #[serde(default)]
    pub replans: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ClosedLoopReport {
    pub fn failed(rec: &ScenarioRecord, error: String) -> Self {
        Self {
            scenario_id: rec.id.clone(),
            scenario_type: rec.scenario_type.clone(),
            breakdown: None,
            score: 0.0,
            collisions: Vec::new(),
            min_ttc_s: None,
            overspeed_integral: 0.0,
            worst_wrong_way_m: 0.0,
            comfort_violations: Vec::new(),
            replans: 0,
            error: Some(error),
        }
    }
}

/// Scores a finished rollout.
pub fn score_rollout(rec: &ScenarioRecord, rollout: &Rollout, cfg: &ReplayConfig) -> Result<ClosedLoopReport, ReplayError> {
    let events = collisions(rollout, &rec.objects, cfg);
    let drivable = drivable_compliance(rollout, &rec.map, cfg)?;
    let (ratio, gate) = progress(rollout, &rec.expert_reference());
    let worst = worst_wrong_way_distance(rollout, &rec.map, cfg);
    let ttc = min_ttc(rollout, &rec.objects, cfg);
    let (v_int, duration) = overspeed_integral(rollout, &rec.map, cfg);
    let violations = comfort_violations(&rollout.derivatives, &cfg.comfort);
    let b = ClosedLoopBreakdown {
        no_collision: collision_score(&events),
        drivable,
        progress_gate: gate,
        direction: direction_score(worst),
        ttc: ttc_score(ttc),
        speed: speed_score(v_int, duration),
        progress: ratio,
        comfort: if violations.is_empty() { 1.0 } else { 0.0 },
    };
    Ok(ClosedLoopReport {
        scenario_id: rec.id.clone(),
        scenario_type: rec.scenario_type.clone(),
        breakdown: Some(b),
        score: closedloop_score(&b),
        collisions: events,
        min_ttc_s: ttc,
        overspeed_integral: v_int,
        worst_wrong_way_m: worst,
        comfort_violations: violations.into_iter().map(String::from).collect(),
        replans: rollout.replan_log.len(),
        error: None,
    })
}

/// Replays and scores one scenario; failures become zero-score reports.
pub fn evaluate_closed_loop(rec: &ScenarioRecord, planner: &mut dyn Planner, cfg: &ReplayConfig) -> ClosedLoopReport {
    match run_replay(rec, planner, cfg).and_then(|r| score_rollout(rec, &r, cfg)) {
        Ok(report) => report,
        Err(e) => {
            log::warn!("scenario {}: {e}", rec.id);
            ClosedLoopReport::failed(rec, e.tag())
        }
    }
}
