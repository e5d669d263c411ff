//! Deterministic in-process planners.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::protocol::{PlanRequest, PlanResponse};
use super::{AgentError, Planner};
use crate::geometry::{point_at_arc_length, polyline_length, project_onto_polyline, wrap_angle, Vec2};
use crate::scenario::{match_lane, Lane, LightState, ScenarioRecord, TrackedObject};
use crate::trajectory::{TimedPose, Trajectory};

/// Lanes farther than this from the ego cannot be followed.
pub const LANE_SEARCH_RADIUS_M: f64 = 10.0;
/// Speed inputs are quantized to this step before planning.
const SPEED_QUANTUM: f64 = 1e-3;
const MAX_ACCEL: f64 = 1.5;
const MAX_DECEL: f64 = 2.0;
const MAX_JERK: f64 = 2.0;
const SPEED_GAIN: f64 = 0.8;
/// Stop this far before a red stop line.
const STOP_MARGIN_M: f64 = 3.0;
/// Objects closer than this to the lane centerline are treated as in-lane.
const IN_LANE_M: f64 = 2.0;
/// Bumper-to-bumper standstill gap and time headway kept behind a lead.
const STANDSTILL_GAP_M: f64 = 4.0;
const HEADWAY_S: f64 = 1.0;
/// Assumed ego half-length when keeping distance to a lead.
const EGO_HALF_LENGTH_M: f64 = 2.6;

fn plan_times(req: &PlanRequest) -> Vec<f64> {
    let n = (req.horizon_s / req.dt_s).round().max(1.0) as usize;
    (1..=n).map(|k| req.tick_t + k as f64 * req.dt_s).collect()
}

fn to_trajectory(points: Vec<TimedPose>, dt: f64) -> Result<Trajectory, AgentError> {
    Trajectory::with_dt(points, dt).map_err(|e| AgentError::InvalidPlan(e.to_string()))
}

/// Constant-velocity, constant-yaw-rate rollout of the current ego state.
#[derive(Debug, Default, Clone)]
pub struct PriorExtrapolator;

impl PriorExtrapolator {
    /// Yaw rate from the last two history headings.
    fn yaw_rate(req: &PlanRequest) -> f64 {
        let Some(h) = &req.ego_history else {
            return 0.0;
        };
        let pts = h.points();
        if pts.len() < 2 {
            return 0.0;
        }
        let (a, b) = (pts[pts.len() - 2], pts[pts.len() - 1]);
        wrap_angle(b.pose.heading() - a.pose.heading()) / (b.t - a.t)
    }
}

impl Planner for PriorExtrapolator {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        let ego = req.ego_state.ok_or(AgentError::MissingInput("ego_state"))?;
        let w = Self::yaw_rate(req);
        let p0 = ego.pose.position();
        let v = ego.velocity;
        let points = plan_times(req)
            .into_iter()
            .map(|t| {
                let s = t - ego.t;
                // ∫₀ˢ R(w·u) v du in closed form
                let disp = if w.abs() < 1e-12 {
                    v * s
                } else {
                    let (sn, cs) = (w * s).sin_cos();
                    Vec2::new(sn * v.x - (1.0 - cs) * v.y, (1.0 - cs) * v.x + sn * v.y) * (1.0 / w)
                };
                let p = p0 + disp;
                TimedPose::new(t, p.x, p.y, ego.pose.heading() + w * s)
            })
            .collect();
        Ok(PlanResponse::new(to_trajectory(points, req.dt_s)?))
    }
}

/// Pure pursuit along the nearest lane with a jerk-limited speed profile
/// toward the lane speed limit, stopping for red lights and the lane end and
/// keeping a time headway behind in-lane objects.
///
/// Only the ego position, heading and along-heading speed are read; history
/// and the lateral velocity component are ignored.
#[derive(Debug, Default, Clone)]
pub struct SceneGrounded;

fn select_lane<'a>(lanes: &'a [Lane], p: Vec2, heading: Vec2) -> Option<&'a Lane> {
    let mut best: Option<(&Lane, f64, f64)> = None;
    for lane in lanes {
        let Some(m) = match_lane(lane, p) else { continue };
        if m.distance > LANE_SEARCH_RADIUS_M {
            continue;
        }
        let align = m.tangent.dot(heading);
        let better = match best {
            None => true,
            Some((_, d, a)) => m.distance < d - 1e-6 || ((m.distance - d).abs() <= 1e-6 && align > a),
        };
        if better {
            best = Some((lane, m.distance, align));
        }
    }
    best.map(|(l, _, _)| l)
}

/// Point at arc length `s`, continuing straight past either end.
fn lane_point(line: &[Vec2], length: f64, s: f64) -> Vec2 {
    if s <= length {
        return point_at_arc_length(line, s.max(0.0)).unwrap_or(line[0]);
    }
    let (a, b) = (line[line.len() - 2], line[line.len() - 1]);
    let d = b - a;
    b + d * ((s - length) / d.norm())
}

impl Planner for SceneGrounded {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        let ego = req.ego_state.ok_or(AgentError::MissingInput("ego_state"))?;
        let scene = req.scene.as_ref().ok_or(AgentError::MissingInput("scene"))?;
        let mut pos = ego.pose.position();
        let mut heading = ego.pose.heading();
        let lane = select_lane(&scene.map.lanes, pos, Vec2::from_heading(heading))
            .ok_or(AgentError::NoLane)?;
        let line = &lane.centerline;
        let length = polyline_length(line);
        let s_of = |p: Vec2| project_onto_polyline(line, p).map_or(0.0, |(s, _, _)| s);

        // Distance along the lane at which the ego must be stopped.
        let mut s_stop = length;
        let s_ego = s_of(pos);
        for sl in &scene.map.stop_lines {
            let red = scene
                .traffic_lights
                .iter()
                .filter(|l| l.id == sl.light_id && l.t <= req.tick_t + 1e-9)
                .max_by(|a, b| a.t.total_cmp(&b.t))
                .is_some_and(|l| l.state == LightState::Red);
            let s_line = s_of((sl.segment[0] + sl.segment[1]) * 0.5);
            if red && s_line > s_ego {
                s_stop = s_stop.min(s_line - STOP_MARGIN_M);
            }
        }

        let lead = nearest_lead(scene.objects.as_slice(), lane, s_ego, req.tick_t);

        let along = ego.velocity.dot(Vec2::from_heading(heading));
        let mut v = ((along / SPEED_QUANTUM).round() * SPEED_QUANTUM).max(0.0);
        let along_accel = ego.acceleration.dot(Vec2::from_heading(heading));
        let mut a = (along_accel / SPEED_QUANTUM).round() * SPEED_QUANTUM;
        let dt = req.dt_s;
        let mut points = Vec::new();
        for t in plan_times(req) {
            let s_here = s_of(pos);
            let remaining = (s_stop - s_here).max(0.0);
            let mut v_cap = (2.0 * MAX_DECEL * remaining).sqrt();
            if let Some(l) = lead {
                let s_lead = l.s + l.speed * (t - dt - req.tick_t);
                let gap = (s_lead - s_here - l.standoff - HEADWAY_S * v).max(0.0);
                v_cap = v_cap.min((l.speed.powi(2) + 2.0 * MAX_DECEL * gap).sqrt());
            }
            let target = lane.speed_limit.min(v_cap);
            let desired = (SPEED_GAIN * (target - v)).clamp(-MAX_DECEL, MAX_ACCEL);
            let step = MAX_JERK * dt;
            // beyond the stopping envelope braking is not jerk-limited
            a = if v > v_cap + 0.5 {
                desired.min(a)
            } else {
                desired.clamp(a - step, a + step)
            };
            let v_next = (v + a * dt).max(0.0);
            let v_mid = 0.5 * (v + v_next);

            let lookahead = (v * 1.0).max(5.0);
            let target_pt = lane_point(line, length, s_here + lookahead);
            let rel = target_pt - pos;
            let alpha = wrap_angle(rel.y.atan2(rel.x) - heading);
            let curvature = 2.0 * alpha.sin() / rel.norm().max(1e-6);
            let dh = v_mid * curvature * dt;
            let mid_heading = heading + 0.5 * dh;
            pos = pos + Vec2::from_heading(mid_heading) * (v_mid * dt);
            heading = wrap_angle(heading + dh);
            v = v_next;
            points.push(TimedPose::new(t, pos.x, pos.y, heading));
        }
        Ok(PlanResponse::new(to_trajectory(points, dt)?))
    }
}

#[derive(Debug, Clone, Copy)]
struct Lead {
    /// Arc length of the lead's center at the request time.
    s: f64,
    /// Speed along the lane, never negative.
    speed: f64,
    /// Center-to-center distance that corresponds to the standstill gap.
    standoff: f64,
}

/// Closest object ahead of `s_ego` whose center lies in the lane corridor.
fn nearest_lead(objects: &[TrackedObject], lane: &Lane, s_ego: f64, t: f64) -> Option<Lead> {
    objects
        .iter()
        .filter_map(|o| {
            let (bx, vel) = o.state_at(t)?;
            let m = match_lane(lane, bx.center.position())?;
            (m.distance < IN_LANE_M && m.arc_length > s_ego).then(|| Lead {
                s: m.arc_length,
                speed: vel.dot(m.tangent).max(0.0),
                standoff: bx.half_length + EGO_HALF_LENGTH_M + STANDSTILL_GAP_M,
            })
        })
        .min_by(|a, b| a.s.total_cmp(&b.s))
}

/// Wraps another planner and adds seeded Gaussian noise to every waypoint
/// position. The noise stream is keyed on the request content, so identical
/// requests get identical noise.
pub struct NoisyPlanner {
    inner: Box<dyn Planner>,
    sigma: f64,
    seed: u64,
}

impl NoisyPlanner {
    pub fn new(inner: Box<dyn Planner>, sigma: f64, seed: u64) -> Self {
        Self { inner, sigma, seed }
    }
}

impl Planner for NoisyPlanner {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        let mut resp = self.inner.plan(req)?;
        if self.sigma == 0.0 {
            return Ok(resp);
        }
        let digest = Sha256::digest(req.to_json_line().as_bytes());
        let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key);
        let normal = Normal::new(0.0, self.sigma)
            .map_err(|e| AgentError::InvalidPlan(format!("noise sigma: {e}")))?;
        let dt = resp.trajectory.dt();
        let points = resp
            .trajectory
            .points()
            .iter()
            .map(|p| {
                let dx = normal.sample(&mut rng);
                let dy = normal.sample(&mut rng);
                TimedPose::new(p.t, p.pose.x + dx, p.pose.y + dy, p.pose.heading())
            })
            .collect();
        resp.trajectory = to_trajectory(points, dt)?;
        Ok(resp)
    }
}

/// Replays the logged expert motion of each known scenario.
#[derive(Debug, Clone, Default)]
pub struct ExpertEcho {
    references: HashMap<String, Arc<Trajectory>>,
}

impl ExpertEcho {
    pub fn new(scenarios: &[ScenarioRecord]) -> Self {
        Self {
            references: scenarios
                .iter()
                .map(|r| (r.id.clone(), Arc::new(r.expert_reference())))
                .collect(),
        }
    }
}

impl Planner for ExpertEcho {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        let reference = self
            .references
            .get(&req.scenario_id)
            .ok_or_else(|| AgentError::MissingInput("expert log for scenario"))?;
        let traj = reference
            .sample_at(&plan_times(req), req.dt_s)
            .map_err(|e| AgentError::InvalidPlan(e.to_string()))?;
        Ok(PlanResponse::new(traj))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::scenario::EgoState;
    use crate::synthetic::{curve_scenario, stationary_scenario, straight_scenario, SceneParams};
    use proptest::prelude::*;

    fn bare_request(velocity: Vec2, horizon: f64, dt: f64) -> PlanRequest {
        let rec = straight_scenario("s", &SceneParams::default());
        let ego = EgoState {
            pose: Pose2D::new(0.0, 0.0, 0.0),
            velocity,
            acceleration: Vec2::ZERO,
            t: 0.0,
        };
        let mut req = PlanRequest::new(&rec, 0.0, ego, rec.ego_history.clone(), None, horizon, dt);
        req.ego_history = None;
        req.with_ablations([crate::agents::AblationFlag::NoHistory])
    }

    #[test]
    fn extrapolator_constant_velocity() {
        let req = bare_request(Vec2::new(10.0, 0.0), 3.0, 0.5);
        let plan = PriorExtrapolator.plan(&req).unwrap().trajectory;
        let xs: Vec<f64> = plan.points().iter().map(|p| p.pose.x).collect();
        assert_eq!(xs, vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert!(plan.points().iter().all(|p| p.pose.y == 0.0));
    }

    #[test]
    fn extrapolator_stationary_and_perturbed() {
        let plan = PriorExtrapolator.plan(&bare_request(Vec2::ZERO, 3.0, 0.1)).unwrap().trajectory;
        assert!(plan.points().iter().all(|p| p.position() == Vec2::ZERO));
        let plan = PriorExtrapolator
            .plan(&bare_request(Vec2::new(10.0, 1.0), 3.0, 0.1))
            .unwrap()
            .trajectory;
        assert!((plan.last().pose.y - 3.0).abs() < 1e-9);
    }

    #[test]
    fn extrapolator_follows_yaw_rate() {
        let rec = curve_scenario("c", &SceneParams::with_speed(10.0), true);
        let req = PlanRequest::new(&rec, 0.0, rec.ego_state, rec.ego_history.clone(), None, 1.0, 0.1);
        let plan = PriorExtrapolator.plan(&req).unwrap().trajectory;
        // a constant-curvature log is reproduced by the closed-form rollout
        let expert = rec.expert_reference();
        for p in plan.points() {
            let e = expert.pose_at(p.t).unwrap();
            assert!(p.position().distance(e.position()) < 0.05, "{p:?} vs {e:?}");
        }
    }

    fn full_request(rec: &ScenarioRecord) -> PlanRequest {
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
    fn scene_grounded_follows_straight_lane() {
        let rec = straight_scenario("s", &SceneParams::default());
        let plan = SceneGrounded.plan(&full_request(&rec)).unwrap().trajectory;
        let y0 = rec.ego_state.pose.y;
        for p in plan.points() {
            assert!((p.pose.y - y0).abs() < 1e-9);
            assert!(p.pose.heading().abs() < 1e-12);
        }
        let xs: Vec<f64> = plan.points().iter().map(|p| p.pose.x).collect();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn scene_grounded_tracks_curve() {
        for left in [true, false] {
            let rec = curve_scenario("c", &SceneParams::default(), left);
            let plan = SceneGrounded.plan(&full_request(&rec)).unwrap().trajectory;
            let lane = &rec.map.lanes[0].centerline;
            for p in plan.points() {
                let (_, d, _) = project_onto_polyline(lane, p.position()).unwrap();
                assert!(d < 0.5, "off lane by {d}");
            }
        }
    }

    #[test]
    fn scene_grounded_holds_at_red_light() {
        let rec = stationary_scenario("r", &SceneParams::default());
        let plan = SceneGrounded.plan(&full_request(&rec)).unwrap().trajectory;
        let x0 = rec.ego_state.pose.x;
        assert!(plan.points().iter().all(|p| p.pose.x - x0 < 4.0));
    }

    #[test]
    fn scene_grounded_needs_lane() {
        let rec = straight_scenario("s", &SceneParams::default());
        let mut req = full_request(&rec);
        let mut ego = req.ego_state.unwrap();
        ego.pose = Pose2D::new(ego.pose.x, ego.pose.y + 50.0, 0.0);
        req.ego_state = Some(ego);
        assert!(matches!(SceneGrounded.plan(&req), Err(AgentError::NoLane)));
        let mut req = full_request(&rec);
        req.scene = None;
        assert!(matches!(SceneGrounded.plan(&req), Err(AgentError::MissingInput(_))));
    }

    #[test]
    fn noisy_is_deterministic_and_seeded() {
        let rec = straight_scenario("s", &SceneParams::default());
        let req = full_request(&rec);
        let mut a = NoisyPlanner::new(Box::new(SceneGrounded), 0.5, 7);
        let mut b = NoisyPlanner::new(Box::new(SceneGrounded), 0.5, 7);
        let mut c = NoisyPlanner::new(Box::new(SceneGrounded), 0.5, 8);
        let pa = a.plan(&req).unwrap();
        assert_eq!(pa, b.plan(&req).unwrap());
        assert_eq!(pa, a.plan(&req).unwrap());
        assert_ne!(pa, c.plan(&req).unwrap());
        let clean = SceneGrounded.plan(&req).unwrap();
        assert_eq!(NoisyPlanner::new(Box::new(SceneGrounded), 0.0, 7).plan(&req).unwrap(), clean);
    }

    #[test]
    fn expert_echo_returns_log() {
        let rec = curve_scenario("c", &SceneParams::default(), false);
        let mut echo = ExpertEcho::new(std::slice::from_ref(&rec));
        let resp = echo.plan(&full_request(&rec)).unwrap();
        assert!(resp.validate(&full_request(&rec)).is_ok());
        for p in resp.trajectory.points() {
            let e = rec.expert_future.pose_at(p.t).unwrap();
            assert!(p.position().distance(e.position()) < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn scene_grounded_ignores_lateral_velocity_and_history(
            speed in 0.0f64..20.0, extra in 0.0f64..3.0, flip in any::<bool>(), i in 0usize..3,
        ) {
            let p = SceneParams::with_speed(speed.max(1.0));
            let rec = match i {
                0 => straight_scenario("s", &p),
                1 => curve_scenario("c", &p, true),
                _ => curve_scenario("c", &p, false),
            };
            let base = full_request(&rec);
            let mut perturbed = base.clone();
            let mut ego = rec.ego_state;
            let left = Vec2::from_heading(ego.pose.heading()).perp();
            ego.velocity = ego.velocity + left * extra;
            perturbed.ego_state = Some(ego);
            if flip {
                perturbed.ego_history = Some(crate::probe::invert_history(&rec.ego_history, rec.ego_state.pose));
            }
            prop_assert_eq!(SceneGrounded.plan(&base).unwrap(), SceneGrounded.plan(&perturbed).unwrap());
        }

        #[test]
        fn extrapolator_ignores_scene(i in 0usize..3) {
            let p = SceneParams::default();
            let rec = match i {
                0 => straight_scenario("s", &p),
                1 => curve_scenario("c", &p, true),
                _ => stationary_scenario("r", &p),
            };
            let with_scene = full_request(&rec);
            let mut without = with_scene.clone();
            without.scene = None;
            prop_assert_eq!(PriorExtrapolator.plan(&with_scene).unwrap(), PriorExtrapolator.plan(&without).unwrap());
        }
    }
}
