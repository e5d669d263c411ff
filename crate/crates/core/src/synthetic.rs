//! Procedurally generated scenes: straight roads, constant-radius curves and
//! stationary red-light stops. Used by the test suites and the example
//! corpus generator; every scene is a pure function of its parameters.

use crate::geometry::{Polygon, Pose2D, Vec2};
use crate::scenario::{
    EgoState, Lane, LightState, MapModel, ObjectCategory, ScenarioRecord, StopLine, TrackedObject,
    TrafficLight,
};
use crate::geometry::OrientedBox;
use crate::trajectory::{TimedPose, Trajectory};
use crate::DEFAULT_TICK_S;

#[derive(Debug, Clone, Copy)]
enum Piece {
    Straight(f64),
    /// Signed curvature (positive turns left) over an arc length.
    Arc { curvature: f64, length: f64 },
}

/// An analytic reference path parameterised by arc length. Queries outside
/// `[0, length]` extend the end tangents straight.
#[derive(Debug, Clone)]
pub struct Road {
    start: Pose2D,
    pieces: Vec<Piece>,
}

fn advance(pos: Vec2, heading: f64, curvature: f64, s: f64) -> (Vec2, f64) {
    if curvature.abs() < 1e-12 {
        return (pos + Vec2::from_heading(heading) * s, heading);
    }
    let h1 = heading + curvature * s;
    let d = Vec2::new(h1.sin() - heading.sin(), heading.cos() - h1.cos()) * (1.0 / curvature);
    (pos + d, h1)
}

impl Road {
    pub fn straight(start: Pose2D, length: f64) -> Self {
        Self {
            start,
            pieces: vec![Piece::Straight(length)],
        }
    }

    /// Straight lead-in, arc, straight exit.
    pub fn curve(start: Pose2D, lead_in: f64, curvature: f64, arc_length: f64, exit: f64) -> Self {
        Self {
            start,
            pieces: vec![
                Piece::Straight(lead_in),
                Piece::Arc {
                    curvature,
                    length: arc_length,
                },
                Piece::Straight(exit),
            ],
        }
    }

    pub fn length(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Straight(l) => *l,
                Piece::Arc { length, .. } => *length,
            })
            .sum()
    }

    /// Position, heading and signed curvature at arc length `s`.
    pub fn sample(&self, s: f64) -> (Vec2, f64, f64) {
        let mut pos = self.start.position();
        let mut heading = self.start.heading();
        if s <= 0.0 {
            return (pos + Vec2::from_heading(heading) * s, heading, 0.0);
        }
        let mut remaining = s;
        for piece in &self.pieces {
            let (curv, len) = match *piece {
                Piece::Straight(l) => (0.0, l),
                Piece::Arc { curvature, length } => (curvature, length),
            };
            if remaining <= len {
                let (p, h) = advance(pos, heading, curv, remaining);
                return (p, h, curv);
            }
            let (p, h) = advance(pos, heading, curv, len);
            pos = p;
            heading = h;
            remaining -= len;
        }
        (pos + Vec2::from_heading(heading) * remaining, heading, 0.0)
    }

    pub fn pose(&self, s: f64) -> Pose2D {
        let (p, h, _) = self.sample(s);
        Pose2D::new(p.x, p.y, h)
    }

    fn polyline(&self, from: f64, to: f64, step: f64) -> Vec<Vec2> {
        stations(from, to, step).into_iter().map(|s| self.sample(s).0).collect()
    }

    /// Drivable corridor of half-width `half_width` around `[from, to]`.
    fn corridor(&self, from: f64, to: f64, half_width: f64, step: f64) -> Polygon {
        let samples: Vec<(Vec2, f64)> = stations(from, to, step)
            .into_iter()
            .map(|s| {
                let (p, h, _) = self.sample(s);
                (p, h)
            })
            .collect();
        let mut verts: Vec<Vec2> = samples
            .iter()
            .map(|(p, h)| *p + Vec2::from_heading(*h).perp() * half_width)
            .collect();
        verts.extend(
            samples
                .iter()
                .rev()
                .map(|(p, h)| *p - Vec2::from_heading(*h).perp() * half_width),
        );
        Polygon::new(verts).expect("corridor polygon is simple")
    }
}

/// Arc lengths `from, from + step, ..., to` without a sliver last gap.
fn stations(from: f64, to: f64, step: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (0..)
        .map(|k| from + k as f64 * step)
        .take_while(|s| *s < to - 0.5 * step)
        .collect();
    out.push(to);
    out
}

/// Knobs shared by all generated scenes.
#[derive(Debug, Clone)]
pub struct SceneParams {
    pub speed: f64,
    pub speed_limit: Option<f64>,
    pub history_s: f64,
    pub future_s: f64,
    pub dt: f64,
    pub drivable_half_width: f64,
    pub with_traffic: bool,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            speed: 10.0,
            speed_limit: None,
            history_s: 2.0,
            future_s: 8.0,
            dt: DEFAULT_TICK_S,
            drivable_half_width: 3.0,
            with_traffic: false,
        }
    }
}

impl SceneParams {
    pub fn with_speed(speed: f64) -> Self {
        Self {
            speed,
            ..Self::default()
        }
    }

    fn limit(&self) -> f64 {
        self.speed_limit.unwrap_or(self.speed.max(10.0) + 3.0)
    }
}

fn steps(from: f64, to: f64, dt: f64) -> Vec<f64> {
    let n = ((to - from) / dt).round() as i64;
    (0..=n).map(|k| from + k as f64 * dt).collect()
}

/// Ego moves along `road` at constant speed, located at `s_ego` when `t = 0`.
fn build_on_road(
    id: &str,
    scenario_type: &str,
    road: &Road,
    s_ego: f64,
    p: &SceneParams,
    objects: Vec<TrackedObject>,
    lights: Vec<TrafficLight>,
    stop_lines: Vec<StopLine>,
) -> ScenarioRecord {
    let v = p.speed;
    let pose_at_t = |t: f64| {
        let (pos, h, _) = road.sample(s_ego + v * t);
        TimedPose {
            t,
            pose: Pose2D::new(pos.x, pos.y, h),
        }
    };
    let history: Vec<TimedPose> = steps(-p.history_s, 0.0, p.dt)
        .into_iter()
        .map(pose_at_t)
        .collect();
    let future: Vec<TimedPose> = steps(0.0, p.future_s, p.dt)
        .into_iter()
        .skip(1)
        .map(pose_at_t)
        .collect();
    let (pos, h, curv) = road.sample(s_ego);
    let heading = Vec2::from_heading(h);
    let ego_state = EgoState {
        pose: Pose2D::new(pos.x, pos.y, h),
        velocity: heading * v,
        acceleration: heading.perp() * (v * v * curv),
        t: 0.0,
    };
    let s_from = s_ego - v * p.history_s - 40.0;
    let s_to = s_ego + v * p.future_s + 80.0;
    let map = MapModel {
        drivable_area: vec![road.corridor(s_from, s_to, p.drivable_half_width, 1.0)],
        lanes: vec![Lane {
            centerline: road.polyline(s_from, s_to, 1.0),
            speed_limit: p.limit(),
        }],
        stop_lines,
    };
    ScenarioRecord {
        id: id.to_string(),
        scenario_type: scenario_type.to_string(),
        map,
        objects,
        traffic_lights: lights,
        ego_history: Trajectory::with_dt(history, p.dt).expect("history is monotone"),
        ego_state,
        navigation_goal: road.pose(s_ego + v * p.future_s + 30.0),
        expert_future: Trajectory::with_dt(future, p.dt).expect("future is monotone"),
    }
}

fn moving_object(
    id: &str,
    category: ObjectCategory,
    road: &Road,
    s0: f64,
    lateral: f64,
    speed: f64,
    half: (f64, f64),
    p: &SceneParams,
) -> TrackedObject {
    let times = steps(-p.history_s, p.future_s, p.dt);
    let mut track = Vec::with_capacity(times.len());
    let mut velocity = Vec::with_capacity(times.len());
    for t in times {
        let (pos, h, _) = road.sample(s0 + speed * t);
        let c = pos + Vec2::from_heading(h).perp() * lateral;
        track.push((t, OrientedBox::new(Pose2D::new(c.x, c.y, h), half.0, half.1)));
        velocity.push(Vec2::from_heading(h) * speed);
    }
    TrackedObject {
        id: id.to_string(),
        category,
        track,
        velocity,
    }
}

/// Constant-speed driving on a straight road along +x. With traffic, a lead
/// vehicle travels at the ego speed and a parked car sits off the shoulder.
pub fn straight_scenario(id: &str, p: &SceneParams) -> ScenarioRecord {
    let road = Road::straight(Pose2D::new(-400.0, 0.0, 0.0), 1200.0);
    let s_ego = 400.0;
    let mut objects = Vec::new();
    if p.with_traffic {
        let gap = 20.0 + 1.5 * p.speed;
        objects.push(moving_object(
            &format!("{id}-lead"),
            ObjectCategory::Vehicle,
            &road,
            s_ego + gap,
            0.0,
            p.speed,
            (2.4, 1.0),
            p,
        ));
        objects.push(moving_object(
            &format!("{id}-parked"),
            ObjectCategory::Vehicle,
            &road,
            s_ego + 3.0 * p.speed + 15.0,
            -5.5,
            0.0,
            (2.4, 1.0),
            p,
        ));
    }
    build_on_road(id, "straight", &road, s_ego, p, objects, vec![], vec![])
}

/// Ego is one second into a constant-radius arc (so its history already
/// shows yaw), the arc continues three more seconds and then the road
/// straightens. `left` selects the turn direction.
pub fn curve_scenario(id: &str, p: &SceneParams, left: bool) -> ScenarioRecord {
    let v = p.speed.max(1.0);
    // lateral acceleration of 1 m/s² keeps the expert inside comfort bounds
    let radius = (v * v).max(20.0);
    let curvature = if left { 1.0 / radius } else { -1.0 / radius };
    let lead_in = v * p.history_s + 60.0;
    let arc = v * 4.0;
    let road = Road::curve(Pose2D::new(0.0, 0.0, 0.3), lead_in, curvature, arc, 400.0);
    let s_ego = lead_in + v;
    let kind = if left { "curve_left" } else { "curve_right" };
    build_on_road(id, kind, &road, s_ego, p, vec![], vec![], vec![])
}

/// Ego waits at a red light while a pedestrian crosses well ahead of the
/// stop line.
pub fn stationary_scenario(id: &str, p: &SceneParams) -> ScenarioRecord {
    let p = SceneParams {
        speed: 0.0,
        speed_limit: Some(p.speed_limit.unwrap_or(13.9)),
        ..p.clone()
    };
    let road = Road::straight(Pose2D::new(-200.0, 50.0, 0.0), 500.0);
    let s_ego = 200.0;
    let stop = road.sample(s_ego + 4.0).0;
    let stop_lines = vec![StopLine {
        light_id: format!("{id}-tl"),
        segment: [stop + Vec2::new(0.0, 3.0), stop - Vec2::new(0.0, 3.0)],
    }];
    let lights = steps(-p.history_s, p.future_s, 1.0)
        .into_iter()
        .map(|t| TrafficLight {
            id: format!("{id}-tl"),
            state: LightState::Red,
            t,
        })
        .collect();
    let crossing_x = road.sample(s_ego + 14.0).0.x;
    let times = steps(-p.history_s, p.future_s, p.dt);
    let ped = TrackedObject {
        id: format!("{id}-ped"),
        category: ObjectCategory::Pedestrian,
        track: times
            .iter()
            .map(|&t| {
                let c = Vec2::new(crossing_x, 50.0 - 6.0 + 1.2 * (t + p.history_s));
                (t, OrientedBox::new(Pose2D::new(c.x, c.y, std::f64::consts::FRAC_PI_2), 0.3, 0.3))
            })
            .collect(),
        velocity: vec![Vec2::new(0.0, 1.2); times.len()],
    };
    build_on_road(id, "stationary", &road, s_ego, &p, vec![ped], lights, stop_lines)
}

/// The 50-scene mixed corpus: 10 stationary, 20 straight, 20 curves.
///
/// Moving speeds span 5–15 m/s. Only the first moving scene runs at 5 m/s;
/// the rest are spread over 6.5–15 m/s.
pub fn mixed_corpus() -> Vec<ScenarioRecord> {
    let mut out = Vec::with_capacity(50);
    let moving = 40;
    let speed = |i: usize| {
        if i == 0 {
            5.0
        } else {
            6.5 + 8.5 * (i - 1) as f64 / (moving - 2) as f64
        }
    };
    for i in 0..10 {
        out.push(stationary_scenario(
            &format!("stationary-{i:02}"),
            &SceneParams::default(),
        ));
    }
    for i in 0..moving {
        let p = SceneParams {
            with_traffic: i % 2 == 0,
            ..SceneParams::with_speed(speed(i))
        };
        let rec = match i % 4 {
            0 | 2 => straight_scenario(&format!("straight-{i:02}"), &p),
            1 => curve_scenario(&format!("curve-left-{i:02}"), &p, true),
            _ => curve_scenario(&format!("curve-right-{i:02}"), &p, false),
        };
        out.push(rec);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_geometry_matches_radius() {
        let r = 25.0;
        let road = Road::curve(Pose2D::new(0.0, 0.0, 0.0), 0.0, 1.0 / r, r * std::f64::consts::FRAC_PI_2, 0.0);
        let (p, h, _) = road.sample(r * std::f64::consts::FRAC_PI_2);
        assert!((p.x - r).abs() < 1e-9 && (p.y - r).abs() < 1e-9);
        assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn generated_scenes_pass_validation() {
        for rec in mixed_corpus() {
            let line = rec.to_json_line();
            let back = crate::scenario::parse_scenario_line(&line).unwrap();
            assert_eq!(back, rec);
        }
    }
}
