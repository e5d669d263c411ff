//! Scene records and the JSON Lines corpus format.
//!
//! One line holds one scenario. Poses are `[x, y, heading]`, trajectories are
//! arrays of `[t, x, y, heading]`, and object tracks are arrays of
//! `[t, x, y, heading, half_length, half_width]` with a parallel `velocity`
//! array of `[vx, vy]`. Unknown fields are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{OrientedBox, Polygon, Pose2D, Vec2};
use crate::trajectory::{interpolate, TimedPose, Trajectory, TIME_EPS};

/// Minimum span of the expert future after `t0`, in seconds.
pub const MIN_EXPERT_SPAN_S: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: invalid `{field}`: {message}")]
    Invariant {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate scenario id `{id}`")]
    DuplicateId { line: usize, id: String },
}

impl ScenarioError {
    fn at_line(self, line: usize) -> Self {
        match self {
            ScenarioError::Schema { message, .. } => ScenarioError::Schema { line, message },
            ScenarioError::Invariant { field, message, .. } => ScenarioError::Invariant {
                line,
                field,
                message,
            },
            other => other,
        }
    }
}

fn invariant(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invariant {
        line: 0,
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectCategory {
    Vehicle,
    Pedestrian,
    Bicycle,
    Object,
}

impl ObjectCategory {
    /// Vehicles and vulnerable road users.
    pub fn is_agent(self) -> bool {
        !matches!(self, ObjectCategory::Object)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub id: String,
    pub category: ObjectCategory,
    pub track: Vec<(f64, OrientedBox)>,
    pub velocity: Vec<Vec2>,
}

impl TrackedObject {
    /// Box and velocity at `t`, interpolated between samples. `None` outside
    /// the logged span.
    pub fn state_at(&self, t: f64) -> Option<(OrientedBox, Vec2)> {
        let idx = self.track.partition_point(|(ts, _)| *ts < t - TIME_EPS);
        if idx < self.track.len() && (self.track[idx].0 - t).abs() <= TIME_EPS {
            return Some((self.track[idx].1, self.velocity[idx]));
        }
        if idx == 0 || idx == self.track.len() {
            return None;
        }
        let (ta, ba) = self.track[idx - 1];
        let (tb, bb) = self.track[idx];
        let pose = interpolate(
            &TimedPose { t: ta, pose: ba.center },
            &TimedPose { t: tb, pose: bb.center },
            t,
        )
        .pose;
        let s = (t - ta) / (tb - ta);
        let half_length = ba.half_length + (bb.half_length - ba.half_length) * s;
        let half_width = ba.half_width + (bb.half_width - ba.half_width) * s;
        let vel = self.velocity[idx - 1].lerp(self.velocity[idx], s);
        Some((OrientedBox::new(pose, half_length, half_width), vel))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub centerline: Vec<Vec2>,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopLine {
    pub light_id: String,
    pub segment: [Vec2; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapModel {
    pub drivable_area: Vec<Polygon>,
    pub lanes: Vec<Lane>,
    pub stop_lines: Vec<StopLine>,
}

/// A lane matched to a query point.
#[derive(Debug, Clone, Copy)]
pub struct LaneMatch<'a> {
    pub lane: &'a Lane,
    pub distance: f64,
    pub arc_length: f64,
    /// Unit tangent of the matched centerline segment (direction of flow).
    pub tangent: Vec2,
}

impl MapModel {
    /// Nearest lane centerline to `p`, if one lies within `radius`.
    pub fn nearest_lane(&self, p: Vec2, radius: f64) -> Option<LaneMatch<'_>> {
        let mut best: Option<LaneMatch<'_>> = None;
        for lane in &self.lanes {
            if let Some(m) = match_lane(lane, p) {
                if m.distance <= radius && best.map_or(true, |b| m.distance < b.distance) {
                    best = Some(m);
                }
            }
        }
        best
    }
}

pub(crate) fn match_lane(lane: &Lane, p: Vec2) -> Option<LaneMatch<'_>> {
    let (arc_length, distance, seg) = crate::geometry::project_onto_polyline(&lane.centerline, p)?;
    let a = lane.centerline[seg];
    let b = *lane.centerline.get(seg + 1)?;
    let d = b - a;
    let n = d.norm();
    if n == 0.0 {
        return None;
    }
    Some(LaneMatch {
        lane,
        distance,
        arc_length,
        tangent: d * (1.0 / n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightState {
    Red,
    Yellow,
    Green,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub id: String,
    pub state: LightState,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState {
    pub pose: Pose2D,
    pub velocity: Vec2,
    pub acceleration: Vec2,
    pub t: f64,
}

impl EgoState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.t.is_finite()
    }

    pub fn timed_pose(&self) -> TimedPose {
        TimedPose {
            t: self.t,
            pose: self.pose,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord {
    pub id: String,
    pub scenario_type: String,
    pub map: MapModel,
    pub objects: Vec<TrackedObject>,
    pub traffic_lights: Vec<TrafficLight>,
    pub ego_history: Trajectory,
    pub ego_state: EgoState,
    pub navigation_goal: Pose2D,
    pub expert_future: Trajectory,
}

impl ScenarioRecord {
    /// Anchor time of the scene.
    pub fn t0(&self) -> f64 {
        self.ego_state.t
    }

    pub fn end_time(&self) -> f64 {
        self.expert_future.end_time()
    }

    /// Expert motion including the ego pose at `t0`.
    pub fn expert_reference(&self) -> Trajectory {
        self.expert_future
            .anchored_after(self.ego_state.timed_pose())
            .expect("expert future starts after t0")
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ScenarioWire::from(self)).expect("scenario serializes")
    }
}

// ---------------------------------------------------------------------------
// wire format

pub(crate) type PoseWire = [f64; 3];

pub(crate) fn pose_from_wire(p: PoseWire) -> Pose2D {
    Pose2D::new(p[0], p[1], p[2])
}

pub(crate) fn pose_to_wire(p: &Pose2D) -> PoseWire {
    [p.x, p.y, p.heading()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct LaneWire {
    pub centerline: Vec<[f64; 2]>,
    pub speed_limit_mps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct StopLineWire {
    pub light_id: String,
    pub segment: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct MapWire {
    pub drivable_area: Vec<Vec<[f64; 2]>>,
    pub lanes: Vec<LaneWire>,
    pub stop_lines: Vec<StopLineWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ObjectWire {
    pub id: String,
    pub category: ObjectCategory,
    pub track: Vec<[f64; 6]>,
    pub velocity: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EgoStateWire {
    pub pose: PoseWire,
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ScenarioWire {
    pub id: String,
    pub scenario_type: String,
    pub map: MapWire,
    pub objects: Vec<ObjectWire>,
    pub traffic_lights: Vec<TrafficLight>,
    pub ego_history: Vec<[f64; 4]>,
    pub ego_state: EgoStateWire,
    pub navigation_goal: PoseWire,
    pub expert_future: Vec<[f64; 4]>,
}

impl From<&EgoState> for EgoStateWire {
    fn from(e: &EgoState) -> Self {
        Self {
            pose: pose_to_wire(&e.pose),
            velocity: e.velocity.into(),
            acceleration: e.acceleration.into(),
            t: e.t,
        }
    }
}

impl From<EgoStateWire> for EgoState {
    fn from(w: EgoStateWire) -> Self {
        Self {
            pose: pose_from_wire(w.pose),
            velocity: w.velocity.into(),
            acceleration: w.acceleration.into(),
            t: w.t,
        }
    }
}

impl From<&MapModel> for MapWire {
    fn from(m: &MapModel) -> Self {
        Self {
            drivable_area: m
                .drivable_area
                .iter()
                .map(|p| p.vertices().iter().map(|&v| v.into()).collect())
                .collect(),
            lanes: m
                .lanes
                .iter()
                .map(|l| LaneWire {
                    centerline: l.centerline.iter().map(|&v| v.into()).collect(),
                    speed_limit_mps: l.speed_limit,
                })
                .collect(),
            stop_lines: m
                .stop_lines
                .iter()
                .map(|s| StopLineWire {
                    light_id: s.light_id.clone(),
                    segment: [s.segment[0].into(), s.segment[1].into()],
                })
                .collect(),
        }
    }
}

impl TryFrom<MapWire> for MapModel {
    type Error = ScenarioError;

    fn try_from(w: MapWire) -> Result<Self, ScenarioError> {
        let drivable_area = w
            .drivable_area
            .into_iter()
            .enumerate()
            .map(|(i, poly)| {
                Polygon::new(poly.into_iter().map(Vec2::from).collect())
                    .map_err(|e| invariant(format!("map.drivable_area[{i}]"), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let lanes = w
            .lanes
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                if l.centerline.len() < 2 {
                    return Err(invariant(
                        format!("map.lanes[{i}].centerline"),
                        "needs at least 2 points",
                    ));
                }
                if l.centerline.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invariant(format!("map.lanes[{i}].centerline"), "not finite"));
                }
                if !(l.speed_limit_mps.is_finite() && l.speed_limit_mps > 0.0) {
                    return Err(invariant(
                        format!("map.lanes[{i}].speed_limit_mps"),
                        "must be positive",
                    ));
                }
                Ok(Lane {
                    centerline: l.centerline.into_iter().map(Vec2::from).collect(),
                    speed_limit: l.speed_limit_mps,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let stop_lines = w
            .stop_lines
            .into_iter()
            .map(|s| StopLine {
                light_id: s.light_id,
                segment: [s.segment[0].into(), s.segment[1].into()],
            })
            .collect();
        Ok(MapModel {
            drivable_area,
            lanes,
            stop_lines,
        })
    }
}

impl From<&TrackedObject> for ObjectWire {
    fn from(o: &TrackedObject) -> Self {
        Self {
            id: o.id.clone(),
            category: o.category,
            track: o
                .track
                .iter()
                .map(|(t, b)| {
                    [
                        *t,
                        b.center.x,
                        b.center.y,
                        b.center.heading(),
                        b.half_length,
                        b.half_width,
                    ]
                })
                .collect(),
            velocity: o.velocity.iter().map(|&v| v.into()).collect(),
        }
    }
}

impl TryFrom<ObjectWire> for TrackedObject {
    type Error = ScenarioError;

    fn try_from(w: ObjectWire) -> Result<Self, ScenarioError> {
        let field = |f: &str| format!("objects[{}].{f}", w.id);
        if w.track.is_empty() {
            return Err(invariant(field("track"), "empty track"));
        }
        if w.velocity.len() != w.track.len() {
            return Err(invariant(
                field("velocity"),
                format!(
                    "{} velocity samples for {} track samples",
                    w.velocity.len(),
                    w.track.len()
                ),
            ));
        }
        for (i, row) in w.track.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invariant(field("track"), format!("sample {i} not finite")));
            }
            if row[4] <= 0.0 || row[5] <= 0.0 {
                return Err(invariant(
                    field("track"),
                    format!("sample {i} has non-positive half dimensions"),
                ));
            }
            if i > 0 && row[0] <= w.track[i - 1][0] {
                return Err(invariant(
                    field("track"),
                    format!("timestamps not strictly increasing at sample {i}"),
                ));
            }
        }
        if w.velocity.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invariant(field("velocity"), "not finite"));
        }
        Ok(TrackedObject {
            track: w
                .track
                .iter()
                .map(|r| (r[0], OrientedBox::new(Pose2D::new(r[1], r[2], r[3]), r[4], r[5])))
                .collect(),
            velocity: w.velocity.into_iter().map(Vec2::from).collect(),
            id: w.id,
            category: w.category,
        })
    }
}

impl From<&ScenarioRecord> for ScenarioWire {
    fn from(r: &ScenarioRecord) -> Self {
        Self {
            id: r.id.clone(),
            scenario_type: r.scenario_type.clone(),
            map: (&r.map).into(),
            objects: r.objects.iter().map(ObjectWire::from).collect(),
            traffic_lights: r.traffic_lights.clone(),
            ego_history: r.ego_history.to_rows(),
            ego_state: (&r.ego_state).into(),
            navigation_goal: pose_to_wire(&r.navigation_goal),
            expert_future: r.expert_future.to_rows(),
        }
    }
}

impl TryFrom<ScenarioWire> for ScenarioRecord {
    type Error = ScenarioError;

    fn try_from(w: ScenarioWire) -> Result<Self, ScenarioError> {
        if w.id.is_empty() {
            return Err(invariant("id", "empty id"));
        }
        let map = MapModel::try_from(w.map)?;
        let objects = w
            .objects
            .into_iter()
            .map(TrackedObject::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let ego_history =
            Trajectory::from_rows(&w.ego_history).map_err(|e| invariant("ego_history", e))?;
        let expert_future =
            Trajectory::from_rows(&w.expert_future).map_err(|e| invariant("expert_future", e))?;
        let ego_state = EgoState::from(w.ego_state);
        if !ego_state.is_finite() {
            return Err(invariant("ego_state", "not finite"));
        }
        let navigation_goal = pose_from_wire(w.navigation_goal);
        if !navigation_goal.is_finite() {
            return Err(invariant("navigation_goal", "not finite"));
        }
        let t0 = ego_state.t;
        if (ego_history.end_time() - t0).abs() > 1e-6 {
            return Err(invariant(
                "ego_history",
                format!("ends at {} but ego_state.t is {t0}", ego_history.end_time()),
            ));
        }
        if expert_future.start_time() <= t0 + TIME_EPS {
            return Err(invariant(
                "expert_future",
                format!("starts at {} which is not after t0 = {t0}", expert_future.start_time()),
            ));
        }
        let span = expert_future.end_time() - t0;
        if span + TIME_EPS < MIN_EXPERT_SPAN_S {
            return Err(invariant(
                "expert_future",
                format!("spans {span:.3} s after t0; at least {MIN_EXPERT_SPAN_S} s required"),
            ));
        }
        for l in &w.traffic_lights {
            if !l.t.is_finite() {
                return Err(invariant(format!("traffic_lights[{}].t", l.id), "not finite"));
            }
        }
        Ok(ScenarioRecord {
            id: w.id,
            scenario_type: w.scenario_type,
            map,
            objects,
            traffic_lights: w.traffic_lights,
            ego_history,
            ego_state,
            navigation_goal,
            expert_future,
        })
    }
}

/// Parses and validates one corpus line.
pub fn parse_scenario_line(line: &str) -> Result<ScenarioRecord, ScenarioError> {
    let wire: ScenarioWire = serde_json::from_str(line).map_err(|e| ScenarioError::Schema {
        line: 0,
        message: e.to_string(),
    })?;
    ScenarioRecord::try_from(wire)
}

/// Parses a whole corpus held in memory. Blank lines are skipped.
pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioRecord>, ScenarioError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_scenario_line(line).map_err(|e| e.at_line(line_no))?;
        if !seen.insert(rec.id.clone()) {
            return Err(ScenarioError::DuplicateId {
                line: line_no,
                id: rec.id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Parses every non-blank line independently so one bad record does not
/// hide the rest. Returns `(line number, result)` pairs in file order; a
/// repeated id is reported on its second occurrence.
pub fn scan_scenarios(text: &str) -> Vec<(usize, Result<ScenarioRecord, ScenarioError>)> {
    let mut seen = HashSet::new();
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let line_no = i + 1;
            let rec = parse_scenario_line(line)
                .map_err(|e| e.at_line(line_no))
                .and_then(|rec| {
                    if seen.insert(rec.id.clone()) {
                        Ok(rec)
                    } else {
                        Err(ScenarioError::DuplicateId { line: line_no, id: rec.id })
                    }
                });
            (line_no, rec)
        })
        .collect()
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<ScenarioRecord>, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenarios(&text)
}

pub fn write_scenarios(records: &[ScenarioRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_json_line());
        s.push('\n');
    }
    s
}

/// SHA-256 over the canonical serialization, so reformatting the source file
/// does not change it.
pub fn corpus_digest(records: &[ScenarioRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.to_json_line().as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}
