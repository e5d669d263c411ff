//! Plan request/response types and their line-delimited JSON encoding.
//!
//! Every message is a single JSON object on one line carrying `"proto": 1`
//! and a `"type"` tag. Requests are `plan` or `ping`; responses are `plan`,
//! `pong` or `error`.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2D;
use crate::scenario::{
    pose_from_wire, pose_to_wire, EgoState, EgoStateWire, MapModel, MapWire, ObjectWire,
    PoseWire, ScenarioError, ScenarioRecord, TrackedObject, TrafficLight,
};
use crate::trajectory::{Trajectory, TIME_EPS};

pub const PROTO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Straight,
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Straight => "straight",
            Direction::Right => "right",
        }
    }
}

/// Prior removed from a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationFlag {
    NoHistory,
    NoEgo,
    NoNavigation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePayload {
    pub map: MapModel,
    pub objects: Vec<TrackedObject>,
    pub traffic_lights: Vec<TrafficLight>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub scenario_id: String,
    pub tick_t: f64,
    pub ego_state: Option<EgoState>,
    pub ego_history: Option<Trajectory>,
    pub navigation_goal: Option<Pose2D>,
    pub prior_ablation_flags: BTreeSet<AblationFlag>,
    pub scene: Option<Arc<ScenePayload>>,
    pub horizon_s: f64,
    pub dt_s: f64,
}

impl PlanRequest {
    pub fn scene_of(rec: &ScenarioRecord) -> Arc<ScenePayload> {
        Arc::new(ScenePayload {
            map: rec.map.clone(),
            objects: rec.objects.clone(),
            traffic_lights: rec.traffic_lights.clone(),
        })
    }

    /// Request with every prior present.
    pub fn new(
        rec: &ScenarioRecord,
        tick_t: f64,
        ego_state: EgoState,
        ego_history: Trajectory,
        scene: Option<Arc<ScenePayload>>,
        horizon_s: f64,
        dt_s: f64,
    ) -> Self {
        Self {
            scenario_id: rec.id.clone(),
            tick_t,
            ego_state: Some(ego_state),
            ego_history: Some(ego_history),
            navigation_goal: Some(rec.navigation_goal),
            prior_ablation_flags: BTreeSet::new(),
            scene,
            horizon_s,
            dt_s,
        }
    }

    /// Removes the fields named by `flags` and records the flags.
    pub fn with_ablations(mut self, flags: impl IntoIterator<Item = AblationFlag>) -> Self {
        for f in flags {
            match f {
                AblationFlag::NoHistory => self.ego_history = None,
                AblationFlag::NoEgo => self.ego_state = None,
                AblationFlag::NoNavigation => self.navigation_goal = None,
            }
            self.prior_ablation_flags.insert(f);
        }
        self
    }

    /// A field is omitted exactly when its ablation flag is set.
    pub fn check_ablation_consistency(&self) -> Result<(), String> {
        let pairs = [
            (AblationFlag::NoHistory, self.ego_history.is_none()),
            (AblationFlag::NoEgo, self.ego_state.is_none()),
            (AblationFlag::NoNavigation, self.navigation_goal.is_none()),
        ];
        for (flag, missing) in pairs {
            if self.prior_ablation_flags.contains(&flag) != missing {
                return Err(format!(
                    "ablation flag {flag:?} does not match the presence of its field"
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        let msg = Envelope {
            proto: PROTO_VERSION,
            body: RequestBody::Plan(Box::new(PlanRequestWire::from(self))),
        };
        serde_json::to_string(&msg).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResponse {
    pub trajectory: Trajectory,
    pub reasoning_text: Option<String>,
    pub reasoning_direction: Option<Direction>,
}

impl PlanResponse {
    pub fn new(trajectory: Trajectory) -> Self {
        Self {
            trajectory,
            reasoning_text: None,
            reasoning_direction: None,
        }
    }

    /// The first point lies within `dt_s` of `tick_t` and the plan reaches at
    /// least `tick_t + horizon_s`.
    pub fn validate(&self, req: &PlanRequest) -> Result<(), String> {
        let first = self.trajectory.start_time();
        if (first - req.tick_t).abs() > req.dt_s + TIME_EPS {
            return Err(format!(
                "plan starts at {first}, more than {} s from tick {}",
                req.dt_s, req.tick_t
            ));
        }
        let reach = self.trajectory.end_time() - req.tick_t;
        if reach + 1e-6 < req.horizon_s {
            return Err(format!(
                "plan covers {reach} s after the tick but {} s were requested",
                req.horizon_s
            ));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        let msg = Envelope {
            proto: PROTO_VERSION,
            body: ResponseBody::Plan(PlanResponseWire::from(self)),
        };
        serde_json::to_string(&msg).expect("response serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Ping,
    Plan(PlanRequest),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Pong,
    Plan(PlanResponse),
    Error(String),
}

impl Response {
    pub fn to_json_line(&self) -> String {
        let body = match self {
            Response::Pong => ResponseBody::Pong,
            Response::Plan(p) => ResponseBody::Plan(PlanResponseWire::from(p)),
            Response::Error(message) => ResponseBody::Error {
                message: message.clone(),
            },
        };
        serde_json::to_string(&Envelope {
            proto: PROTO_VERSION,
            body,
        })
        .expect("response serializes")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("invalid field: {0}")]
    Invalid(String),
}

fn check_version(proto: u32) -> Result<(), ProtocolError> {
    if proto == PROTO_VERSION {
        Ok(())
    } else {
        Err(ProtocolError::Version(proto))
    }
}

pub fn parse_request_line(line: &str) -> Result<Request, ProtocolError> {
    let msg: Envelope<RequestBody> =
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    check_version(msg.proto)?;
    match msg.body {
        RequestBody::Ping => Ok(Request::Ping),
        RequestBody::Plan(w) => {
            let req = PlanRequest::try_from(*w)?;
            req.check_ablation_consistency()
                .map_err(ProtocolError::Invalid)?;
            if !(req.dt_s.is_finite() && req.dt_s > 0.0) {
                return Err(ProtocolError::Invalid(format!("dt_s {}", req.dt_s)));
            }
            if !(req.horizon_s.is_finite() && req.horizon_s > 0.0) || !req.tick_t.is_finite() {
                return Err(ProtocolError::Invalid("horizon_s / tick_t".into()));
            }
            Ok(Request::Plan(req))
        }
    }
}

pub fn parse_response_line(line: &str) -> Result<Response, ProtocolError> {
    let msg: Envelope<ResponseBody> =
        serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    check_version(msg.proto)?;
    Ok(match msg.body {
        ResponseBody::Pong => Response::Pong,
        ResponseBody::Error { message } => Response::Error(message),
        ResponseBody::Plan(w) => Response::Plan(PlanResponse {
            trajectory: Trajectory::from_rows(&w.trajectory)
                .map_err(|e| ProtocolError::Invalid(format!("trajectory: {e}")))?,
            reasoning_text: w.reasoning_text,
            reasoning_direction: w.reasoning_direction,
        }),
    })
}

pub fn ping_line() -> String {
    serde_json::to_string(&Envelope {
        proto: PROTO_VERSION,
        body: RequestBody::Ping,
    })
    .expect("ping serializes")
}

// ---------------------------------------------------------------------------
// wire format

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    proto: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RequestBody {
    Ping,
    Plan(Box<PlanRequestWire>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ResponseBody {
    Pong,
    Plan(PlanResponseWire),
    Error { message: String },
}

#[derive(Serialize, Deserialize)]
struct SceneWire {
    map: MapWire,
    objects: Vec<ObjectWire>,
    traffic_lights: Vec<TrafficLight>,
}

#[derive(Serialize, Deserialize)]
struct PlanRequestWire {
    scenario_id: String,
    tick_t: f64,
    ego_state: Option<EgoStateWire>,
    ego_history: Option<Vec<[f64; 4]>>,
    navigation_goal: Option<PoseWire>,
    #[serde(default)]
    prior_ablation_flags: BTreeSet<AblationFlag>,
    #[serde(default)]
    scene: Option<SceneWire>,
    horizon_s: f64,
    dt_s: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanResponseWire {
    trajectory: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reasoning_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reasoning_direction: Option<Direction>,
}

impl From<&PlanRequest> for PlanRequestWire {
    fn from(r: &PlanRequest) -> Self {
        Self {
            scenario_id: r.scenario_id.clone(),
            tick_t: r.tick_t,
            ego_state: r.ego_state.as_ref().map(EgoStateWire::from),
            ego_history: r.ego_history.as_ref().map(Trajectory::to_rows),
            navigation_goal: r.navigation_goal.as_ref().map(pose_to_wire),
            prior_ablation_flags: r.prior_ablation_flags.clone(),
            scene: r.scene.as_ref().map(|s| SceneWire {
                map: MapWire::from(&s.map),
                objects: s.objects.iter().map(ObjectWire::from).collect(),
                traffic_lights: s.traffic_lights.clone(),
            }),
            horizon_s: r.horizon_s,
            dt_s: r.dt_s,
        }
    }
}

impl TryFrom<PlanRequestWire> for PlanRequest {
    type Error = ProtocolError;

    fn try_from(w: PlanRequestWire) -> Result<Self, ProtocolError> {
        let invalid = |what: &str, e: &dyn std::fmt::Display| ProtocolError::Invalid(format!("{what}: {e}"));
        let ego_state = w.ego_state.map(EgoState::from);
        if ego_state.is_some_and(|e| !e.is_finite()) {
            return Err(ProtocolError::Invalid("ego_state is not finite".into()));
        }
        let ego_history = w
            .ego_history
            .map(|rows| Trajectory::from_rows(&rows))
            .transpose()
            .map_err(|e| invalid("ego_history", &e))?;
        let navigation_goal = w.navigation_goal.map(pose_from_wire);
        if navigation_goal.is_some_and(|g| !g.is_finite()) {
            return Err(ProtocolError::Invalid("navigation_goal is not finite".into()));
        }
        let scene = w
            .scene
            .map(|s| -> Result<ScenePayload, ScenarioError> {
                Ok(ScenePayload {
                    map: MapModel::try_from(s.map)?,
                    objects: s
                        .objects
                        .into_iter()
                        .map(TrackedObject::try_from)
                        .collect::<Result<_, _>>()?,
                    traffic_lights: s.traffic_lights,
                })
            })
            .transpose()
            .map_err(|e| invalid("scene", &e))?
            .map(Arc::new);
        Ok(Self {
            scenario_id: w.scenario_id,
            tick_t: w.tick_t,
            ego_state,
            ego_history,
            navigation_goal,
            prior_ablation_flags: w.prior_ablation_flags,
            scene,
            horizon_s: w.horizon_s,
            dt_s: w.dt_s,
        })
    }
}

impl From<&PlanResponse> for PlanResponseWire {
    fn from(r: &PlanResponse) -> Self {
        Self {
            trajectory: r.trajectory.to_rows(),
            reasoning_text: r.reasoning_text.clone(),
            reasoning_direction: r.reasoning_direction,
        }
    }
}
