//! Planner interface, the built-in mock planners and the adapter for
//! external planner processes.

mod external;
mod mock;
mod protocol;

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioRecord;

pub use external::{serve, ExternalPlanner};
pub use mock::{ExpertEcho, NoisyPlanner, PriorExtrapolator, SceneGrounded, LANE_SEARCH_RADIUS_M};
pub use protocol::{
    parse_request_line, parse_response_line, ping_line, AblationFlag, Direction, PlanRequest,
    PlanResponse, ProtocolError, Request, Response, ScenePayload, PROTO_VERSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("agent did not answer within {after_s} s")]
    Timeout { after_s: f64 },
    #[error("protocol error: {message} (raw line: {raw:?})")]
    Protocol { message: String, raw: String },
    #[error("plan violates trajectory invariants: {0}")]
    InvalidPlan(String),
    #[error("agent i/o failure: {0}")]
    Io(String),
    #[error("agent reported an error: {0}")]
    Remote(String),
    #[error("request lacks required input `{0}`")]
    MissingInput(&'static str),
    #[error("no lane within the search radius of the ego")]
    NoLane,
}

impl AgentError {
    /// Stable code recorded in reports.
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::Timeout { .. } => "timeout",
            AgentError::Protocol { .. } => "protocol",
            AgentError::InvalidPlan(_) => "invalid_plan",
            AgentError::Io(_) => "io",
            AgentError::Remote(_) => "remote",
            AgentError::MissingInput(_) => "missing_input",
            AgentError::NoLane => "no_lane",
        }
    }
}

/// A planner answers one request at a time.
pub trait Planner: Send {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError>;
}

impl<P: Planner + ?Sized> Planner for Box<P> {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        (**self).plan(req)
    }
}

/// Calls the inner planner and rejects responses outside the requested
/// window.
pub struct Validated<P>(pub P);

impl<P: Planner> Planner for Validated<P> {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        let resp = self.0.plan(req)?;
        resp.validate(req).map_err(AgentError::InvalidPlan)?;
        Ok(resp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    MockPriorExtrapolator,
    MockSceneGrounded,
    MockNoisy,
    MockExpertEcho,
    External,
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| format!("unknown agent kind `{s}`"))
    }
}

/// How to construct a planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSpec {
    pub kind: AgentKind,
    /// Planner wrapped by `mock_noisy`.
    pub noise_base: AgentKind,
    /// Standard deviation of waypoint noise for `mock_noisy`, meters.
    pub noise_sigma_m: f64,
    /// Program and arguments for `external`.
    pub command: Vec<String>,
    pub timeout_s: f64,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            kind: AgentKind::MockSceneGrounded,
            noise_base: AgentKind::MockSceneGrounded,
            noise_sigma_m: 0.5,
            command: Vec::new(),
            timeout_s: 30.0,
        }
    }
}

impl AgentSpec {
    pub fn of_kind(kind: AgentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Builds a validated planner. `scenarios` backs `mock_expert_echo`;
    /// `seed` drives `mock_noisy`.
    pub fn build(&self, scenarios: &[ScenarioRecord], seed: u64) -> Result<Box<dyn Planner>, AgentError> {
        Ok(match self.kind {
            AgentKind::MockNoisy => {
                let base = match self.noise_base {
                    AgentKind::MockPriorExtrapolator => Box::new(PriorExtrapolator) as Box<dyn Planner>,
                    AgentKind::MockSceneGrounded => Box::new(SceneGrounded),
                    other => {
                        return Err(AgentError::Io(format!(
                            "mock_noisy cannot wrap {other:?}"
                        )))
                    }
                };
                Box::new(Validated(NoisyPlanner::new(base, self.noise_sigma_m, seed)))
            }
            AgentKind::MockPriorExtrapolator => Box::new(Validated(PriorExtrapolator)),
            AgentKind::MockSceneGrounded => Box::new(Validated(SceneGrounded)),
            AgentKind::MockExpertEcho => Box::new(Validated(ExpertEcho::new(scenarios))),
            AgentKind::External => Box::new(ExternalPlanner::spawn(&self.command, self.timeout_s)?),
        })
    }
}
