//! Open-loop displacement and heading metrics and the composite open-loop
//! score.
//!
//! A plan and the expert are compared over a horizon window: the first
//! `horizon / dt` samples after the decision time. The five core metrics are
//! averaged over every decision tick of a scenario, gated against fixed
//! limits, and folded into a 0–100 score in which the miss rate acts as a
//! hard gate.

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, PlanRequest, Planner};
use crate::geometry::angle_diff_abs;
use crate::scenario::{EgoState, ScenarioRecord};
use crate::trajectory::{TimedPose, Trajectory, TrajectoryError, TIME_EPS};

/// Scenario-mean ADE/FDE above this fails the displacement gates.
pub const DISPLACEMENT_LIMIT_M: f64 = 8.0;
/// Scenario-mean AHE/FHE above this fails the heading gates.
pub const HEADING_LIMIT_RAD: f64 = 0.8;
/// Miss rate above this zeroes the score.
pub const MISS_RATE_LIMIT: f64 = 0.30;

const TIMESTAMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("plan and expert timestamps differ at sample {index}: {plan_t} vs {expert_t}")]
    MismatchedTimestamps {
        index: usize,
        plan_t: f64,
        expert_t: f64,
    },
    #[error("horizon needs {needed} samples but only {available} are available")]
    HorizonExceedsSpan { needed: usize, available: usize },
    #[error("unsupported horizon {0} s (expected 1, 2 or 3)")]
    UnsupportedHorizon(f64),
    #[error("scenario mean for {metric} is invalid: {value}")]
    InvalidMean { metric: &'static str, value: f64 },
    #[error("no decision windows to aggregate")]
    NoWindows,
}

/// Evaluation horizon with its miss threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub seconds: f64,
    pub miss_threshold: f64,
}

impl Horizon {
    pub const ONE_S: Horizon = Horizon {
        seconds: 1.0,
        miss_threshold: 2.0,
    };
    pub const TWO_S: Horizon = Horizon {
        seconds: 2.0,
        miss_threshold: 3.2,
    };
    pub const THREE_S: Horizon = Horizon {
        seconds: 3.0,
        miss_threshold: 6.0,
    };

    pub const ALL: [Horizon; 3] = [Horizon::ONE_S, Horizon::TWO_S, Horizon::THREE_S];

    pub fn from_seconds(seconds: f64) -> Result<Self, MetricError> {
        Self::ALL
            .into_iter()
            .find(|h| (h.seconds - seconds).abs() < 1e-9)
            .ok_or(MetricError::UnsupportedHorizon(seconds))
    }
}

/// Per-window metrics for one decision tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMetrics {
    pub ade: f64,
    pub fde: f64,
    pub ahe: f64,
    pub fhe: f64,
    pub max_displacement: f64,
}

fn window<'a>(
    plan: &'a Trajectory,
    expert: &'a Trajectory,
    horizon: Horizon,
) -> Result<(&'a [TimedPose], &'a [TimedPose]), MetricError> {
    let needed = ((horizon.seconds / plan.dt()).round() as usize).max(1);
    let available = plan.len().min(expert.len());
    if available < needed {
        return Err(MetricError::HorizonExceedsSpan { needed, available });
    }
    let p = &plan.points()[..needed];
    let e = &expert.points()[..needed];
    for (index, (a, b)) in p.iter().zip(e).enumerate() {
        if (a.t - b.t).abs() > TIMESTAMP_TOL {
            return Err(MetricError::MismatchedTimestamps {
                index,
                plan_t: a.t,
                expert_t: b.t,
            });
        }
    }
    Ok((p, e))
}

pub fn window_metrics(
    plan: &Trajectory,
    expert: &Trajectory,
    horizon: Horizon,
) -> Result<WindowMetrics, MetricError> {
    let (p, e) = window(plan, expert, horizon)?;
    let n = p.len() as f64;
    let mut dist_sum = 0.0;
    let mut head_sum = 0.0;
    let mut max_displacement: f64 = 0.0;
    for (a, b) in p.iter().zip(e) {
        let d = a.position().distance(b.position());
        dist_sum += d;
        max_displacement = max_displacement.max(d);
        head_sum += angle_diff_abs(a.pose.heading(), b.pose.heading());
    }
    let (a, b) = (p[p.len() - 1], e[e.len() - 1]);
    Ok(WindowMetrics {
        ade: dist_sum / n,
        fde: a.position().distance(b.position()),
        ahe: head_sum / n,
        fhe: angle_diff_abs(a.pose.heading(), b.pose.heading()),
        max_displacement,
    })
}

pub fn ade(plan: &Trajectory, expert: &Trajectory, horizon: Horizon) -> Result<f64, MetricError> {
    window_metrics(plan, expert, horizon).map(|m| m.ade)
}

pub fn fde(plan: &Trajectory, expert: &Trajectory, horizon: Horizon) -> Result<f64, MetricError> {
    window_metrics(plan, expert, horizon).map(|m| m.fde)
}

/// `(ahe, fhe)` with per-point differences wrapped into `[0, π]`.
pub fn heading_errors(
    plan: &Trajectory,
    expert: &Trajectory,
    horizon: Horizon,
) -> Result<(f64, f64), MetricError> {
    window_metrics(plan, expert, horizon).map(|m| (m.ahe, m.fhe))
}

/// Fraction of windows whose maximum displacement strictly exceeds
/// `threshold`.
pub fn miss_rate_from_max(max_displacements: &[f64], threshold: f64) -> Result<f64, MetricError> {
    if max_displacements.is_empty() {
        return Err(MetricError::NoWindows);
    }
    let misses = max_displacements.iter().filter(|&&d| d > threshold).count();
    Ok(misses as f64 / max_displacements.len() as f64)
}

/// Miss rate over `(plan, expert)` windows, one per decision tick.
pub fn miss_rate(
    windows: &[(Trajectory, Trajectory)],
    horizon: Horizon,
) -> Result<f64, MetricError> {
    let maxes = windows
        .iter()
        .map(|(p, e)| window_metrics(p, e, horizon).map(|m| m.max_displacement))
        .collect::<Result<Vec<_>, _>>()?;
    miss_rate_from_max(&maxes, horizon.miss_threshold)
}

/// Scenario-level means of the five core metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopMeans {
    pub ade: f64,
    pub fde: f64,
    pub ahe: f64,
    pub fhe: f64,
    pub miss_rate: f64,
}

impl OpenLoopMeans {
    pub fn from_windows(windows: &[WindowMetrics], horizon: Horizon) -> Result<Self, MetricError> {
        if windows.is_empty() {
            return Err(MetricError::NoWindows);
        }
        let n = windows.len() as f64;
        let mean = |f: fn(&WindowMetrics) -> f64| windows.iter().map(f).sum::<f64>() / n;
        let maxes: Vec<f64> = windows.iter().map(|w| w.max_displacement).collect();
        Ok(Self {
            ade: mean(|w| w.ade),
            fde: mean(|w| w.fde),
            ahe: mean(|w| w.ahe),
            fhe: mean(|w| w.fhe),
            miss_rate: miss_rate_from_max(&maxes, horizon.miss_threshold)?,
        })
    }
}

/// Pass (1) / fail (0) outcome of each gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenLoopBinaries {
    pub ade: u8,
    pub fde: u8,
    pub ahe: u8,
    pub fhe: u8,
    pub miss_rate: u8,
}

impl OpenLoopBinaries {
    /// `(2·ADE + 2·FDE + AHE + FHE) / 6 × MissRate × 100`.
    pub fn composite(&self) -> f64 {
        let weighted = 2 * self.ade as u32 + 2 * self.fde as u32 + self.ahe as u32 + self.fhe as u32;
        weighted as f64 / 6.0 * self.miss_rate as f64 * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopBreakdown {
    pub horizon_s: f64,
    pub ade: f64,
    pub fde: f64,
    pub ahe: f64,
    pub fhe: f64,
    pub miss_rate: f64,
    pub binaries: OpenLoopBinaries,
    pub score: f64,
}

pub fn openloop_score(
    means: &OpenLoopMeans,
    horizon: Horizon,
) -> Result<OpenLoopBreakdown, MetricError> {
    for (metric, value) in [
        ("ade", means.ade),
        ("fde", means.fde),
        ("ahe", means.ahe),
        ("fhe", means.fhe),
        ("miss_rate", means.miss_rate),
    ] {
        if value.is_nan() || value < 0.0 {
            return Err(MetricError::InvalidMean { metric, value });
        }
    }
    let pass = |v: f64, limit: f64| u8::from(v <= limit);
    let binaries = OpenLoopBinaries {
        ade: pass(means.ade, DISPLACEMENT_LIMIT_M),
        fde: pass(means.fde, DISPLACEMENT_LIMIT_M),
        ahe: pass(means.ahe, HEADING_LIMIT_RAD),
        fhe: pass(means.fhe, HEADING_LIMIT_RAD),
        miss_rate: pass(means.miss_rate, MISS_RATE_LIMIT),
    };
    Ok(OpenLoopBreakdown {
        horizon_s: horizon.seconds,
        ade: means.ade,
        fde: means.fde,
        ahe: means.ahe,
        fhe: means.fhe,
        miss_rate: means.miss_rate,
        binaries,
        score: binaries.composite(),
    })
}

/// Failed reports carry NaN metrics, written as JSON `null`.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One line of an open-loop results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub scenario_id: String,
    pub scenario_type: String,
    pub horizon_s: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub ade: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub fde: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub ahe: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub fhe: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub miss_rate: f64,
    pub binaries: OpenLoopBinaries,
    pub score: f64,
    pub windows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl OpenLoopReport {
    fn from_breakdown(rec: &ScenarioRecord, b: OpenLoopBreakdown, windows: usize) -> Self {
        Self {
            scenario_id: rec.id.clone(),
            scenario_type: rec.scenario_type.clone(),
            horizon_s: b.horizon_s,
            ade: b.ade,
            fde: b.fde,
            ahe: b.ahe,
            fhe: b.fhe,
            miss_rate: b.miss_rate,
            binaries: b.binaries,
            score: b.score,
            windows,
            error: None,
        }
    }

    /// Zero-score report for a scenario that could not be evaluated.
    pub fn failed(rec: &ScenarioRecord, horizon: Horizon, error: String) -> Self {
        Self {
            scenario_id: rec.id.clone(),
            scenario_type: rec.scenario_type.clone(),
            horizon_s: horizon.seconds,
            ade: f64::NAN,
            fde: f64::NAN,
            ahe: f64::NAN,
            fhe: f64::NAN,
            miss_rate: f64::NAN,
            binaries: OpenLoopBinaries {
                ade: 0,
                fde: 0,
                ahe: 0,
                fhe: 0,
                miss_rate: 0,
            },
            score: 0.0,
            windows: 0,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenLoopConfig {
    /// Spacing of decision ticks and plan samples.
    pub tick_s: f64,
    /// Length of ego history sent with each request.
    pub history_window_s: f64,
    pub send_scene: bool,
}

impl Default for OpenLoopConfig {
    fn default() -> Self {
        Self {
            tick_s: crate::DEFAULT_TICK_S,
            history_window_s: 2.0,
            send_scene: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("agent_error: {0}")]
    Agent(#[from] AgentError),
    #[error("invalid plan: {0}")]
    Plan(#[from] TrajectoryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl EvalError {
    /// Short tag recorded in reports.
    pub fn tag(&self) -> String {
        match self {
            EvalError::Agent(e) => format!("agent_error:{}", e.code()),
            EvalError::Plan(_) => "invalid_plan".into(),
            EvalError::Metric(_) => "metric_error".into(),
        }
    }
}

/// Ego state replayed from the expert log at `t`.
pub(crate) fn logged_ego_state(rec: &ScenarioRecord, reference: &Trajectory, t: f64, tick: f64) -> EgoState {
    if (t - rec.t0()).abs() <= TIME_EPS {
        return rec.ego_state;
    }
    let pose_at = |t: f64| reference.pose_at(t).ok().map(|p| p.position());
    let cur = reference.pose_at(t).expect("decision tick inside expert span");
    let prev = pose_at(t - tick).unwrap_or(cur.position());
    let prev2 = pose_at(t - 2.0 * tick).unwrap_or(prev);
    let velocity = (cur.position() - prev) * (1.0 / tick);
    let prev_velocity = (prev - prev2) * (1.0 / tick);
    EgoState {
        pose: cur.pose,
        velocity,
        acceleration: (velocity - prev_velocity) * (1.0 / tick),
        t,
    }
}

/// History seen at time `t`: logged history followed by expert samples up to
/// `t`, trimmed to the most recent `window_s` seconds.
pub(crate) fn history_until(
    rec: &ScenarioRecord,
    extra: &[TimedPose],
    t: f64,
    window_s: f64,
) -> Trajectory {
    let points: Vec<TimedPose> = rec
        .ego_history
        .points()
        .iter()
        .chain(extra.iter().filter(|p| p.t > rec.t0() + TIME_EPS))
        .filter(|p| p.t <= t + TIME_EPS && p.t >= t - window_s - TIME_EPS)
        .copied()
        .collect();
    Trajectory::with_dt(points, rec.ego_history.dt()).expect("history stays monotone")
}

/// Sample times `t + k·tick` for `k = 1..=n`.
pub(crate) fn future_times(t: f64, tick: f64, horizon_s: f64) -> Vec<f64> {
    let n = (horizon_s / tick).round() as usize;
    (1..=n).map(|k| t + k as f64 * tick).collect()
}

/// Open-loop evaluation of one scenario: the agent is queried at every
/// decision tick along the logged expert motion, and each horizon is scored
/// over all ticks where its full window exists.
pub fn evaluate_open_loop(
    rec: &ScenarioRecord,
    planner: &mut dyn Planner,
    horizons: &[Horizon],
    cfg: &OpenLoopConfig,
) -> Vec<OpenLoopReport> {
    match try_evaluate_open_loop(rec, planner, horizons, cfg) {
        Ok(reports) => reports,
        Err(e) => {
            log::warn!("scenario {}: {e}", rec.id);
            horizons
                .iter()
                .map(|&h| OpenLoopReport::failed(rec, h, e.tag()))
                .collect()
        }
    }
}

fn try_evaluate_open_loop(
    rec: &ScenarioRecord,
    planner: &mut dyn Planner,
    horizons: &[Horizon],
    cfg: &OpenLoopConfig,
) -> Result<Vec<OpenLoopReport>, EvalError> {
    let tick = cfg.tick_s;
    let reference = rec.expert_reference();
    let span = rec.end_time() - rec.t0();
    let min_h = horizons.iter().map(|h| h.seconds).fold(f64::INFINITY, f64::min);
    let scene = cfg.send_scene.then(|| PlanRequest::scene_of(rec));

    let mut per_horizon: Vec<Vec<WindowMetrics>> = vec![Vec::new(); horizons.len()];
    let mut k = 0usize;
    loop {
        let offset = k as f64 * tick;
        if offset + min_h > span + 1e-6 {
            break;
        }
        let t = rec.t0() + offset;
        let ego = logged_ego_state(rec, &reference, t, tick);
        let history = history_until(rec, reference.points(), t, cfg.history_window_s);
        // ask only for the longest horizon still scoreable at this tick
        let ask = horizons
            .iter()
            .map(|h| h.seconds)
            .filter(|&hs| offset + hs <= span + 1e-6)
            .fold(0.0, f64::max);
        let request = PlanRequest::new(rec, t, ego, history, scene.clone(), ask, tick);
        let response = planner.plan(&request)?;
        let anchored = response.trajectory.anchored_after(ego.timed_pose())?;
        for (hi, h) in horizons.iter().enumerate() {
            if offset + h.seconds > span + 1e-6 {
                continue;
            }
            let times = future_times(t, tick, h.seconds);
            let plan = anchored.sample_at(&times, tick)?;
            let expert = reference.sample_at(&times, tick)?;
            per_horizon[hi].push(window_metrics(&plan, &expert, *h)?);
        }
        k += 1;
    }
    horizons
        .iter()
        .zip(per_horizon)
        .map(|(&h, windows)| {
            let means = OpenLoopMeans::from_windows(&windows, h)?;
            let b = openloop_score(&means, h)?;
            Ok(OpenLoopReport::from_breakdown(rec, b, windows.len()))
        })
        .collect()
}
