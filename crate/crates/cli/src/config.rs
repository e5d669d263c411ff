//! Run configuration: defaults, then a JSON file, then command-line flags.
//!
//! Every key of [`RunConfig`] has a flag of the same kebab-case name, so a
//! manifest's config snapshot can be replayed either as a file or as flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use causal_probe_core::agents::{AgentKind, AgentSpec};
use causal_probe_core::closedloop::ReplayConfig;
use causal_probe_core::grpo::{GrpoConfig, RewardWeights};
use causal_probe_core::openloop::{Horizon, OpenLoopConfig};
use causal_probe_core::probe::{PerturbationSpec, ProbeKind};

/// Fraction of failed scenarios above which a run exits nonzero.
pub const DEFAULT_FAIL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    pub log_level: String,
    /// Keep only these scenario types; empty keeps all.
    pub scenario_types: Vec<String>,
    /// Seeded random subset of at most this many scenarios per type.
    pub per_type_limit: Option<usize>,
    pub fail_threshold: f64,

    pub agent: AgentKind,
    pub agent_command: Vec<String>,
    pub agent_timeout_s: f64,
    pub noise_base: AgentKind,
    pub noise_sigma_m: f64,

    pub horizons: Vec<f64>,
    pub tick_s: f64,
    pub history_window_s: f64,
    pub send_scene: bool,

    pub replan_period_s: f64,
    pub plan_horizon_s: f64,
    pub ttc_horizon_s: f64,
    pub ttc_step_s: f64,
    pub ego_half_length_m: f64,
    pub ego_half_width_m: f64,
    pub at_fault_speed_mps: f64,
    pub lane_search_radius_m: f64,

    pub probe_kinds: BTreeSet<ProbeKind>,
    pub offset_factor: f64,
    pub deviation_threshold_m: f64,
    pub turn_threshold_m: f64,
    pub probe_horizon_s: f64,
    /// JSON object mapping scenario id to a reasoning direction.
    pub labels: Option<PathBuf>,

    pub dump: Option<PathBuf>,
    pub targets: Vec<String>,

    pub grpo_input: Option<PathBuf>,
    pub reward_preset: String,
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_guard: f64,

    /// Stratum sizes for `sample`; empty derives them from the corpus.
    pub strata: Vec<u64>,
    pub budget: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentSpec::default();
        let ol = OpenLoopConfig::default();
        let replay = ReplayConfig::default();
        let probe = PerturbationSpec::default();
        let grpo = GrpoConfig::default();
        Self {
            corpus: None,
            out: PathBuf::from("out"),
            seed: 0,
            jobs: 0,
            log_level: "info".into(),
            scenario_types: Vec::new(),
            per_type_limit: None,
            fail_threshold: DEFAULT_FAIL_THRESHOLD,
            agent: agent.kind,
            agent_command: agent.command,
            agent_timeout_s: agent.timeout_s,
            noise_base: agent.noise_base,
            noise_sigma_m: agent.noise_sigma_m,
            horizons: Horizon::ALL.iter().map(|h| h.seconds).collect(),
            tick_s: ol.tick_s,
            history_window_s: ol.history_window_s,
            send_scene: ol.send_scene,
            replan_period_s: replay.replan_period_s,
            plan_horizon_s: replay.plan_horizon_s,
            ttc_horizon_s: replay.ttc_horizon_s,
            ttc_step_s: replay.ttc_step_s,
            ego_half_length_m: replay.ego_half_length_m,
            ego_half_width_m: replay.ego_half_width_m,
            at_fault_speed_mps: replay.at_fault_speed_mps,
            lane_search_radius_m: replay.lane_search_radius_m,
            probe_kinds: probe.kinds,
            offset_factor: probe.offset_factor,
            deviation_threshold_m: probe.deviation_threshold_m,
            turn_threshold_m: probe.turn_threshold_m,
            probe_horizon_s: probe.horizon_s,
            labels: None,
            dump: None,
            targets: causal_probe_core::attention::DEFAULT_TARGETS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            grpo_input: None,
            reward_preset: "cot_grpo".into(),
            group_size: grpo.group_size,
            clip_epsilon: grpo.clip_epsilon,
            kl_beta: grpo.kl_beta,
            std_guard: grpo.std_guard,
            strata: Vec::new(),
            budget: None,
        }
    }
}

/// Flag overrides; each field mirrors the [`RunConfig`] key of the same name.
#[derive(Debug, Clone, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Overrides {
    /// Scenario corpus, JSON Lines.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Seed for corpus subsets and noisy agents.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_level: Option<String>,
    /// Comma-separated scenario types to keep.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_types: Option<Vec<String>>,
    /// Seeded random subset of at most this many scenarios per type.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_type_limit: Option<usize>,
    /// Exit 1 when the failed fraction exceeds this.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fail_threshold: Option<f64>,

    /// Agent kind, e.g. mock_scene_grounded or external.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    /// Program and arguments of an external agent; repeat once per word.
    #[arg(long, global = true, action = clap::ArgAction::Append, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_command: Option<Vec<String>>,
    /// Seconds to wait for each external agent response.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent_timeout_s: Option<f64>,
    /// Planner perturbed by mock_noisy.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_base: Option<String>,
    /// Standard deviation of mock_noisy waypoint noise, meters.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma_m: Option<f64>,

    /// Comma-separated open-loop horizons, seconds.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<f64>>,
    /// Canonical time step, seconds.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tick_s: Option<f64>,
    /// Ego history sent to the agent, seconds.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history_window_s: Option<f64>,
    /// Include map, objects and lights in requests.
    #[arg(long, global = true, action = clap::ArgAction::Set)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub send_scene: Option<bool>,

    /// Seconds between agent queries during replay.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replan_period_s: Option<f64>,
    /// Plan length requested during replay, seconds.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_horizon_s: Option<f64>,
    /// Time-to-collision look-ahead, seconds.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttc_horizon_s: Option<f64>,
    /// Time-to-collision projection step, seconds.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttc_step_s: Option<f64>,
    /// Ego box half length, meters.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ego_half_length_m: Option<f64>,
    /// Ego box half width, meters.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ego_half_width_m: Option<f64>,
    /// Objects slower than this at contact are hit at fault.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at_fault_speed_mps: Option<f64>,
    /// Distance within which the nearest lane is used.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lane_search_radius_m: Option<f64>,

    /// lateral_offset and/or direction_inversion.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_kinds: Option<Vec<String>>,
    /// Lateral offset as a fraction of ego speed times one second.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_factor: Option<f64>,
    /// Mean deviation that flags a scenario, meters.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation_threshold_m: Option<f64>,
    /// Lateral end offset that counts as a turn, meters.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_threshold_m: Option<f64>,
    /// Plan horizon compared by the probes, seconds.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_horizon_s: Option<f64>,
    /// JSON object mapping scenario id to a reasoning direction.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,

    /// Attention tensor dump.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump: Option<PathBuf>,
    /// Comma-separated target segments.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<String>>,

    /// Recorded GRPO groups, JSON.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grpo_input: Option<PathBuf>,
    /// cot_grpo or base_grpo.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_preset: Option<String>,
    /// Outputs per group.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    /// Ratio clip range.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_epsilon: Option<f64>,
    /// KL penalty weight.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_beta: Option<f64>,
    /// Added to the group reward std before dividing.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_guard: Option<f64>,

    /// Comma-separated stratum sizes; empty derives them from the corpus.
    #[arg(long, global = true, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strata: Option<Vec<u64>>,
    /// Total samples to allocate.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

fn merge(base: &mut Map<String, Value>, layer: Map<String, Value>) {
    for (k, v) in layer {
        base.insert(k, v);
    }
}

impl RunConfig {
    /// Defaults, overlaid by the config file (if any), overlaid by flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(RunConfig::default())? else {
            unreachable!("RunConfig serializes to an object");
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let value: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            let Value::Object(layer) = value else {
                bail!("config {} must be a JSON object", path.display());
            };
            merge(&mut merged, layer);
        }
        let Value::Object(layer) = serde_json::to_value(overrides)? else {
            unreachable!("overrides serialize to an object");
        };
        merge(&mut merged, layer);
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            bail!("horizons must not be empty");
        }
        self.horizon_list()?;
        if !(0.0..=1.0).contains(&self.fail_threshold) {
            bail!("fail-threshold must lie in [0, 1]");
        }
        if !(self.tick_s.is_finite() && self.tick_s > 0.0) {
            bail!("tick-s must be positive");
        }
        if self.agent == AgentKind::External && self.agent_command.is_empty() {
            bail!("agent `external` needs agent-command");
        }
        if self.agent == AgentKind::MockNoisy
            && !matches!(
                self.noise_base,
                AgentKind::MockPriorExtrapolator | AgentKind::MockSceneGrounded
            )
        {
            bail!("noise-base must be mock_prior_extrapolator or mock_scene_grounded");
        }
        self.perturbation_spec().validate()?;
        Ok(())
    }

    pub fn horizon_list(&self) -> Result<Vec<Horizon>> {
        let mut out: Vec<Horizon> = Vec::new();
        for &s in &self.horizons {
            let h = Horizon::from_seconds(s)?;
            if !out.contains(&h) {
                out.push(h);
            }
        }
        Ok(out)
    }

    pub fn agent_spec(&self) -> AgentSpec {
        AgentSpec {
            kind: self.agent,
            noise_base: self.noise_base,
            noise_sigma_m: self.noise_sigma_m,
            command: self.agent_command.clone(),
            timeout_s: self.agent_timeout_s,
        }
    }

    pub fn open_loop(&self) -> OpenLoopConfig {
        OpenLoopConfig {
            tick_s: self.tick_s,
            history_window_s: self.history_window_s,
            send_scene: self.send_scene,
        }
    }

    pub fn replay(&self) -> ReplayConfig {
        ReplayConfig {
            tick_s: self.tick_s,
            replan_period_s: self.replan_period_s,
            ttc_horizon_s: self.ttc_horizon_s,
            ttc_step_s: self.ttc_step_s,
            agent_timeout_s: self.agent_timeout_s,
            plan_horizon_s: self.plan_horizon_s,
            history_window_s: self.history_window_s,
            ego_half_length_m: self.ego_half_length_m,
            ego_half_width_m: self.ego_half_width_m,
            at_fault_speed_mps: self.at_fault_speed_mps,
            lane_search_radius_m: self.lane_search_radius_m,
            send_scene: self.send_scene,
            ..ReplayConfig::default()
        }
    }

    pub fn perturbation_spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            kinds: self.probe_kinds.clone(),
            offset_factor: self.offset_factor,
            deviation_threshold_m: self.deviation_threshold_m,
            turn_threshold_m: self.turn_threshold_m,
            horizon_s: self.probe_horizon_s,
            dt_s: self.tick_s,
        }
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_epsilon: self.clip_epsilon,
            kl_beta: self.kl_beta,
            std_guard: self.std_guard,
        }
    }

    pub fn reward_weights(&self) -> Result<RewardWeights> {
        RewardWeights::preset(&self.reward_preset)
            .with_context(|| format!("unknown reward-preset `{}`", self.reward_preset))
    }
}
