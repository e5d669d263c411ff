//! Group-relative policy optimization terms: rewards, normalized
//! advantages, clipped importance weights and the KL penalty.
//!
//! These are the per-group quantities only; no optimizer is attached.

use serde::{Deserialize, Serialize};

use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group needs at least 2 outputs, got {0}")]
    GroupTooSmall(usize),
    #[error("group has {actual} outputs but the configured group size is {expected}")]
    GroupSize { expected: usize, actual: usize },
    #[error("ratio must be positive and finite, got {0}")]
    NonPositiveRatio(f64),
    #[error("probability must be positive and finite, got {0}")]
    BadProbability(f64),
    #[error("reward must lie in [0, 1], got {0}")]
    BadReward(f64),
    #[error("invalid reward weights: {0}")]
    BadWeights(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("plan and expert timestamps differ at sample {0}")]
    MismatchedTimestamps(usize),
    #[error("velocity reward needs at least 2 samples")]
    TooShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub location: f64,
    pub velocity: f64,
    pub format: f64,
}

impl RewardWeights {
    /// Location and velocity dominate, format is a small bonus.
    pub const COT_GRPO: RewardWeights = RewardWeights {
        location: 0.45,
        velocity: 0.45,
        format: 0.1,
    };
    /// Equal weights.
    pub const BASE_GRPO: RewardWeights = RewardWeights {
        location: 1.0 / 3.0,
        velocity: 1.0 / 3.0,
        format: 1.0 / 3.0,
    };

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cot_grpo" => Some(Self::COT_GRPO),
            "base_grpo" => Some(Self::BASE_GRPO),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let w = [self.location, self.velocity, self.format];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(GrpoError::BadWeights("weights must be finite and non-negative".into()));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(GrpoError::BadWeights("at least one weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub location: f64,
    pub velocity: f64,
    pub format: f64,
}

impl Rewards {
    fn validate(&self) -> Result<(), GrpoError> {
        for r in [self.location, self.velocity, self.format] {
            if !(0.0..=1.0).contains(&r) {
                return Err(GrpoError::BadReward(r));
            }
        }
        Ok(())
    }
}

pub fn combined_reward(r: &Rewards, w: &RewardWeights) -> f64 {
    w.location * r.location + w.velocity * r.velocity + w.format * r.format
}

/// `max(0, 1 − error/τ)`.
pub fn shaped_reward(error: f64, tau: f64) -> f64 {
    (1.0 - error / tau).max(0.0)
}

/// Rewards from the mean L2 error of positions and of finite-difference
/// velocities against the expert on shared timestamps.
pub fn location_velocity_rewards(
    plan: &Trajectory,
    expert: &Trajectory,
    tau_loc: f64,
    tau_vel: f64,
) -> Result<(f64, f64), GrpoError> {
    if !(tau_loc > 0.0 && tau_vel > 0.0) {
        return Err(GrpoError::BadConfig("tau must be positive".into()));
    }
    let (p, e) = (plan.points(), expert.points());
    if p.len() != e.len() {
        return Err(GrpoError::MismatchedTimestamps(p.len().min(e.len())));
    }
    if let Some(i) = p.iter().zip(e).position(|(a, b)| (a.t - b.t).abs() > 1e-6) {
        return Err(GrpoError::MismatchedTimestamps(i));
    }
    if p.len() < 2 {
        return Err(GrpoError::TooShort);
    }
    let loc_err = p
        .iter()
        .zip(e)
        .map(|(a, b)| a.position().distance(b.position()))
        .sum::<f64>()
        / p.len() as f64;
    let vel = |w: &[crate::trajectory::TimedPose]| (w[1].position() - w[0].position()) * (1.0 / (w[1].t - w[0].t));
    let vel_err = p
        .windows(2)
        .zip(e.windows(2))
        .map(|(a, b)| vel(a).distance(vel(b)))
        .sum::<f64>()
        / (p.len() - 1) as f64;
    Ok((shaped_reward(loc_err, tau_loc), shaped_reward(vel_err, tau_vel)))
}

const THINK: (&str, &str) = ("<think>", "</think>");
const ANSWER: (&str, &str) = ("<answer>", "</answer>");
const TAGS: [&str; 4] = ["<think>", "</think>", "<answer>", "</answer>"];

fn has_tag(s: &str) -> bool {
    TAGS.iter().any(|t| s.contains(t))
}

/// Splits `s` into the content of a leading `open…close` block and the rest.
fn block<'a>(s: &'a str, (open, close): (&str, &str)) -> Option<(&'a str, &'a str)> {
    let body = s.strip_prefix(open)?;
    let end = body.find(close)?;
    Some((&body[..end], &body[end + close.len()..]))
}

/// 1 iff the text is one think block followed by one answer block, with
/// only whitespace around and between them.
pub fn format_reward(text: &str) -> f64 {
    let ok = (|| {
        let (think, rest) = block(text.trim(), THINK)?;
        let (answer, tail) = block(rest.trim_start(), ANSWER)?;
        (!has_tag(think) && !has_tag(answer) && tail.is_empty()).then_some(())
    })();
    if ok.is_some() {
        1.0
    } else {
        0.0
    }
}

/// `(R_i − mean)/std` with the population standard deviation; all zeros
/// when the spread is below `std_guard`.
pub fn normalized_advantage(rewards: &[f64], std_guard: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_guard {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `min(r, clip(r, 1 − ε, 1 + ε))`.
pub fn clipped_weight(ratio: f64, epsilon: f64) -> Result<f64, GrpoError> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(GrpoError::NonPositiveRatio(ratio));
    }
    Ok(ratio.min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon)))
}

/// `x − ln x − 1` with `x = π_ref / π_θ`.
pub fn kl_penalty(x: f64) -> Result<f64, GrpoError> {
    if !(x.is_finite() && x > 0.0) {
        return Err(GrpoError::NonPositiveRatio(x));
    }
    Ok(x - x.ln() - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_guard: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            std_guard: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(GrpoError::BadConfig("clip_epsilon must lie in (0, 1)".into()));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return Err(GrpoError::BadConfig("kl_beta must be non-negative".into()));
        }
        if !(self.std_guard.is_finite() && self.std_guard > 0.0) {
            return Err(GrpoError::BadConfig("std_guard must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutput {
    pub rewards: Rewards,
    pub policy_prob: f64,
    pub old_policy_prob: f64,
    pub ref_policy_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub outputs: Vec<GroupOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputTerms {
    pub reward: f64,
    pub advantage: f64,
    pub ratio: f64,
    pub clipped_weight: f64,
    pub kl: f64,
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupObjective {
    pub outputs: Vec<OutputTerms>,
    pub objective: f64,
}

/// Per-output `A_i·w̃_i − β·KL_i` and their mean.
pub fn grpo_objective_terms(
    group: &GroupSample,
    cfg: &GrpoConfig,
    weights: &RewardWeights,
) -> Result<GroupObjective, GrpoError> {
    cfg.validate()?;
    weights.validate()?;
    if group.outputs.len() != cfg.group_size {
        return Err(GrpoError::GroupSize {
            expected: cfg.group_size,
            actual: group.outputs.len(),
        });
    }
    for o in &group.outputs {
        o.rewards.validate()?;
        for p in [o.policy_prob, o.old_policy_prob, o.ref_policy_prob] {
            if !(p.is_finite() && p > 0.0) {
                return Err(GrpoError::BadProbability(p));
            }
        }
    }
    let rewards: Vec<f64> = group
        .outputs
        .iter()
        .map(|o| combined_reward(&o.rewards, weights))
        .collect();
    let advantages = normalized_advantage(&rewards, cfg.std_guard)?;
    let outputs = group
        .outputs
        .iter()
        .zip(rewards.iter().zip(&advantages))
        .map(|(o, (&reward, &advantage))| {
            let ratio = o.policy_prob / o.old_policy_prob;
            let w = clipped_weight(ratio, cfg.clip_epsilon)?;
            let kl = kl_penalty(o.ref_policy_prob / o.policy_prob)?;
            Ok(OutputTerms {
                reward,
                advantage,
                ratio,
                clipped_weight: w,
                kl,
                term: advantage * w - cfg.kl_beta * kl,
            })
        })
        .collect::<Result<Vec<_>, GrpoError>>()?;
    let objective = outputs.iter().map(|o| o.term).sum::<f64>() / outputs.len() as f64;
    Ok(GroupObjective { outputs, objective })
}

/// Parses a JSON group file body.
pub fn parse_group(text: &str) -> Result<GroupSample, serde_json::Error> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rewards(l: f64, v: f64, f: f64) -> Rewards {
        Rewards {
            location: l,
            velocity: v,
            format: f,
        }
    }

    #[test]
    fn combined_reward_examples() {
        let w = RewardWeights::COT_GRPO;
        assert!((combined_reward(&rewards(1.0, 1.0, 1.0), &w) - 1.0).abs() < 1e-12);
        assert_eq!(combined_reward(&rewards(0.0, 0.0, 0.0), &w), 0.0);
        assert!((combined_reward(&rewards(0.5, 0.5, 1.0), &w) - 0.55).abs() < 1e-12);
        assert!((combined_reward(&rewards(1.0, 1.0, 1.0), &RewardWeights::BASE_GRPO) - 1.0).abs() < 1e-12);
        assert!(RewardWeights { location: 0.0, velocity: 0.0, format: 0.0 }.validate().is_err());
    }

    #[test]
    fn shaped_reward_examples() {
        let expert = Trajectory::from_rows(&[[0.1, 1.0, 0.0, 0.0], [0.2, 2.0, 0.0, 0.0], [0.3, 3.0, 0.0, 0.0]]).unwrap();
        assert_eq!(location_velocity_rewards(&expert, &expert, 2.0, 2.0).unwrap(), (1.0, 1.0));
        let shifted = Trajectory::from_rows(&[[0.1, 1.0, 1.0, 0.0], [0.2, 2.0, 1.0, 0.0], [0.3, 3.0, 1.0, 0.0]]).unwrap();
        assert_eq!(location_velocity_rewards(&shifted, &expert, 2.0, 2.0).unwrap(), (0.5, 1.0));
        let far = Trajectory::from_rows(&[[0.1, 1.0, 5.0, 0.0], [0.2, 2.0, 5.0, 0.0], [0.3, 3.0, 5.0, 0.0]]).unwrap();
        assert_eq!(location_velocity_rewards(&far, &expert, 2.0, 2.0).unwrap().0, 0.0);
        let off = Trajectory::from_rows(&[[0.1, 1.0, 0.0, 0.0], [0.25, 2.0, 0.0, 0.0], [0.3, 3.0, 0.0, 0.0]]).unwrap();
        assert_eq!(location_velocity_rewards(&off, &expert, 2.0, 2.0), Err(GrpoError::MismatchedTimestamps(1)));
    }

    #[test]
    fn format_reward_examples() {
        assert_eq!(format_reward("<think>a</think><answer>b</answer>"), 1.0);
        assert_eq!(format_reward("  <think>a</think>\n <answer>b</answer>\n"), 1.0);
        assert_eq!(format_reward("<answer>b</answer>"), 0.0);
        assert_eq!(format_reward(""), 0.0);
        assert_eq!(format_reward("<think>a</think><answer>b</answer><answer>c</answer>"), 0.0);
        assert_eq!(format_reward("<think>a<think>x</think></think><answer>b</answer>"), 0.0);
        assert_eq!(format_reward("<think>a</think>junk<answer>b</answer>"), 0.0);
        assert_eq!(format_reward("<answer>b</answer><think>a</think>"), 0.0);
    }

    #[test]
    fn advantage_examples() {
        let a = normalized_advantage(&[1.0, 2.0, 3.0], 1e-8).unwrap();
        let k = 1.5f64.sqrt();
        assert!((a[0] + k).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] - k).abs() < 1e-12);
        assert!((a[2] - 1.2247).abs() < 1e-4);
        assert_eq!(normalized_advantage(&[0.3; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert_eq!(normalized_advantage(&[1.0], 1e-8), Err(GrpoError::GroupTooSmall(1)));
    }

    #[test]
    fn clip_and_kl_examples() {
        assert_eq!(clipped_weight(1.0, 0.2).unwrap(), 1.0);
        assert!((clipped_weight(1.5, 0.2).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(clipped_weight(0.5, 0.2).unwrap(), 0.5);
        assert!(clipped_weight(0.0, 0.2).is_err());
        assert_eq!(kl_penalty(1.0).unwrap(), 0.0);
        assert!((kl_penalty(2.0).unwrap() - 0.30685).abs() < 1e-4);
        assert!((kl_penalty(0.5).unwrap() - 0.19315).abs() < 1e-4);
        assert!(kl_penalty(-1.0).is_err());
    }

    fn output(r: f64, p: f64, old: f64, reference: f64) -> GroupOutput {
        GroupOutput {
            rewards: rewards(r, r, r),
            policy_prob: p,
            old_policy_prob: old,
            ref_policy_prob: reference,
        }
    }

    #[test]
    fn objective_examples() {
        let cfg = GrpoConfig { group_size: 2, kl_beta: 0.1, ..GrpoConfig::default() };
        let g = GroupSample { outputs: vec![output(0.0, 0.5, 0.5, 0.5), output(1.0, 0.5, 0.5, 0.5)] };
        let res = grpo_objective_terms(&g, &cfg, &RewardWeights::COT_GRPO).unwrap();
        let terms: Vec<f64> = res.outputs.iter().map(|o| o.term).collect();
        assert!((terms[0] + 1.0).abs() < 1e-12 && (terms[1] - 1.0).abs() < 1e-12);
        assert!(res.objective.abs() < 1e-12);

        let cfg0 = GrpoConfig { group_size: 2, kl_beta: 0.0, ..cfg };
        let g = GroupSample { outputs: vec![output(0.2, 0.5, 0.5, 0.3), output(0.9, 0.4, 0.4, 0.6)] };
        let zero_beta = grpo_objective_terms(&g, &cfg0, &RewardWeights::COT_GRPO).unwrap().objective;
        assert!(zero_beta.abs() < 1e-12);
        let with_beta = grpo_objective_terms(&g, &cfg, &RewardWeights::COT_GRPO).unwrap().objective;
        assert!(with_beta < zero_beta);

        assert!(matches!(
            grpo_objective_terms(&g, &GrpoConfig::default(), &RewardWeights::COT_GRPO),
            Err(GrpoError::GroupSize { expected: 8, actual: 2 })
        ));
    }

    #[test]
    fn group_json_round_trip() {
        let g = GroupSample { outputs: vec![output(0.2, 0.5, 0.5, 0.3), output(0.9, 0.4, 0.4, 0.6)] };
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(parse_group(&text).unwrap(), g);
    }

    proptest! {
        #[test]
        fn advantage_is_standardized(rs in prop::collection::vec(0.0f64..1.0, 2..16)) {
            let a = normalized_advantage(&rs, 1e-8).unwrap();
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            if a.iter().any(|&x| x != 0.0) {
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn kl_is_non_negative(x in 1e-6f64..1e3) {
            let k = kl_penalty(x).unwrap();
            prop_assert!(k >= 0.0);
            if x != 1.0 { prop_assert!(k > 0.0); }
        }

        #[test]
        fn clipped_weight_bounded_and_monotone(a in 1e-6f64..10.0, b in 1e-6f64..10.0, eps in 0.01f64..0.99) {
            prop_assert!(clipped_weight(a, eps).unwrap() <= 1.0 + eps + 1e-15);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if hi <= 1.0 + eps {
                prop_assert!(clipped_weight(lo, eps).unwrap() <= clipped_weight(hi, eps).unwrap());
            }
        }

        #[test]
        fn format_reward_ignores_outer_whitespace(think in "[a-z ]{0,12}", answer in "[a-z ]{0,12}",
                                                 pre in "[ \t\n]{0,4}", mid in "[ \t\n]{0,4}", post in "[ \t\n]{0,4}") {
            let core = format!("<think>{think}</think>{mid}<answer>{answer}</answer>");
            let padded = format!("{pre}{core}{post}");
            prop_assert_eq!(format_reward(&core), 1.0);
            prop_assert_eq!(format_reward(&padded), format_reward(&core));
        }
    }
}
