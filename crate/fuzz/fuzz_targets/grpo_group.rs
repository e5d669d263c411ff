#![no_main]
use causal_probe_core::grpo::{grpo_objective_terms, parse_group, GrpoConfig, RewardWeights};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(group) = parse_group(text) else {
        return;
    };
    let weights = RewardWeights::preset("cot_grpo").expect("known preset");
    if let Ok(obj) = grpo_objective_terms(&group, &GrpoConfig::default(), &weights) {
        assert!(obj.objective.is_finite());
    }
});
