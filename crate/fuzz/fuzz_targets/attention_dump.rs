#![no_main]
use causal_probe_core::attention::{build_report, AttentionDump, DEFAULT_TARGETS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(dump) = AttentionDump::from_bytes(data) else {
        return;
    };
    let again = AttentionDump::from_bytes(&dump.to_bytes()).expect("re-encoded dump parses");
    assert_eq!(again, dump);
    let _ = build_report(&dump, &DEFAULT_TARGETS);
});
