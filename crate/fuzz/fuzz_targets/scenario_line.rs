#![no_main]
use causal_probe_core::scenario::{parse_scenario_line, scan_scenarios, write_scenarios};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for (_, rec) in scan_scenarios(text) {
        let Ok(rec) = rec else { continue };
        // anything accepted must survive its own serialization
        let line = write_scenarios(std::slice::from_ref(&rec));
        let again = parse_scenario_line(line.trim_end()).expect("canonical line parses");
        assert_eq!(again, rec);
    }
});
