#![no_main]
use causal_probe_core::agents::{parse_request_line, Request};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(Request::Plan(req)) = parse_request_line(line) {
        let again = parse_request_line(&req.to_json_line()).expect("re-encoded request parses");
        assert!(matches!(again, Request::Plan(_)));
    }
});
