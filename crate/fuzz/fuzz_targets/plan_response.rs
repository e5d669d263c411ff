#![no_main]
use causal_probe_core::agents::{parse_response_line, Response};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(Response::Plan(resp)) = parse_response_line(line) {
        let again = parse_response_line(&resp.to_json_line()).expect("re-encoded response parses");
        assert!(matches!(again, Response::Plan(_)));
    }
});
