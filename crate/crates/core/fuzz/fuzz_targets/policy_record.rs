#![no_main]

use divcontagion::recursion::parse_policy_record;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_policy_record(text);
    }
});
