#![no_main]

use divcontagion::model::DefaultState;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(z) = DefaultState::parse_bits(text) {
        assert_eq!(DefaultState::parse_bits(&z.bitstring()).unwrap(), z);
        assert_eq!(z.surviving().len() + z.defaulted_count(), z.n());
    }
});
