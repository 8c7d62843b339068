#![no_main]

use divcontagion::model::ModelParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = ModelParams::from_json_str(text) {
        if p.validate().is_empty() {
            assert!(p.corr_cholesky().is_ok());
        }
    }
});
