#![no_main]

use divcontagion::expfun::ExpPolyPiecewise;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = ExpPolyPiecewise::from_record(text) {
        let again = ExpPolyPiecewise::from_record(&f.to_record()).expect("own output parses");
        assert_eq!(again, f);
        let _ = f.eval(0.0);
        let _ = f.deriv(2).eval(1.0);
    }
});
