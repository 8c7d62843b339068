#![no_main]

use clap::Parser;
use divcontagion::cli::RunSpec;
use libfuzzer_sys::fuzz_target;

// Argument parsing only; nothing is run.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let args = std::iter::once("divcontagion").chain(text.split('\0'));
    let _ = RunSpec::try_parse_from(args);
});
