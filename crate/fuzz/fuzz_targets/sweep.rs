#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::spatialstats::parse_sweep;

fuzz_target!(|data: &[u8]| {
    let _ = parse_sweep(data);
});
