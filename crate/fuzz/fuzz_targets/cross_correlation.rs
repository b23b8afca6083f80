#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::spatialstats::parse_cross_correlation;

fuzz_target!(|data: &[u8]| {
    let _ = parse_cross_correlation(data);
});
