#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::ingest::parse_air_quality;

fuzz_target!(|data: &[u8]| {
    let _ = parse_air_quality(data);
});
