#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::ingest::BandTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = BandTable::from_json(text);
});
