#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::ingest::parse_item_line;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_item_line(text, None);
});
