#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::profile::parse_base_notes_csv;

fuzz_target!(|data: &[u8]| {
    let _ = parse_base_notes_csv(data);
});
