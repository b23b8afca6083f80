#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::lexicon::{parse_matches, write_matches};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_matches(data) {
        let mut out = Vec::new();
        write_matches(&mut out, &m).expect("write to memory");
        parse_matches(out.as_slice()).expect("written matches parse");
    }
});
