#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::profile::{parse_smell_vectors, write_smell_vectors};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = parse_smell_vectors(data) {
        let mut out = Vec::new();
        write_smell_vectors(&mut out, &v).expect("write to memory");
        parse_smell_vectors(out.as_slice()).expect("written vectors parse");
    }
});
