#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::geo::{parse_assignment, write_assignment};

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = parse_assignment(data) {
        let mut out = Vec::new();
        write_assignment(&mut out, &a).expect("write to memory");
        assert_eq!(parse_assignment(out.as_slice()).expect("written assignment parses"), a);
    }
});
