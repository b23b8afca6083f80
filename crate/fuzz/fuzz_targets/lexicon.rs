#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::lexicon::parse_lexicon;

fuzz_target!(|data: &[u8]| {
    let _ = parse_lexicon(data, &Default::default(), "fuzz");
});
