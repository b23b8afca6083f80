#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::community::CategoryHierarchy;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = CategoryHierarchy::from_json(text) {
        let again = CategoryHierarchy::from_json(&h.to_json()).expect("written hierarchy parses");
        assert_eq!(h, again);
    }
});
