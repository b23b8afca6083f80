#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::ingest::{parse_items, ItemFilter};

fuzz_target!(|data: &[u8]| {
    let filter = ItemFilter { drop_retweets_and_replies: true, ..Default::default() };
    if let Ok(batch) = parse_items(data, &filter) {
        assert!(batch.report.is_consistent());
    }
});
