#![no_main]

use libfuzzer_sys::fuzz_target;
use smellscape::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::parse(text, false) {
        let _ = cfg.validate_params();
    }
});
