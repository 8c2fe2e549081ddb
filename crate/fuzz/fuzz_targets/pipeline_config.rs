#![no_main]

use std::path::Path;

use assetgraph::config::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_toml_str(text, Path::new("/nonexistent")) {
        assert!(cfg.validate().is_ok());
    }
});
