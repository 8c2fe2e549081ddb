#![no_main]

use assetgraph::synth::SynthConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SynthConfig::from_toml_str(text) {
        assert!(cfg.validate().is_ok());
        let _ = cfg.external_loading_at(cfg.days.saturating_sub(1));
    }
});
