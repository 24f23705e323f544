#![no_main]

use libfuzzer_sys::fuzz_target;
use nsatp::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let _ = cfg.hash();
        let _ = cfg.model_spec();
        let _ = cfg.window();
    }
});
