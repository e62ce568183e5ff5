#![no_main]

use blocktri_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let _ = cfg.validate_solve();
        let _ = cfg.validate_probe();
        let _ = cfg.validate_acoustic();
        let _ = cfg.validate_bench();
    }
});
