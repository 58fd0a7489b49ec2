#![no_main]

use libfuzzer_sys::fuzz_target;
use privest::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = Config::from_toml_str(text) {
        // a validated configuration must build its model without panicking
        let _ = cfg.model();
        let _ = cfg.state_grid();
    }
});
