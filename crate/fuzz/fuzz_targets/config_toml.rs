//! Run configuration TOML parser: must never panic, and accepted configs
//! must pass validation (from_toml_str validates internally).

#![no_main]

use libfuzzer_sys::fuzz_target;
use scone::trainer::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_toml_str(text) {
        config.validate().expect("accepted config must validate");
    }
});
