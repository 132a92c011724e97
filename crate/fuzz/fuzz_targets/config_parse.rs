#![no_main]

use libfuzzer_sys::fuzz_target;
use planmerge::config::presets;

// The overlay parser must reject or accept without panicking, and whatever
// it accepts must pass through validation without crashing either.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut config = presets::exp1();
    if config.apply_config_str(text).is_ok() {
        let _ = config.validate();
    }
});
