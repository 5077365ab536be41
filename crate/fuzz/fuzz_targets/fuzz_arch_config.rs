#![no_main]

use libfuzzer_sys::fuzz_target;

use bbtp::io::parse_arch_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Must reject or accept without panicking; accepted configurations
        // satisfy the width invariants.
        if let Ok(cfg) = parse_arch_config(text) {
            assert!(cfg.validate().is_ok());
        }
    }
});
