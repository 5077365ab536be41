#![no_main]

use libfuzzer_sys::fuzz_target;

use bbtp::io::parse_measurements;
use bbtp::rational::parse_decimal;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_measurements(text) {
            for row in rows {
                let _ = parse_decimal(&row.measured);
            }
        }
    }
});
