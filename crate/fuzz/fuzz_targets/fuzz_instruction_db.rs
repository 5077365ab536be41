#![no_main]

use libfuzzer_sys::fuzz_target;

use bbtp::io::parse_instruction_db;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_instruction_db(text);
    }
});
