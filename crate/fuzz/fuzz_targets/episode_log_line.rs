#![no_main]

use cavsim::harness::validate_log_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = validate_log_line(line);
    }
});
