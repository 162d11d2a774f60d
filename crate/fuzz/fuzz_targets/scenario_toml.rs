#![no_main]

use cavsim::harness::{Mode, ScenarioSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = ScenarioSpec::from_toml_str(text) else { return };
    // anything that validates must serialize and instantiate without panicking
    let again = spec.to_toml_string().expect("validated scenario serializes");
    assert_eq!(ScenarioSpec::from_toml_str(&again).expect("reparses"), spec);
    let _ = spec.instantiate(Mode::Test, 0);
});
