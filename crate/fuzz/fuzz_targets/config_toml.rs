#![no_main]

use cavsim::harness::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = Config::from_toml_str(text) else { return };
    let again = cfg.to_toml_string().expect("validated config serializes");
    assert_eq!(Config::from_toml_str(&again).expect("reparses"), cfg);
});
