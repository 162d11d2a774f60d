#![no_main]

use cavsim::harness::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ck) = Checkpoint::from_text(text) else { return };
    let again = ck.to_text().expect("loaded checkpoint serializes");
    assert_eq!(Checkpoint::from_text(&again).expect("reloads"), ck);
});
