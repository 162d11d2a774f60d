#![no_main]

use cavsim::qp::{solve, QpProblem};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = QpProblem::from_json_str(text) else { return };
    let sol = solve(&p).expect("validated problem solves");
    if let Some(u) = sol.point() {
        assert!(u.iter().all(|x| x.is_finite()));
        assert!(p.bounds.iter().zip(u).all(|([lo, hi], x)| *lo <= x && x <= *hi));
    }
});
