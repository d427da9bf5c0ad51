#![no_main]

use dtmc::vectorfield::Profile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = Profile::parse(text) {
        let _ = p.eval(0.5f64, 0.25f64);
    }
});
