#![no_main]

use dtmc::noise::parse_law;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(spec) = std::str::from_utf8(rest) else { return };
    if let Ok(law) = parse_law(spec, 1 + n as usize % 4) {
        assert_eq!(law.dim(), 1 + n as usize % 4);
    }
});
