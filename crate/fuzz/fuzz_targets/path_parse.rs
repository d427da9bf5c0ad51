#![no_main]

use dtmc::record::{parse_path, path_to_string};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = parse_path(text) {
        let out = path_to_string(&p).expect("accepted path serializes");
        assert_eq!(parse_path(&out).expect("written path reparses"), p);
    }
});
