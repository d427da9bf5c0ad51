#![no_main]

use dtmc::semigroup::TestFunction;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = TestFunction::parse(text) {
        let d = match &f {
            TestFunction::Gauss { center, .. } | TestFunction::Bump { center, .. } => center.len(),
            TestFunction::Coordinate(k) | TestFunction::Square(k) | TestFunction::Sine { k, .. } => k + 1,
            TestFunction::Constant(_) => 1,
        };
        if d <= 64 {
            let (v, g, h) = f.jet(&vec![0.1; d]);
            assert!(v.is_finite());
            assert_eq!(g.len(), d);
            assert_eq!(h.len(), d * d);
        }
    }
});
