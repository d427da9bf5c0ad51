#![no_main]

use dtmc_harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        // The canonical form of an accepted config must be accepted and stable.
        let canon = cfg.to_text();
        let again = ExperimentConfig::parse(&canon).expect("canonical text reparses");
        assert_eq!(again.to_text(), canon);
    }
});
