#![no_main]

use libfuzzer_sys::fuzz_target;
use qisa_lab::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json(text) {
            let again = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&again).unwrap(), cfg);
        }
    }
});
