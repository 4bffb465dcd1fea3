#![no_main]

use libfuzzer_sys::fuzz_target;
use qisa_lab::attention::Variant;
use qisa_lab::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(name) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::preset(name) {
            cfg.check().unwrap();
        }
        if let Ok(v) = name.parse::<Variant>() {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
});
