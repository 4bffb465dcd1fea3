#![no_main]

use libfuzzer_sys::fuzz_target;
use qisa_lab::quantum::PauliString;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(p) = text.parse::<PauliString>() {
            assert_eq!(p.to_string().parse::<PauliString>().unwrap(), p);
        }
    }
});
