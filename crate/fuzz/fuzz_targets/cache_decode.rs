#![no_main]

use libfuzzer_sys::fuzz_target;
use qisa_lab::quantum::ObservableCache;

fuzz_target!(|data: &[u8]| {
    if let Ok(cache) = ObservableCache::from_bytes(data) {
        let bytes = cache.to_bytes().unwrap();
        let again = ObservableCache::from_bytes(&bytes).unwrap();
        assert_eq!(again.len(), cache.len());
    }
});
