#![no_main]

use libfuzzer_sys::fuzz_target;
use qisa_lab::data::{decode_corpus, Vocab};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = decode_corpus(data) {
        if let Ok(vocab) = Vocab::build(&text) {
            let ids = vocab.encode(&text).unwrap();
            assert_eq!(vocab.decode(&ids).unwrap(), text);
        }
    }
});
