#![no_main]

use libfuzzer_sys::fuzz_target;
use qisa_lab::model::Checkpoint;

// Input: u16 LE manifest length, manifest JSON, then the parameter blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    let (manifest, blob) = rest.split_at(n.min(rest.len()));
    if let Ok(ckpt) = Checkpoint::from_bytes(manifest, blob) {
        let (m, b) = ckpt.to_bytes().unwrap();
        let again = Checkpoint::from_bytes(&m, &b).unwrap();
        assert_eq!(again.model.param_hash(), ckpt.model.param_hash());
    }
});
