//! Every parser and decoder rejects malformed input with an error, never a
//! panic. Seeds are shared with the fuzz targets.

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use qisa_lab::data::{decode_corpus, Vocab};
use qisa_lab::experiment::ExperimentConfig;
use qisa_lab::model::Checkpoint;
use qisa_lab::quantum::{ObservableCache, PauliString};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fuzz/corpus")).join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn split_checkpoint(data: &[u8]) -> Option<(&[u8], &[u8])> {
    let n = u16::from_le_bytes([*data.first()?, *data.get(1)?]) as usize;
    let rest = &data[2..];
    Some(rest.split_at(n.min(rest.len())))
}

fn decode_all(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ExperimentConfig::from_json(text);
        let _ = ExperimentConfig::preset(text);
        let _ = text.parse::<PauliString>();
    }
    let _ = ObservableCache::from_bytes(data);
    if let Some((m, b)) = split_checkpoint(data) {
        let _ = Checkpoint::from_bytes(m, b);
    }
    if let Ok(text) = decode_corpus(data) {
        let _ = Vocab::build(&text);
    }
}

#[test]
fn valid_seeds_decode() {
    for (path, bytes) in seeds("cache_decode") {
        let cache = ObservableCache::from_bytes(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(cache.to_bytes().unwrap(), bytes);
    }
    for (path, bytes) in seeds("checkpoint_decode") {
        let (m, b) = split_checkpoint(&bytes).unwrap();
        Checkpoint::from_bytes(m, b).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let (_, preset) = &seeds("config_json")[1];
    ExperimentConfig::from_json(std::str::from_utf8(preset).unwrap()).unwrap();
}

#[test]
fn every_seed_is_handled_by_every_decoder() {
    for target in [
        "cache_decode",
        "checkpoint_decode",
        "config_json",
        "corpus_decode",
        "pauli_parse",
        "preset_name",
    ] {
        for (_, bytes) in seeds(target) {
            decode_all(&bytes);
        }
    }
}

#[test]
fn truncated_binaries_are_errors() {
    for (_, bytes) in seeds("cache_decode") {
        for cut in [0, 7, 8, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(ObservableCache::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
    for (_, bytes) in seeds("checkpoint_decode") {
        let (m, b) = split_checkpoint(&bytes).unwrap();
        assert!(Checkpoint::from_bytes(m, &b[..b.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(&m[..m.len() / 2], b).is_err());
    }
}

proptest! {
    #[test]
    fn random_bytes_never_panic(data in proptest::collection::vec(any::<u8>(), 0..512)) {
        decode_all(&data);
    }

    #[test]
    fn mutated_cache_never_panics(pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        for (_, mut bytes) in seeds("cache_decode") {
            let i = pos.index(bytes.len());
            bytes[i] = byte;
            let _ = ObservableCache::from_bytes(&bytes);
        }
    }

    #[test]
    fn mutated_checkpoint_never_panics(pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        for (_, mut bytes) in seeds("checkpoint_decode") {
            let i = pos.index(bytes.len());
            bytes[i] = byte;
            decode_all(&bytes);
        }
    }
}

#[test]
fn future_cache_format_is_a_version_error() {
    let (_, bytes) = &seeds("cache_decode")[0];
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[12..12 + hlen]).unwrap();
    let patched = header.replacen("\"format_version\":1", "\"format_version\":2", 1);
    assert_ne!(patched, header);
    let mut out = bytes[..8].to_vec();
    out.extend((patched.len() as u32).to_le_bytes());
    out.extend(patched.as_bytes());
    out.extend(&bytes[12 + hlen..]);
    assert!(matches!(
        ObservableCache::from_bytes(&out),
        Err(qisa_lab::Error::Version(_))
    ));
}
