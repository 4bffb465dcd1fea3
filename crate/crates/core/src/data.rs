//! Corpus loading, character vocabulary, train/test split and batching.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fraction of the encoded corpus held out at its end.
pub const TEST_FRACTION: f64 = 0.2;

pub const CORPUS_URL: &str =
    "https://raw.githubusercontent.com/karpathy/char-rnn/master/data/tinyshakespeare/input.txt";

/// Reads a UTF-8 text corpus.
pub fn load_corpus(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| {
        let hint = if e.kind() == std::io::ErrorKind::NotFound {
            format!(
                " (download a plain-text Shakespeare corpus, e.g. {CORPUS_URL}, \
                 or run `qisa-lab fetch-corpus-info`)"
            )
        } else {
            String::new()
        };
        Error::Io {
            path: path.to_path_buf(),
            source: e,
            hint,
        }
    })?;
    let text = decode_corpus(&bytes)?;
    log::info!("loaded {} bytes from {}", bytes.len(), path.display());
    Ok(text)
}

/// Validates raw corpus bytes.
pub fn decode_corpus(bytes: &[u8]) -> Result<String> {
    if bytes.is_empty() {
        return Err(Error::CorpusTooSmall("corpus is empty".into()));
    }
    String::from_utf8(bytes.to_vec()).map_err(|e| Error::Encoding(format!("corpus is not UTF-8: {}", e.utf8_error())))
}

/// Character vocabulary ordered by codepoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn build(text: &str) -> Result<Self> {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Self::from_chars(chars)
    }

    /// Rebuilds a vocabulary from its ordered character list.
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::CorpusTooSmall("vocabulary is empty".into()));
        }
        if chars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(
                "vocabulary",
                "characters must be unique and sorted by codepoint",
            ));
        }
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Self { chars, index })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// The characters as one string, the serialised form.
    pub fn as_string(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn id(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(Error::Vocab(c))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.id(c)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.chars
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Index(format!("token id {i} outside [0, {})", self.chars.len())))
            })
            .collect()
    }
}

/// Contiguous train/test split of an encoded corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitDataset {
    /// Holds out the final `test_fraction` of `ids`.
    pub fn new(ids: &[usize], test_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::Config(format!("test fraction {test_fraction} not in (0, 1)")));
        }
        let test_len = (ids.len() as f64 * test_fraction).round() as usize;
        let cut = ids.len() - test_len;
        if cut == 0 || test_len == 0 {
            return Err(Error::CorpusTooSmall(format!(
                "{} tokens cannot be split into train and test",
                ids.len()
            )));
        }
        Ok(Self {
            train: ids[..cut].to_vec(),
            test: ids[cut..].to_vec(),
        })
    }
}

/// Inputs and next-token targets, both `[batch × l]` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl Batch {
    /// Rows `[start, end)` as a smaller batch.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        let l = self.len;
        Batch {
            inputs: self.inputs[start * l..end * l].to_vec(),
            targets: self.targets[start * l..end * l].to_vec(),
            batch: end - start,
            len: l,
        }
    }
}

/// The window starting at `offset`: `ids[offset..offset+l]` and its shift.
pub fn window(ids: &[usize], offset: usize, l: usize) -> Result<(&[usize], &[usize])> {
    if offset + l + 1 > ids.len() {
        return Err(Error::Index(format!(
            "window at {offset} of length {l} overruns {} tokens",
            ids.len()
        )));
    }
    Ok((&ids[offset..offset + l], &ids[offset + 1..offset + l + 1]))
}

/// Endless stream of random-offset batches drawn with a seeded generator.
pub struct BatchIter<'a> {
    ids: &'a [usize],
    l: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

/// Batches of `batch` windows of length `l`, offsets uniform over all
/// `len − l` valid starts.
pub fn batch_iter(ids: &[usize], l: usize, batch: usize, seed: u64) -> Result<BatchIter<'_>> {
    if l == 0 || batch == 0 {
        return Err(Error::Config(format!(
            "context {l} and batch size {batch} must be positive"
        )));
    }
    if ids.len() <= l {
        return Err(Error::CorpusTooSmall(format!(
            "{} tokens cannot fill a window of {l} plus a target",
            ids.len()
        )));
    }
    Ok(BatchIter {
        ids,
        l,
        batch,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl BatchIter<'_> {
    /// `⌈(len − l) / batch⌉`.
    pub fn steps_per_epoch(&self) -> usize {
        (self.ids.len() - self.l).div_ceil(self.batch)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let l = self.l;
        let starts = self.ids.len() - l;
        let mut inputs = Vec::with_capacity(self.batch * l);
        let mut targets = Vec::with_capacity(self.batch * l);
        for _ in 0..self.batch {
            let off = self.rng.random_range(0..starts);
            inputs.extend_from_slice(&self.ids[off..off + l]);
            targets.extend_from_slice(&self.ids[off + 1..off + l + 1]);
        }
        Some(Batch {
            inputs,
            targets,
            batch: self.batch,
            len: l,
        })
    }
}
