//! Experiment configuration files and named presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::data::{SplitDataset, Vocab, TEST_FRACTION};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{EvalProtocol, TrainConfig};

/// Everything one run needs besides the corpus text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Leading fraction of the encoded corpus to use, before the split.
    #[serde(default = "full_corpus")]
    pub corpus_fraction: f64,
    #[serde(default)]
    pub eval: EvalProtocol,
}

fn full_corpus() -> f64 {
    1.0
}

/// The three paper shapes: `(embedding, heads)`.
pub const SHAPES: [(usize, usize); 3] = [(4, 1), (16, 1), (16, 4)];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Validates everything that does not depend on the corpus.
    pub fn check(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.corpus_fraction > 0.0 && self.corpus_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "corpus_fraction {} not in (0, 1]",
                self.corpus_fraction
            )));
        }
        let mut probe = self.model.clone();
        probe.vocab_size = probe.vocab_size.max(1);
        probe.validate()?;
        Ok(())
    }

    /// Desk-scale runs: one epoch, batch 256 on the first tenth of the corpus.
    /// The `-full` suffix selects two epochs at batch 1024 on all of it.
    pub fn preset(name: &str) -> Result<Self> {
        let unknown = || {
            Error::Config(format!(
                "unknown preset {name:?}; expected emb4-h1-<variant>, emb16-h1-<variant> or \
                 emb16-h4-<variant>, optionally with -full"
            ))
        };
        let (base, full) = match name.strip_suffix("-full") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let mut parts = base.splitn(3, '-');
        let emb = parts.next().and_then(|s| s.strip_prefix("emb")).ok_or_else(unknown)?;
        let heads = parts.next().and_then(|s| s.strip_prefix('h')).ok_or_else(unknown)?;
        let variant: Variant = parts.next().ok_or_else(unknown)?.parse()?;
        let m: usize = emb.parse().map_err(|_| unknown())?;
        let h: usize = heads.parse().map_err(|_| unknown())?;
        if !SHAPES.contains(&(m, h)) {
            return Err(unknown());
        }
        let mut train = if full {
            TrainConfig::new(2, 1024)
        } else {
            TrainConfig::new(1, 256)
        };
        train.eval_every = if full { 200 } else { 50 };
        Ok(Self {
            model: ModelConfig::paper(variant, m, h, 0),
            train,
            corpus: None,
            corpus_fraction: if full { 1.0 } else { 0.1 },
            eval: EvalProtocol::default(),
        })
    }

    pub fn preset_names() -> Vec<String> {
        let mut out = Vec::new();
        for (m, h) in SHAPES {
            for v in Variant::ALL {
                out.push(format!("emb{m}-h{h}-{v}"));
            }
        }
        out
    }

    /// Sets the seed of both the initialisation and the batch stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }
}

/// Encoded corpus ready for training.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub split: SplitDataset,
}

/// Builds the vocabulary from the whole text, keeps the leading `fraction`
/// of the encoded stream and holds out its last 20%.
pub fn prepare_data(text: &str, fraction: f64) -> Result<PreparedData> {
    let vocab = Vocab::build(text)?;
    let ids = vocab.encode(text)?;
    let keep = ((ids.len() as f64) * fraction).round() as usize;
    let split = SplitDataset::new(&ids[..keep.min(ids.len())], TEST_FRACTION)?;
    Ok(PreparedData { vocab, split })
}
