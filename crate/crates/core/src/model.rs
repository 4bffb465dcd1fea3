//! GPT-style character language model with pluggable attention.
//!
//! Pre-LN blocks: `x + Attn(LN(x))`, then `x + MLP(LN(x))` with a `4m`-wide
//! GELU MLP; a final LN and an untied `[m × V]` head produce logits.
//! Token and learned position embeddings are summed at the input.
//!
//! # Canonical parameter walk
//!
//! Checkpoints, hashes and optimiser state all index parameters in this order:
//! `tok_emb`, `pos_emb`, then per block `ln1.gain`, `ln1.bias`, the attention
//! parameters (per head query, key, value; then output), `ln2.gain`,
//! `ln2.bias`, `mlp.fc.weight`, `mlp.fc.bias`, `mlp.proj.weight`,
//! `mlp.proj.bias`; finally `ln_f.gain`, `ln_f.bias`, `lm_head`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{
    add_to_cache, attention_forward, param_shapes, AttentionParams, AttentionSpec, CacheView, QkKernel, Variant,
    INIT_STD,
};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::quantum::{CacheBuilder, ObservableCache, ObservableMode};
use crate::tensor::{Graph, Tensor, Var};

/// Width multiplier of the MLP hidden layer.
pub const MLP_RATIO: usize = 4;

/// Checkpoint layout version written by this build.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Filled in from the corpus when zero.
    #[serde(default)]
    pub vocab_size: usize,
    pub embedding_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub context: usize,
    pub variant: Variant,
    #[serde(default = "default_ansatz_layers")]
    pub ansatz_layers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub v2_kernel: QkKernel,
    #[serde(default = "default_qisa_a_observables")]
    pub qisa_a_observables: ObservableMode,
}

fn default_ansatz_layers() -> usize {
    1
}

fn default_qisa_a_observables() -> ObservableMode {
    ObservableMode::Unitary
}

impl ModelConfig {
    /// Six layers and a 16-token context.
    pub fn paper(variant: Variant, embedding_size: usize, heads: usize, vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embedding_size,
            heads,
            layers: 6,
            context: 16,
            variant,
            ansatz_layers: 1,
            seed: 0,
            dropout: 0.0,
            v2_kernel: QkKernel::Dot,
            qisa_a_observables: ObservableMode::Unitary,
        }
    }

    pub fn attention_spec(&self) -> Result<AttentionSpec> {
        AttentionSpec::with_options(
            self.variant,
            self.embedding_size,
            self.heads,
            self.context,
            self.ansatz_layers,
            self.v2_kernel,
            self.qisa_a_observables,
        )
    }

    pub fn validate(&self) -> Result<AttentionSpec> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        self.attention_spec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub attn: AttentionParams<T>,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub fc_weight: T,
    pub fc_bias: T,
    pub proj_weight: T,
    pub proj_bias: T,
}

/// All model parameters, generic over storage. Iteration follows the
/// canonical walk.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub tok_emb: T,
    pub pos_emb: T,
    pub blocks: Vec<BlockParams<T>>,
    pub lnf_gain: T,
    pub lnf_bias: T,
    pub lm_head: T,
}

impl<T> ModelParams<T> {
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        [&self.tok_emb, &self.pos_emb]
            .into_iter()
            .chain(self.blocks.iter().flat_map(|b| {
                [&b.ln1_gain, &b.ln1_bias].into_iter().chain(b.attn.iter()).chain([
                    &b.ln2_gain,
                    &b.ln2_bias,
                    &b.fc_weight,
                    &b.fc_bias,
                    &b.proj_weight,
                    &b.proj_bias,
                ])
            }))
            .chain([&self.lnf_gain, &self.lnf_bias, &self.lm_head])
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        [&mut self.tok_emb, &mut self.pos_emb]
            .into_iter()
            .chain(self.blocks.iter_mut().flat_map(|b| {
                [&mut b.ln1_gain, &mut b.ln1_bias]
                    .into_iter()
                    .chain(b.attn.iter_mut())
                    .chain([
                        &mut b.ln2_gain,
                        &mut b.ln2_bias,
                        &mut b.fc_weight,
                        &mut b.fc_bias,
                        &mut b.proj_weight,
                        &mut b.proj_bias,
                    ])
            }))
            .chain([&mut self.lnf_gain, &mut self.lnf_bias, &mut self.lm_head])
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(format!("block{i}.ln1.gain"));
            out.push(format!("block{i}.ln1.bias"));
            out.extend(b.attn.names().into_iter().map(|n| format!("block{i}.attn.{n}")));
            for n in [
                "ln2.gain",
                "ln2.bias",
                "mlp.fc.weight",
                "mlp.fc.bias",
                "mlp.proj.weight",
                "mlp.proj.bias",
            ] {
                out.push(format!("block{i}.{n}"));
            }
        }
        out.extend(["ln_f.gain", "ln_f.bias", "lm_head"].map(String::from));
        out
    }

    /// Maps every entry in canonical order.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> Result<U, E>) -> Result<ModelParams<U>, E> {
        let tok_emb = f(&self.tok_emb)?;
        let pos_emb = f(&self.pos_emb)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let ln1_gain = f(&b.ln1_gain)?;
            let ln1_bias = f(&b.ln1_bias)?;
            let attn = b.attn.try_map(&mut f)?;
            blocks.push(BlockParams {
                ln1_gain,
                ln1_bias,
                attn,
                ln2_gain: f(&b.ln2_gain)?,
                ln2_bias: f(&b.ln2_bias)?,
                fc_weight: f(&b.fc_weight)?,
                fc_bias: f(&b.fc_bias)?,
                proj_weight: f(&b.proj_weight)?,
                proj_bias: f(&b.proj_bias)?,
            });
        }
        Ok(ModelParams {
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain: f(&self.lnf_gain)?,
            lnf_bias: f(&self.lnf_bias)?,
            lm_head: f(&self.lm_head)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Angle,
    Zeros,
    Ones,
}

fn shapes(config: &ModelConfig, spec: &AttentionSpec) -> ModelParams<(Vec<usize>, Init)> {
    let (v, m, l) = (config.vocab_size, config.embedding_size, config.context);
    let hidden = MLP_RATIO * m;
    let attn = param_shapes(spec);
    let block = BlockParams {
        ln1_gain: (vec![m], Init::Ones),
        ln1_bias: (vec![m], Init::Zeros),
        attn: attn
            .try_map(|s| Ok::<_, ()>((s.clone(), if s.len() == 3 { Init::Angle } else { Init::Normal })))
            .expect("infallible"),
        ln2_gain: (vec![m], Init::Ones),
        ln2_bias: (vec![m], Init::Zeros),
        fc_weight: (vec![m, hidden], Init::Normal),
        fc_bias: (vec![hidden], Init::Zeros),
        proj_weight: (vec![hidden, m], Init::Normal),
        proj_bias: (vec![m], Init::Zeros),
    };
    ModelParams {
        tok_emb: (vec![v, m], Init::Normal),
        pos_emb: (vec![l, m], Init::Normal),
        blocks: vec![block; config.layers],
        lnf_gain: (vec![m], Init::Ones),
        lnf_bias: (vec![m], Init::Zeros),
        lm_head: (vec![m, v], Init::Normal),
    }
}

/// Gradients of one backward pass, indexed by canonical position. `None`
/// marks a parameter the loss does not depend on.
pub struct Gradients {
    pub loss: f64,
    pub grads: Vec<Option<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct LanguageModel {
    config: ModelConfig,
    spec: AttentionSpec,
    params: ModelParams<Tensor>,
}

impl LanguageModel {
    /// Freshly initialised model seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let spec = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let angle = Uniform::new(-PI, PI).expect("valid range");
        // One pass in canonical order keeps the RNG stream tied to the walk.
        let params = shapes(&config, &spec).try_map(|(shape, init)| {
            let numel = shape.iter().product();
            match init {
                Init::Normal => Tensor::new(shape.clone(), (0..numel).map(|_| normal.sample(&mut rng)).collect()),
                Init::Angle => Tensor::new(shape.clone(), (0..numel).map(|_| angle.sample(&mut rng)).collect()),
                Init::Zeros => Ok(Tensor::zeros(shape)),
                Init::Ones => Ok(Tensor::full(shape, 1.0)),
            }
        })?;
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after checking every shape.
    pub fn from_params(config: ModelConfig, params: ModelParams<Tensor>) -> Result<Self> {
        let spec = config.validate()?;
        let want = shapes(&config, &spec);
        let got: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
        let expected: Vec<&[usize]> = want.iter().map(|(s, _)| s.as_slice()).collect();
        if got != expected {
            return Err(Error::Shape(format!(
                "parameters do not match the configuration ({} tensors vs {} expected)",
                got.len(),
                expected.len()
            )));
        }
        let params = params.try_map(|t| -> Result<Tensor> {
            Ok(Tensor::new(t.shape().to_vec(), t.data().to_vec())?.with_requires_grad(true))
        })?;
        Ok(Self { config, spec, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn spec(&self) -> &AttentionSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams<Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<Tensor> {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.names()
    }

    pub fn total_param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Trainable scalars in the attention sub-layer of block `layer`.
    pub fn attention_param_count(&self, layer: usize) -> usize {
        self.params.blocks[layer].attn.iter().map(Tensor::numel).sum()
    }

    /// Hex SHA-256 of every parameter in canonical order, little-endian.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.params.iter() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Records every parameter as a trainable leaf tagged with its canonical index.
    pub fn bind(&self, g: &mut Graph) -> ModelParams<Var> {
        let mut idx = 0;
        self.params
            .try_map(|t| {
                let v = g.tagged_leaf(t, idx);
                idx += 1;
                Ok::<_, ()>(v)
            })
            .expect("infallible")
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> ModelParams<Var> {
        self.params
            .try_map(|t| Ok::<_, ()>(g.constant(t.clone())))
            .expect("infallible")
    }

    fn check_tokens(&self, tokens: &[usize], batch: usize, len: usize) -> Result<()> {
        if len > self.config.context {
            return Err(Error::ContextOverflow {
                len,
                max: self.config.context,
            });
        }
        if batch == 0 || len == 0 || tokens.len() != batch * len {
            return Err(Error::Shape(format!(
                "{} tokens for a batch of {batch} sequences of length {len}",
                tokens.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index(format!(
                "token id {t} outside [0, {})",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Logits `[batch·len, V]` for row-major `tokens[batch × len]`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &ModelParams<Var>,
        tokens: &[usize],
        batch: usize,
        len: usize,
        cache: Option<&ObservableCache>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_tokens(tokens, batch, len)?;
        let m = self.config.embedding_size;
        let rate = self.config.dropout;
        let positions: Vec<usize> = (0..tokens.len()).map(|i| i % len).collect();
        let tok = g.embedding(p.tok_emb, tokens)?;
        let pos = g.embedding(p.pos_emb, &positions)?;
        let x = g.add(tok, pos)?;
        let mut x = g.reshape(x, &[batch, len, m])?;
        x = drop(g, x, rate, dropout.as_deref_mut())?;
        for (i, b) in p.blocks.iter().enumerate() {
            let h = g.layer_norm(x, b.ln1_gain, b.ln1_bias)?;
            let view = cache.map(|cache| CacheView { cache, layer: i });
            let a = attention_forward(g, &self.spec, &b.attn, h, view)?;
            let a = drop(g, a, rate, dropout.as_deref_mut())?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, b.ln2_gain, b.ln2_bias)?;
            let f = g.matmul(h, b.fc_weight)?;
            let f = g.add_row(f, b.fc_bias)?;
            let f = g.gelu(f);
            let f = g.matmul(f, b.proj_weight)?;
            let f = g.add_row(f, b.proj_bias)?;
            let f = drop(g, f, rate, dropout.as_deref_mut())?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x, p.lnf_gain, p.lnf_bias)?;
        let logits = g.matmul(x, p.lm_head)?;
        g.reshape(logits, &[batch * len, self.config.vocab_size])
    }

    /// Inference logits `[batch·len, V]`.
    pub fn logits(&self, tokens: &[usize], batch: usize, len: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, tokens, batch, len, None, None)?;
        Ok(g.value(out).clone())
    }

    /// Mean next-token cross-entropy, no gradients.
    pub fn loss(&self, tokens: &[usize], targets: &[usize], batch: usize, len: usize) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, tokens, batch, len, None, None)?;
        let loss = g.cross_entropy(out, targets)?;
        g.value(loss).item()
    }

    /// Loss and parameter gradients of one (micro-)batch.
    pub fn gradients(
        &self,
        tokens: &[usize],
        targets: &[usize],
        batch: usize,
        len: usize,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Gradients> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let out = self.forward(&mut g, &p, tokens, batch, len, None, dropout)?;
        let loss = g.cross_entropy(out, targets)?;
        g.backward(loss)?;
        let mut grads = vec![None; self.params.iter().count()];
        for (tag, v) in g.tagged_leaves() {
            grads[tag] = g.grad(v).map(<[f64]>::to_vec);
        }
        Ok(Gradients {
            loss: g.value(loss).item()?,
            grads,
        })
    }

    /// Evolves every observable of every layer under the current parameters.
    pub fn build_cache(&self) -> Result<ObservableCache> {
        if !self.config.variant.is_quantum() {
            return Err(Error::NotApplicable(
                "classical attention has no observable cache".into(),
            ));
        }
        let mut builder = CacheBuilder::new(
            self.spec.n_qubits(),
            self.config.ansatz_layers,
            self.config.variant.name(),
            self.param_hash(),
        );
        for (i, b) in self.params.blocks.iter().enumerate() {
            add_to_cache(&self.spec, &b.attn, i, &mut builder)?;
        }
        Ok(builder.build())
    }

    /// Pairs the model with a cache after checking they match.
    pub fn with_cache<'a>(&'a self, cache: &'a ObservableCache) -> Result<CachedModel<'a>> {
        if cache.variant() != self.config.variant.name() {
            return Err(Error::CacheMiss(format!(
                "cache built for {}, model is {}",
                cache.variant(),
                self.config.variant
            )));
        }
        cache.check_fresh(&self.param_hash())?;
        Ok(CachedModel { model: self, cache })
    }
}

fn drop(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => g.dropout(x, rate, rng),
        _ => Ok(x),
    }
}

/// Inference through frozen, pre-evolved observables.
#[derive(Clone, Copy)]
pub struct CachedModel<'a> {
    pub model: &'a LanguageModel,
    pub cache: &'a ObservableCache,
}

impl CachedModel<'_> {
    pub fn logits(&self, tokens: &[usize], batch: usize, len: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.model.bind_frozen(&mut g);
        let out = self
            .model
            .forward(&mut g, &p, tokens, batch, len, Some(self.cache), None)?;
        Ok(g.value(out).clone())
    }
}

/// Anything that maps a token batch to next-token logits.
pub trait Predictor {
    fn context(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn predict(&self, tokens: &[usize], batch: usize, len: usize) -> Result<Tensor>;
}

impl Predictor for LanguageModel {
    fn context(&self) -> usize {
        self.config.context
    }
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }
    fn predict(&self, tokens: &[usize], batch: usize, len: usize) -> Result<Tensor> {
        self.logits(tokens, batch, len)
    }
}

impl Predictor for CachedModel<'_> {
    fn context(&self) -> usize {
        self.model.config.context
    }
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }
    fn predict(&self, tokens: &[usize], batch: usize, len: usize) -> Result<Tensor> {
        self.logits(tokens, batch, len)
    }
}

// ------------------------------------------------------------ checkpoints

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    vocab: String,
    parameter_hash: String,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f64` elements into the parameter blob.
    offset: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

/// A trained model with the vocabulary it was trained on.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: LanguageModel,
    pub vocab: Vocab,
}

impl Checkpoint {
    pub fn new(model: LanguageModel, vocab: Vocab) -> Result<Self> {
        if vocab.len() != model.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary of {} characters for a model with vocab_size {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        Ok(Self { model, vocab })
    }

    /// `(manifest JSON, little-endian f64 blob)`.
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut entries = Vec::new();
        let mut blob = Vec::with_capacity(self.model.total_param_count() * 8);
        let mut offset = 0;
        for (name, t) in self.model.param_names().into_iter().zip(self.model.params.iter()) {
            entries.push(ManifestEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            vocab: self.vocab.as_string(),
            parameter_hash: self.model.param_hash(),
            params: entries,
        };
        Ok((serde_json::to_vec_pretty(&manifest)?, blob))
    }

    /// Decodes and validates a checkpoint. Never panics on bad input.
    pub fn from_bytes(manifest: &[u8], blob: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("checkpoint", d);
        let m: Manifest = serde_json::from_slice(manifest).map_err(|e| bad(format!("manifest: {e}")))?;
        if m.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version(format!(
                "checkpoint format {} but this build reads {CHECKPOINT_VERSION}",
                m.format_version
            )));
        }
        let spec = m.config.validate()?;
        let vocab = Vocab::from_chars(m.vocab.chars().collect())?;
        if vocab.len() != m.config.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} characters, config says {}",
                vocab.len(),
                m.config.vocab_size
            )));
        }
        // Guard against absurd configs before allocating anything.
        let want = shapes(&m.config, &spec);
        let expected: usize = want
            .iter()
            .try_fold(0usize, |acc, (s, _)| {
                s.iter()
                    .try_fold(1usize, |p, &d| p.checked_mul(d))
                    .and_then(|n| acc.checked_add(n))
            })
            .ok_or_else(|| bad("parameter count overflows".into()))?;
        if expected.checked_mul(8) != Some(blob.len()) {
            return Err(bad(format!(
                "parameter blob has {} bytes, configuration needs {}",
                blob.len(),
                expected.saturating_mul(8)
            )));
        }
        let names = want.names();
        if m.params.len() != names.len() {
            return Err(Error::Version(format!(
                "checkpoint lists {} tensors, this build expects {}",
                m.params.len(),
                names.len()
            )));
        }
        let mut offset = 0;
        for ((entry, name), (shape, _)) in m.params.iter().zip(&names).zip(want.iter()) {
            if &entry.name != name || &entry.shape != shape || entry.offset != offset {
                return Err(Error::Version(format!(
                    "tensor {} {:?} at {} does not match expected {name} {shape:?} at {offset}",
                    entry.name, entry.shape, entry.offset
                )));
            }
            offset += shape.iter().product::<usize>();
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut at = 0;
        let params = want.try_map(|(shape, _)| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape.clone(), values[at..at + n].to_vec());
            at += n;
            t
        })?;
        let model = LanguageModel::from_params(m.config, params)?;
        if model.param_hash() != m.parameter_hash {
            return Err(bad("parameter hash does not match the blob".into()));
        }
        Checkpoint::new(model, vocab)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.to_bytes()?;
        let mp = dir.join(MANIFEST_FILE);
        std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(PARAMS_FILE);
        std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST_FILE);
        let manifest = std::fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(PARAMS_FILE);
        let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}

/// Draws a uniform random token batch; handy for smoke tests and benches.
pub fn random_tokens(rng: &mut impl Rng, vocab: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}
