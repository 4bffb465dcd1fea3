//! Optimisation, evaluation, generation and error-rate metrics.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Batch, Vocab};
use crate::error::{Error, Result};
use crate::model::{LanguageModel, Predictor};
use crate::tensor::{softmax_into, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Sequences per forward/backward pass; gradients of the micro-batches
    /// are averaged into one optimiser step. Bounds peak memory.
    #[serde(default = "default_micro_batch")]
    pub micro_batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Test-CE probe interval in steps; 0 disables it.
    #[serde(default)]
    pub eval_every: usize,
    /// Windows used by each test-CE probe.
    #[serde(default = "default_probe_windows")]
    pub eval_windows: usize,
    #[serde(default)]
    pub seed: u64,
    /// Optional hard cap on optimiser steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_micro_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    3e-4
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_probe_windows() -> usize {
    200
}

impl TrainConfig {
    pub fn new(epochs: usize, batch: usize) -> Self {
        Self {
            epochs,
            batch,
            micro_batch: default_micro_batch(),
            lr: default_lr(),
            betas: default_betas(),
            eps: default_eps(),
            grad_clip: default_clip(),
            eval_every: 0,
            eval_windows: default_probe_windows(),
            seed: 0,
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.micro_batch == 0 {
            return Err(Error::Config("epochs, batch and micro_batch must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be positive".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("betas {:?} not in [0, 1)", self.betas)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            betas,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place from same-ordered `grads`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, grads: &[Vec<f64>]) -> Result<()> {
        if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter {i} at step {}",
                self.step + 1
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let mut count = 0;
        for (i, p) in params.into_iter().enumerate() {
            let (g, m, v) = (&grads[i], &mut self.m[i], &mut self.v[i]);
            if g.len() != p.numel() {
                return Err(Error::Shape(format!(
                    "gradient of {} entries for parameter of {}",
                    g.len(),
                    p.numel()
                )));
            }
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
            count += 1;
        }
        if count != grads.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {count} parameters",
                grads.len()
            )));
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|x| *x *= s);
    }
    norm
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,split,metric,value";

impl LossRow {
    pub fn new(step: usize, split: &str, metric: &str, value: f64) -> Self {
        Self {
            step,
            split: split.into(),
            metric: metric.into(),
            value,
        }
    }

    pub fn csv(&self) -> String {
        format!("{},{},{},{}", self.step, self.split, self.metric, self.value)
    }
}

pub fn rows_to_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<LossRow>,
    pub steps: usize,
    pub wall_time: f64,
}

impl TrainOutcome {
    pub fn train_losses(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == "train")
            .map(|r| r.value)
            .collect()
    }
}

/// Loss above this multiple of the first loss counts towards divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive diverged steps that abort training.
pub const DIVERGENCE_PATIENCE: usize = 100;

/// Trains `model` on `train` windows; probes test CE every `eval_every` steps.
///
/// `on_step` sees each step index and its training loss.
pub fn train(
    model: &mut LanguageModel,
    train_ids: &[usize],
    test_ids: &[usize],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let l = model.config().context;
    let mut batches = batch_iter(train_ids, l, cfg.batch, cfg.seed)?;
    let mut total = batches.steps_per_epoch() * cfg.epochs;
    if let Some(cap) = cfg.max_steps {
        total = total.min(cap);
    }
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d50f);
    let mut adam = Adam::new(cfg.lr, cfg.betas, cfg.eps);
    let mut rows = Vec::with_capacity(total);
    let mut initial = None;
    let mut over = 0;

    for step in 0..total {
        let batch = batches.next().expect("endless stream");
        let loss = train_step(model, &mut adam, &batch, cfg, &mut dropout_rng)?;
        let first = *initial.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * first {
            over += 1;
            if over >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged(format!(
                    "loss {loss:.4} above {DIVERGENCE_FACTOR}× the initial {first:.4} for {over} steps"
                )));
            }
        } else {
            over = 0;
        }
        rows.push(LossRow::new(step, "train", "ce", loss));
        on_step(step, loss);
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            let ce = evaluate_ce(model, test_ids, Some(cfg.eval_windows))?;
            rows.push(LossRow::new(step, "test", "ce", ce.mean));
        }
    }
    Ok(TrainOutcome {
        rows,
        steps: total,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// One optimiser step on `batch`, split into micro-batches whose gradients
/// are averaged. Returns the batch loss before the update.
pub fn train_step(
    model: &mut LanguageModel,
    adam: &mut Adam,
    batch: &Batch,
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let use_dropout = model.config().dropout > 0.0;
    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|t| vec![0.0; t.numel()]).collect();
    let mut loss = 0.0;
    let mut lo = 0;
    while lo < batch.batch {
        let hi = (lo + cfg.micro_batch).min(batch.batch);
        let mb = batch.slice(lo, hi);
        let w = (hi - lo) as f64 / batch.batch as f64;
        let out = model.gradients(
            &mb.inputs,
            &mb.targets,
            mb.batch,
            mb.len,
            use_dropout.then_some(&mut *dropout_rng),
        )?;
        loss += w * out.loss;
        for (acc, g) in grads.iter_mut().zip(out.grads).filter_map(|(a, g)| g.map(|g| (a, g))) {
            acc.iter_mut().zip(g).for_each(|(a, x)| *a += w * x);
        }
        lo = hi;
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss {loss} at step {}", adam.steps() + 1)));
    }
    if let Some(c) = cfg.grad_clip {
        clip_global_norm(&mut grads, c);
    }
    adam.step(model.params_mut().iter_mut(), &grads)?;
    Ok(loss)
}

/// Trailing moving average over windows of `w`; the first `w − 1` points
/// average what is available.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        sum += x;
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Mean and population standard deviation of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            n: xs.len(),
        }
    }
}

/// Windows per forward pass during evaluation.
const EVAL_CHUNK: usize = 128;

/// Start offsets of non-overlapping `l`-token windows that have a target.
pub fn eval_offsets(len: usize, l: usize) -> Vec<usize> {
    if len <= l {
        return Vec::new();
    }
    (0..=(len - l - 1) / l).map(|i| i * l).collect()
}

/// Per-window mean next-token CE over non-overlapping test windows, then
/// mean ± std across windows. `max_windows` keeps an evenly spaced subset.
pub fn evaluate_ce(model: &dyn Predictor, ids: &[usize], max_windows: Option<usize>) -> Result<Stat> {
    let l = model.context();
    let mut offsets = eval_offsets(ids.len(), l);
    if offsets.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} test tokens cannot fill one window of {l}",
            ids.len()
        )));
    }
    if let Some(k) = max_windows {
        if k > 0 && k < offsets.len() {
            let n = offsets.len();
            offsets = (0..k).map(|i| offsets[i * n / k]).collect();
        }
    }
    let mut per_window = Vec::with_capacity(offsets.len());
    for chunk in offsets.chunks(EVAL_CHUNK) {
        let mut inputs = Vec::with_capacity(chunk.len() * l);
        for &o in chunk {
            inputs.extend_from_slice(&ids[o..o + l]);
        }
        let logits = model.predict(&inputs, chunk.len(), l)?;
        for (w, &o) in chunk.iter().enumerate() {
            let mut sum = 0.0;
            for t in 0..l {
                let row = logits.row(w * l + t);
                sum -= log_softmax_at(row, ids[o + t + 1])?;
            }
            per_window.push(sum / l as f64);
        }
    }
    Ok(Stat::from_samples(&per_window))
}

fn log_softmax_at(row: &[f64], target: usize) -> Result<f64> {
    if row.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("NaN logit".into()));
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(row[target] - lse)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// Continues every prompt by `n` tokens. Prompts share one length; the
/// model sees at most its context, sliding forward as text grows.
pub fn generate_batch(
    model: &dyn Predictor,
    prompts: &[Vec<usize>],
    n: usize,
    mode: Decoding,
) -> Result<Vec<Vec<usize>>> {
    if n < 1 {
        return Err(Error::Contract("must generate at least one token".into()));
    }
    let plen = prompts.first().map_or(0, Vec::len);
    if plen == 0 || prompts.iter().any(|p| p.len() != plen) {
        return Err(Error::Contract("prompts must be non-empty and of equal length".into()));
    }
    let l = model.context();
    if plen > l {
        return Err(Error::ContextOverflow { len: plen, max: l });
    }
    let v = model.vocab_size();
    let mut rng = match mode {
        Decoding::Sample { temperature, seed } => {
            if !(temperature > 0.0) {
                return Err(Error::Config(format!("temperature {temperature} must be positive")));
            }
            Some(ChaCha8Rng::seed_from_u64(seed))
        }
        Decoding::Greedy => None,
    };
    let mut seqs: Vec<Vec<usize>> = prompts.to_vec();
    let mut out = vec![Vec::with_capacity(n); prompts.len()];
    let mut scaled = vec![0.0; v];
    let mut probs = vec![0.0; v];
    for _ in 0..n {
        let len = seqs[0].len().min(l);
        let mut inputs = Vec::with_capacity(seqs.len() * len);
        for s in &seqs {
            inputs.extend_from_slice(&s[s.len() - len..]);
        }
        let logits = model.predict(&inputs, seqs.len(), len)?;
        for (b, s) in seqs.iter_mut().enumerate() {
            let row = logits.row(b * len + len - 1);
            let next = match (&mode, rng.as_mut()) {
                (Decoding::Sample { temperature, .. }, Some(rng)) => {
                    scaled.iter_mut().zip(row).for_each(|(o, x)| *o = x / temperature);
                    softmax_into(&scaled, &mut probs)?;
                    sample(&probs, rng)
                }
                _ => argmax(row),
            };
            s.push(next);
            out[b].push(next);
        }
    }
    Ok(out)
}

pub fn generate(model: &dyn Predictor, prompt: &[usize], n: usize, mode: Decoding) -> Result<Vec<usize>> {
    Ok(generate_batch(model, &[prompt.to_vec()], n, mode)?.remove(0))
}

/// First index of the maximum.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: edit distance over reference characters.
pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(Error::Contract("empty reference".into()));
    }
    let h: Vec<char> = hypothesis.chars().collect();
    Ok(levenshtein(&r, &h) as f64 / r.len() as f64)
}

/// Word error rate over whitespace-separated words.
pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(Error::Contract("reference has no words".into()));
    }
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    Ok(levenshtein(&r, &h) as f64 / r.len() as f64)
}

/// How CER/WER windows are drawn from the test split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub prompt_len: usize,
    pub gen_len: usize,
    pub windows: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            prompt_len: 16,
            gen_len: 64,
            windows: 100,
        }
    }
}

impl EvalProtocol {
    /// Evenly spaced window starts over the test split.
    pub fn offsets(&self, len: usize) -> Result<Vec<usize>> {
        let span = self.prompt_len + self.gen_len;
        if self.windows == 0 || self.prompt_len == 0 || self.gen_len == 0 {
            return Err(Error::Config("evaluation protocol sizes must be positive".into()));
        }
        if len < span * self.windows {
            return Err(Error::InsufficientData(format!(
                "{len} test tokens, need {} for {} windows of {span}",
                span * self.windows,
                self.windows
            )));
        }
        let last = len - span;
        Ok(if self.windows == 1 {
            vec![0]
        } else {
            (0..self.windows).map(|i| i * last / (self.windows - 1)).collect()
        })
    }
}

/// Per-window scores of greedy continuations.
#[derive(Clone, Debug)]
pub struct ErrorRates {
    pub cer: Stat,
    pub wer: Stat,
    /// `(reference, hypothesis)` of every window.
    pub samples: Vec<(String, String)>,
}

/// Greedy-continues each window's prompt and scores it against the true
/// continuation. Windows whose reference holds no words are left out of WER.
pub fn evaluate_cer_wer(
    model: &dyn Predictor,
    vocab: &Vocab,
    test_ids: &[usize],
    protocol: &EvalProtocol,
) -> Result<ErrorRates> {
    let offsets = protocol.offsets(test_ids.len())?;
    let (pl, gl) = (protocol.prompt_len, protocol.gen_len);
    let mut cers = Vec::with_capacity(offsets.len());
    let mut wers = Vec::with_capacity(offsets.len());
    let mut samples = Vec::with_capacity(offsets.len());
    for chunk in offsets.chunks(EVAL_CHUNK) {
        let prompts: Vec<Vec<usize>> = chunk.iter().map(|&o| test_ids[o..o + pl].to_vec()).collect();
        let outs = generate_batch(model, &prompts, gl, Decoding::Greedy)?;
        for (&o, hyp) in chunk.iter().zip(outs) {
            let reference = vocab.decode(&test_ids[o + pl..o + pl + gl])?;
            let hypothesis = vocab.decode(&hyp)?;
            cers.push(cer(&reference, &hypothesis)?);
            if reference.split_whitespace().next().is_some() {
                wers.push(wer(&reference, &hypothesis)?);
            }
            samples.push((reference, hypothesis));
        }
    }
    Ok(ErrorRates {
        cer: Stat::from_samples(&cers),
        wer: Stat::from_samples(&wers),
        samples,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ce: Stat,
    pub cer: Stat,
    pub wer: Stat,
    pub steps: usize,
    pub wall_time: f64,
}
