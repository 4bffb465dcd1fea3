//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gating criterion fails.
//!
//! `QISA_LAB_ACCEPTANCE_FULL=1` also runs the full-size comparison
//! (two epochs at batch 1024 on the whole corpus; hours on one core).

use std::path::Path;
use std::process::Command;

use qisa_lab::attention::{init_weights, AttentionSpec, Variant};
use qisa_lab::data::{load_corpus, SplitDataset, TEST_FRACTION};
use qisa_lab::experiment::{prepare_data, ExperimentConfig, PreparedData};
use qisa_lab::model::{random_tokens, Checkpoint, LanguageModel, ModelConfig};
use qisa_lab::quantum::{
    amplitude_encode, hea_unitary, run_statevector, AnsatzParams, Hea, ObservableCache, Pauli, PauliString,
};
use qisa_lab::tensor::ComplexMatrix;
use qisa_lab::train::{cer, evaluate_ce, evaluate_cer_wer, moving_average, train, wer};
use qisa_lab::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FULL_ENV: &str = "QISA_LAB_ACCEPTANCE_FULL";

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn corpus() -> PreparedData {
    let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/shakespeare.txt"));
    let text = load_corpus(path).expect("corpus present");
    prepare_data(&text, 1.0).expect("corpus prepares")
}

fn log2_ceil(m: usize) -> usize {
    m.next_power_of_two().trailing_zeros() as usize
}

/// Per-head trainable scalars from the published table.
fn table_per_head(v: Variant, m: usize, heads: usize, p: usize, l: usize) -> usize {
    let h = m / heads;
    let n = log2_ceil(m);
    match v {
        Variant::Csa => 3 * m * h,
        Variant::Qisa => 2 * m * h + m * m,
        Variant::QisaA => 2 * m * h + 3 * n * p,
        Variant::Qsann => 3 * 3 * n * p * l,
        Variant::QsannV1 | Variant::QsannV2 => 3 * 3 * n * p,
    }
}

fn parameter_counts() -> Outcome {
    let l = 16;
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in Variant::ALL {
        for m in [4, 16] {
            for heads in [1, 4] {
                for p in [1, 2, 3] {
                    let spec = AttentionSpec::new(v, m, heads, l, p).unwrap();
                    let w = init_weights(&spec, &mut rng).unwrap();
                    let per_head: Vec<usize> = w
                        .heads
                        .iter()
                        .map(|h| h.query.iter().chain(&h.key).chain(&h.value).map(Tensor::numel).sum())
                        .collect();
                    let want = table_per_head(v, m, heads, p, l);
                    let output = w.output.as_ref().map_or(0, Tensor::numel);
                    let total: usize = w.iter().map(Tensor::numel).sum();
                    let want_output = if matches!(v, Variant::Csa | Variant::Qisa | Variant::QisaA) {
                        m * m
                    } else {
                        0
                    };
                    if per_head.iter().any(|&c| c != want) || output != want_output || total != want * heads + output {
                        bad.push(format!("{v} m={m} H={heads} p={p}: {per_head:?} vs {want}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    let head = |v| {
        let spec = AttentionSpec::new(v, 16, 1, l, 1).unwrap();
        let w = init_weights(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        w.iter().map(Tensor::numel).sum::<usize>() - w.output.as_ref().map_or(0, Tensor::numel)
    };
    let (csa, qisa) = (head(Variant::Csa), head(Variant::Qisa));
    let pass = bad.is_empty() && csa == 768 && qisa == 768;
    Outcome::new(
        pass,
        format!(
            "{checked} configs, {} mismatches; per head at m=16 H=1: CSA {csa}, QISA {qisa} {bad:?}",
            bad.len()
        ),
    )
}

/// Max logit deviation at positions `<= i` when every later token changes.
fn causality() -> Outcome {
    let (l, vocab) = (8, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for v in Variant::ALL {
        let mut cfg = ModelConfig::paper(v, 4, 1, vocab);
        cfg.context = l;
        cfg.seed = 3;
        let model = LanguageModel::new(cfg).unwrap();
        for _ in 0..3 {
            let base = random_tokens(&mut rng, vocab, l);
            let out = model.logits(&base, 1, l).unwrap();
            for i in 0..l - 1 {
                let mut other = base.clone();
                for t in &mut other[i + 1..] {
                    *t = (*t + rng.random_range(1..vocab)) % vocab;
                }
                let moved = model.logits(&other, 1, l).unwrap();
                let upto = (i + 1) * vocab;
                for (a, b) in out.data()[..upto].iter().zip(&moved.data()[..upto]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    Outcome::new(
        worst <= 1e-12,
        format!("max deviation {worst:.2e} over 6 variants at l=8, m=4"),
    )
}

fn gradient_check() -> Outcome {
    // The loss is sharply curved along a few embedding directions at init;
    // a 1e-5 step leaves truncation error above 1e-3 there.
    const STEP: f64 = 1e-6;
    // Below this magnitude both gradients are compared on an absolute scale.
    const FLOOR: f64 = 1e-6;
    let (l, vocab, batch) = (4, 7, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut report = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let mut cfg = ModelConfig::paper(v, 4, 1, vocab);
        cfg.context = l;
        cfg.layers = 2;
        cfg.ansatz_layers = 1;
        cfg.seed = 5;
        let mut model = LanguageModel::new(cfg).unwrap();
        let x = random_tokens(&mut rng, vocab, batch * l);
        let y = random_tokens(&mut rng, vocab, batch * l);
        let analytic = model.gradients(&x, &y, batch, l, None).unwrap().grads;
        let mut worst = 0f64;
        let mut scalars = 0;
        for (pi, grad) in analytic.iter().enumerate() {
            let numel = model.params().iter().nth(pi).unwrap().numel();
            for j in 0..numel {
                let probe = |model: &mut LanguageModel, delta: f64| {
                    model.params_mut().iter_mut().nth(pi).unwrap().data_mut()[j] += delta;
                };
                probe(&mut model, STEP);
                let plus = model.loss(&x, &y, batch, l).unwrap();
                probe(&mut model, -2.0 * STEP);
                let minus = model.loss(&x, &y, batch, l).unwrap();
                probe(&mut model, STEP);
                let fd = (plus - minus) / (2.0 * STEP);
                let a = grad.as_ref().map_or(0.0, |g| g[j]);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FLOOR);
                worst = worst.max(rel);
                scalars += 1;
            }
        }
        pass &= worst < 1e-3;
        report.push(format!("{v} {worst:.1e} ({scalars})"));
    }
    Outcome::new(pass, format!("worst relative error per variant: {}", report.join(", ")))
}

fn kron_pauli(p: &PauliString) -> ComplexMatrix {
    let mut acc = ComplexMatrix::identity(1);
    for &q in p.word() {
        let f = q.matrix();
        let (d, k) = (acc.dim(), 2);
        let mut out = ComplexMatrix::zeros(d * k);
        for a in 0..d {
            for b in 0..d {
                for c in 0..k {
                    for e in 0..k {
                        out.set(a * k + c, b * k + e, acc.get(a, b) * f.get(c, e));
                    }
                }
            }
        }
        acc = out;
    }
    acc
}

fn all_words(n: usize) -> Vec<PauliString> {
    (1..1usize << (2 * n))
        .map(|code| {
            let word = (0..n).map(|q| Pauli::ALL[(code >> (2 * q)) & 3]).collect();
            PauliString::new(word).unwrap()
        })
        .collect()
}

fn quantum_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut unitarity = 0f64;
    let mut bound = 0f64;
    for trial in 0..100 {
        let shape = Hea::new(1 + trial % 4, 1 + trial % 3).unwrap();
        let theta = (0..shape.n_params()).map(|_| rng.random_range(-7.0..7.0)).collect();
        let params = AnsatzParams::new(shape, theta).unwrap();
        let u = hea_unitary(&params);
        let gram = u.adjoint().matmul(&u).unwrap();
        for r in 0..u.dim() {
            for c in 0..u.dim() {
                let want = if r == c { 1.0 } else { 0.0 };
                unitarity = unitarity.max((gram.get(r, c).re - want).abs().max(gram.get(r, c).im.abs()));
            }
        }
        let n = shape.n;
        let x: Vec<f64> = (0..1 << n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psi = run_statevector(&params, &amplitude_encode(&x, n).unwrap()).unwrap();
        for p in all_words(n) {
            bound = bound.max(p.mask().expectation(&psi).abs());
        }
    }
    let odd: Vec<PauliString> = all_words(3).into_iter().filter(|p| p.y_count() % 2 == 1).collect();
    let dense: Vec<ComplexMatrix> = odd.iter().map(kron_pauli).collect();
    let mut odd_worst = 0f64;
    let mut exact = true;
    for _ in 0..100 {
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..8).map(|r| (0..8).map(|c| w[r * 8 + c] * x[c]).sum()).collect();
        for (p, m) in odd.iter().zip(&dense) {
            let mut acc = m.get(0, 0) * 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    acc += m.get(a, b) * (y[a] * y[b]);
                }
            }
            odd_worst = odd_worst.max(acc.norm());
            exact &= p.mask().real_quadratic(&y) == 0.0;
        }
    }
    let pass = unitarity <= 1e-12 && bound <= 1.0 + 1e-12 && odd_worst <= 1e-12 && exact;
    Outcome::new(
        pass,
        format!(
            "|U†U - I| {unitarity:.1e}; max |<P>| {bound:.15}; odd-Y forms {odd_worst:.1e} dense, \
             {} in the simulator",
            if exact { "exactly 0" } else { "non-zero" }
        ),
    )
}

/// Reference Levenshtein distance over full DP tables.
fn oracle_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet: Vec<char> = "ab c\nde".chars().collect();
    let text = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(0..30);
        (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let mut mismatches = 0;
    let mut pairs = 0;
    while pairs < 1000 {
        let (r, h) = (text(&mut rng), text(&mut rng));
        let rw: Vec<&str> = r.split_whitespace().collect();
        if rw.is_empty() {
            continue;
        }
        pairs += 1;
        let (rc, hc): (Vec<char>, Vec<char>) = (r.chars().collect(), h.chars().collect());
        let hw: Vec<&str> = h.split_whitespace().collect();
        let want_cer = oracle_distance(&rc, &hc) as f64 / rc.len() as f64;
        let want_wer = oracle_distance(&rw, &hw) as f64 / rw.len() as f64;
        if cer(&r, &h).unwrap() != want_cer || wer(&r, &h).unwrap() != want_wer {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("{mismatches} mismatches over {pairs} pairs"))
}

struct Trained {
    cfg: ExperimentConfig,
    ckpt: Checkpoint,
    train_losses: Vec<f64>,
}

fn split_for(cfg: &ExperimentConfig, full: &PreparedData) -> SplitDataset {
    let ids: Vec<usize> = full.split.train.iter().chain(&full.split.test).copied().collect();
    let keep = (ids.len() as f64 * cfg.corpus_fraction).round() as usize;
    SplitDataset::new(&ids[..keep], TEST_FRACTION).unwrap()
}

fn run_preset(name: &str, full: &PreparedData) -> Trained {
    let mut cfg = ExperimentConfig::preset(name).unwrap();
    cfg.model.vocab_size = full.vocab.len();
    let data = split_for(&cfg, full);
    let mut model = LanguageModel::new(cfg.model.clone()).unwrap();
    let outcome = train(&mut model, &data.train, &data.test, &cfg.train, |_, _| {}).unwrap();
    eprintln!("  trained {name}: {} steps in {:.0}s", outcome.steps, outcome.wall_time);
    Trained {
        train_losses: outcome.train_losses(),
        ckpt: Checkpoint::new(model, full.vocab.clone()).unwrap(),
        cfg,
    }
}

fn loss_shape(runs: &[Trained]) -> Outcome {
    let mut pass = true;
    let parts: Vec<String> = runs
        .iter()
        .map(|r| {
            let smooth = moving_average(&r.train_losses, 50);
            let (start, end) = (smooth[49.min(smooth.len() - 1)], *smooth.last().unwrap());
            let rises = smooth.windows(2).skip(49).filter(|w| w[1] > w[0]).count();
            pass &= start > end;
            format!("{} {start:.3}->{end:.3} ({rises} upticks)", r.cfg.model.variant)
        })
        .collect();
    Outcome::new(pass, format!("window-50 average at m=4: {}", parts.join(", ")))
}

fn cache_equivalence(runs: &[Trained]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0f64;
    let mut names = Vec::new();
    for r in runs.iter().filter(|r| r.cfg.model.variant.is_quantum()) {
        let (manifest, blob) = r.ckpt.to_bytes().unwrap();
        let model = Checkpoint::from_bytes(&manifest, &blob).unwrap().model;
        let cache = ObservableCache::from_bytes(&model.build_cache().unwrap().to_bytes().unwrap()).unwrap();
        let cached = model.with_cache(&cache).unwrap();
        let (batch, l, vocab) = (4, model.config().context, model.config().vocab_size);
        for _ in 0..100 {
            let x = random_tokens(&mut rng, vocab, batch * l);
            let a = model.logits(&x, batch, l).unwrap();
            let b = cached.logits(&x, batch, l).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                worst = worst.max((p - q).abs());
            }
        }
        names.push(r.cfg.model.variant.to_string());
    }
    Outcome::new(
        worst <= 1e-10 && names.len() == 5,
        format!(
            "max abs logit error {worst:.2e} over 100 batches each for {}",
            names.join(", ")
        ),
    )
}

struct Scores {
    ce: f64,
    cer: f64,
    wer: f64,
}

fn score(run: &Trained, full: &PreparedData) -> Scores {
    let split = split_for(&run.cfg, full);
    let model = &run.ckpt.model;
    let ce = evaluate_ce(model, &split.test, None).unwrap();
    let rates = evaluate_cer_wer(model, &full.vocab, &split.test, &run.cfg.eval).unwrap();
    Scores {
        ce: ce.mean,
        cer: rates.cer.mean,
        wer: rates.wer.mean,
    }
}

fn comparison(suffix: &str, full: &PreparedData, strict: bool) -> Outcome {
    let csa = run_preset(&format!("emb16-h1-csa{suffix}"), full);
    let qisa = run_preset(&format!("emb16-h1-qisa{suffix}"), full);
    let (c, q) = (score(&csa, full), score(&qisa, full));
    let detail = format!(
        "CE CSA {:.4} vs QISA {:.4} (ratio {:.2}); CER {:.3} vs {:.3}; WER {:.3} vs {:.3}",
        c.ce,
        q.ce,
        c.ce / q.ce,
        c.cer,
        q.cer,
        c.wer,
        q.wer
    );
    let pass = if strict {
        c.ce >= 2.0 * q.ce && q.cer < c.cer && q.wer < c.wer
    } else {
        q.ce < c.ce
    };
    Outcome::new(pass, detail)
}

fn timing() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_qisa-lab"))
        .args([
            "bench",
            "--preset",
            "emb16-h1-qisa",
            "--variants",
            "qisa",
            "--batch",
            "64",
            "--out-dir",
        ])
        .arg(dir.path())
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    if !status.success() {
        return Outcome::new(false, format!("bench exited with {status}"));
    }
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let median = |phase: &str| -> f64 {
        csv.lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|f| f[0] == "qisa" && f[1] == phase)
            .map(|f| f[4].parse().unwrap())
            .unwrap()
    };
    let (direct, cached) = (median("infer"), median("infer_cached"));
    Outcome::new(
        cached < direct,
        format!(
            "QISA m=16 batch 64 median inference: direct {:.1} ms, cached {:.1} ms",
            direct * 1e3,
            cached * 1e3
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, bool, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, gating: bool, o: Outcome| {
        println!(
            "criterion {id} {name}: {}{} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            if gating { "" } else { " (informational)" },
            o.detail
        );
        results.push((id, name, gating, o));
    };
    record(1, "parameter counts", true, parameter_counts());
    record(3, "causality", true, causality());
    record(4, "gradients", true, gradient_check());
    record(5, "quantum properties", true, quantum_properties());
    record(8, "metric oracles", true, metric_oracles());

    let full = corpus();
    let small: Vec<Trained> = Variant::ALL
        .iter()
        .map(|v| run_preset(&format!("emb4-h1-{v}"), &full))
        .collect();
    record(7, "loss curve shape", true, loss_shape(&small));
    record(2, "cache equivalence", true, cache_equivalence(&small));
    record(6, "reduced comparison", true, comparison("", &full, false));
    if std::env::var(FULL_ENV).is_ok_and(|v| v == "1") {
        record(6, "full comparison", true, comparison("-full", &full, true));
    } else {
        println!("criterion 6 full comparison: SKIPPED - set {FULL_ENV}=1 to run");
    }
    record(9, "cached inference timing", false, timing());

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, gating, o)| *gating && !o.pass)
        .map(|(id, name, _, _)| format!("{id} ({name})"))
        .collect();
    if failed.is_empty() {
        println!("acceptance: all gating criteria pass");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
