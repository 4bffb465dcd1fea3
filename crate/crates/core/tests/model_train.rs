//! Language model, optimiser, evaluation and generation behaviour.

use proptest::prelude::*;
use qisa_lab::attention::Variant;
use qisa_lab::data::{batch_iter, Vocab};
use qisa_lab::model::{random_tokens, LanguageModel, ModelConfig, Predictor};
use qisa_lab::train::{
    cer, eval_offsets, evaluate_ce, evaluate_cer_wer, generate, levenshtein, train, train_step, wer, Adam, Decoding,
    EvalProtocol, TrainConfig,
};
use qisa_lab::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(variant: Variant, vocab: usize, seed: u64) -> LanguageModel {
    let mut cfg = ModelConfig::paper(variant, 4, 1, vocab);
    cfg.layers = 2;
    cfg.context = 8;
    cfg.seed = seed;
    LanguageModel::new(cfg).unwrap()
}

#[test]
fn single_token_logits_are_finite() {
    for v in Variant::ALL {
        let m = tiny(v, 11, 0);
        let out = m.logits(&[3], 1, 1).unwrap();
        assert_eq!(out.shape(), &[1, 11]);
        assert!(out.data().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in Variant::ALL {
        let m = tiny(v, 65, 2);
        let x = random_tokens(&mut rng, 65, 4 * 8);
        let y = random_tokens(&mut rng, 65, 4 * 8);
        let ce = m.loss(&x, &y, 4, 8).unwrap();
        let ln_v = 65f64.ln();
        assert!((ce - ln_v).abs() < 0.1 * ln_v, "{v}: {ce}");
    }
}

#[test]
fn one_step_touches_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in Variant::ALL {
        let m = tiny(v, 9, 4);
        let x = random_tokens(&mut rng, 9, 2 * 8);
        let y = random_tokens(&mut rng, 9, 2 * 8);
        let g = m.gradients(&x, &y, 2, 8, None).unwrap();
        assert!(g.loss.is_finite());
        for (name, grad) in m.param_names().iter().zip(&g.grads) {
            let grad = grad.as_ref().unwrap_or_else(|| panic!("{v}: {name} has no gradient"));
            assert!(grad.iter().all(|x| x.is_finite()), "{v}: {name}");
            // The first position only attends to itself, so its query circuit
            // cannot move the output.
            let dead = v == Variant::Qsann && name.ends_with(".query.0");
            assert_eq!(grad.iter().all(|&x| x == 0.0), dead, "{v}: {name}");
        }
    }
}

#[test]
fn same_seed_same_model_and_loss_curve() {
    let ids: Vec<usize> = (0..600).map(|i| (i * 7 + i / 5) % 13).collect();
    let mut cfg = TrainConfig::new(1, 8);
    cfg.max_steps = Some(12);
    cfg.eval_every = 4;
    cfg.eval_windows = 5;
    let run = || {
        let mut m = tiny(Variant::QisaA, 13, 5);
        let out = train(&mut m, &ids[..500], &ids[500..], &cfg, |_, _| {}).unwrap();
        (m.param_hash(), out.rows)
    };
    let (h1, r1) = run();
    let (h2, r2) = run();
    assert_eq!(h1, h2);
    assert_eq!(r1, r2);
    assert_eq!(r1.iter().filter(|r| r.split == "test").count(), 3);
    assert_ne!(
        tiny(Variant::QisaA, 13, 6).param_hash(),
        tiny(Variant::QisaA, 13, 5).param_hash()
    );
}

#[test]
fn adam_solves_a_quadratic() {
    let mut p = Tensor::from_fn(&[1], |_| 3.0);
    let mut opt = Adam::new(1e-2, (0.9, 0.999), 1e-8);
    let target = -1.25;
    let mut steps = 0;
    while (p.data()[0] - target).abs() >= 1e-6 {
        let g = 2.0 * (p.data()[0] - target);
        opt.step([&mut p], &[vec![g]]).unwrap();
        steps += 1;
        assert!(steps <= 2000, "still at {} after 2000 steps", p.data()[0]);
    }
}

#[test]
fn ce_matches_per_window_loss() {
    let m = tiny(Variant::Qisa, 10, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids = random_tokens(&mut rng, 10, 203);
    let stat = evaluate_ce(&m, &ids, None).unwrap();
    let offsets = eval_offsets(ids.len(), 8);
    assert_eq!(stat.n, offsets.len());
    let losses: Vec<f64> = offsets
        .iter()
        .map(|&o| m.loss(&ids[o..o + 8], &ids[o + 1..o + 9], 1, 8).unwrap())
        .collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    assert!((stat.mean - mean).abs() < 1e-12);
    assert!((stat.mean - 10f64.ln()).abs() < 0.1);
}

#[test]
fn a_constant_stream_is_memorised() {
    let ids = vec![1usize; 2000];
    let mut m = tiny(Variant::Csa, 2, 9);
    let mut cfg = TrainConfig::new(1, 16);
    cfg.lr = 1e-2;
    cfg.max_steps = Some(600);
    cfg.eval_every = 0;
    train(&mut m, &ids[..1600], &ids[1600..], &cfg, |_, _| {}).unwrap();
    let ce = evaluate_ce(&m, &ids[1600..], None).unwrap();
    assert!(ce.mean < 0.05, "{}", ce.mean);
}

#[test]
fn train_step_reduces_loss_on_a_fixed_batch() {
    let ids: Vec<usize> = (0..200).map(|i| i % 5).collect();
    let batch = batch_iter(&ids, 8, 16, 0).unwrap().next().unwrap();
    let mut m = tiny(Variant::QsannV2, 5, 10);
    let mut cfg = TrainConfig::new(1, 16);
    cfg.lr = 1e-2;
    let mut adam = Adam::new(cfg.lr, cfg.betas, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let first = train_step(&mut m, &mut adam, &batch, &cfg, &mut rng).unwrap();
    for _ in 0..30 {
        train_step(&mut m, &mut adam, &batch, &cfg, &mut rng).unwrap();
    }
    let last = m.loss(&batch.inputs, &batch.targets, 16, 8).unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn generation_is_deterministic_and_in_range() {
    let m = tiny(Variant::QsannV1, 7, 11);
    let prompt = [1, 2, 3];
    let a = generate(&m, &prompt, 20, Decoding::Greedy).unwrap();
    assert_eq!(a, generate(&m, &prompt, 20, Decoding::Greedy).unwrap());
    let mode = Decoding::Sample {
        temperature: 1.3,
        seed: 4,
    };
    let s = generate(&m, &prompt, 20, mode).unwrap();
    assert_eq!(s, generate(&m, &prompt, 20, mode).unwrap());
    assert!(a.iter().chain(&s).all(|&t| t < 7));
    assert_eq!(a.len(), 20);
}

/// Predicts `(last + 1) mod V` with certainty, or always token 0.
struct Stub {
    v: usize,
    successor: bool,
}

impl Predictor for Stub {
    fn context(&self) -> usize {
        8
    }
    fn vocab_size(&self) -> usize {
        self.v
    }
    fn predict(&self, tokens: &[usize], _batch: usize, _len: usize) -> Result<Tensor> {
        let mut out = Tensor::zeros(&[tokens.len(), self.v]);
        for (r, &t) in tokens.iter().enumerate() {
            let next = if self.successor { (t + 1) % self.v } else { 0 };
            out.data_mut()[r * self.v + next] = 10.0;
        }
        Ok(out)
    }
}

#[test]
fn oracle_predictor_scores_zero_error() {
    let vocab = Vocab::build("ab cd").unwrap();
    let ids: Vec<usize> = (0..500).map(|i| i % vocab.len()).collect();
    let protocol = EvalProtocol {
        prompt_len: 4,
        gen_len: 12,
        windows: 10,
    };
    let r = evaluate_cer_wer(&Stub { v: 5, successor: true }, &vocab, &ids, &protocol).unwrap();
    assert_eq!((r.cer.mean, r.wer.mean), (0.0, 0.0));
}

#[test]
fn two_windows_compose_from_cer_and_wer() {
    let vocab = Vocab::build("xy z").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ids: Vec<usize> = (0..40).map(|_| rng.random_range(0..vocab.len())).collect();
    let protocol = EvalProtocol {
        prompt_len: 3,
        gen_len: 5,
        windows: 2,
    };
    let r = evaluate_cer_wer(&Stub { v: 4, successor: false }, &vocab, &ids, &protocol).unwrap();
    let hyp: String = std::iter::repeat_n(vocab.chars()[0], 5).collect();
    let mut cers = Vec::new();
    let mut wers = Vec::new();
    for o in protocol.offsets(ids.len()).unwrap() {
        let reference = vocab.decode(&ids[o + 3..o + 8]).unwrap();
        cers.push(cer(&reference, &hyp).unwrap());
        if reference.split_whitespace().next().is_some() {
            wers.push(wer(&reference, &hyp).unwrap());
        }
    }
    assert_eq!(r.cer.n, 2);
    assert_eq!(r.cer.mean, cers.iter().sum::<f64>() / 2.0);
    assert_eq!(r.wer.mean, wers.iter().sum::<f64>() / wers.len() as f64);
}

#[test]
fn untrained_model_has_high_character_error() {
    let text: String = "to be or not to be that is the question ".repeat(30);
    let vocab = Vocab::build(&text).unwrap();
    let ids = vocab.encode(&text).unwrap();
    let m = tiny(Variant::Csa, vocab.len(), 13);
    let protocol = EvalProtocol {
        prompt_len: 8,
        gen_len: 16,
        windows: 20,
    };
    let r = evaluate_cer_wer(&m, &vocab, &ids, &protocol).unwrap();
    assert!(r.cer.mean > 0.5, "{}", r.cer.mean);
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(a in "[abc]{0,12}", b in "[abc]{0,12}", c in "[abc]{0,12}") {
        let (a, b, c): (Vec<char>, Vec<char>, Vec<char>) =
            (a.chars().collect(), b.chars().collect(), c.chars().collect());
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        prop_assert!(ab <= a.len().max(b.len()));
    }
}
