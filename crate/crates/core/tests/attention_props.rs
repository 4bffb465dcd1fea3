//! Attention-layer examples and properties for all six variants.

use num_complex::Complex64;
use qisa_lab::attention::{
    attention_forward, attention_forward_traced, causal_mask, gaussian_attention, init_weights, AttentionParams,
    AttentionSpec, Variant,
};
use qisa_lab::quantum::{ansatz_expectations, congruence_values, select_observables, Hea, ObservableMode};
use qisa_lab::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bind(g: &mut Graph, w: &AttentionParams<Tensor>) -> AttentionParams<Var> {
    w.try_map(|t| Ok::<_, qisa_lab::Error>(g.constant(t.clone()))).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn forward(spec: &AttentionSpec, w: &AttentionParams<Tensor>, x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = bind(&mut g, w);
    let xv = g.constant(x.clone());
    let y = attention_forward(&mut g, spec, &p, xv, None).unwrap();
    g.value(y).clone()
}

#[test]
fn mask_examples() {
    assert_eq!(causal_mask(1).unwrap().data(), &[0.0]);
    let m = causal_mask(3).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let v = m.data()[i * 3 + j];
            if j > i {
                assert_eq!(v, f64::NEG_INFINITY);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn single_token_csa_is_value_then_output_map() {
    let spec = AttentionSpec::new(Variant::Csa, 4, 1, 4, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = init_weights(&spec, &mut rng).unwrap();
    let x = random(&mut rng, &[1, 1, 4]);
    let y = forward(&spec, &w, &x);
    let flat = x.clone().reshaped(vec![1, 4]).unwrap();
    let want = flat
        .matmul(&w.heads[0].value[0])
        .unwrap()
        .matmul(w.output.as_ref().unwrap())
        .unwrap();
    assert!(y.data().iter().zip(want.data()).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn identical_tokens_attend_uniformly_over_the_prefix() {
    let spec = AttentionSpec::new(Variant::Csa, 4, 1, 5, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = init_weights(&spec, &mut rng).unwrap();
    let row = random(&mut rng, &[4]);
    let x = Tensor::from_fn(&[1, 5, 4], |i| row.data()[i % 4]);
    let mut g = Graph::new();
    let p = bind(&mut g, &w);
    let xv = g.constant(x);
    let t = attention_forward_traced(&mut g, &spec, &p, xv, None).unwrap();
    let a = g.value(t.attention[0]).data();
    for i in 0..5 {
        for j in 0..5 {
            let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
            assert!((a[i * 5 + j] - want).abs() < 1e-14);
        }
    }
}

fn congruence(x: &Tensor, w: &Tensor, count: usize) -> Tensor {
    let obs = select_observables(2, count, ObservableMode::RealCongruence).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let out = congruence_values(&mut g, xv, wv, &obs).unwrap();
    g.value(out).clone()
}

#[test]
fn qisa_values_on_the_first_basis_vector() {
    let obs = select_observables(2, 4, ObservableMode::RealCongruence).unwrap();
    let names: Vec<String> = obs.iter().map(|p| p.to_string()).collect();
    assert_eq!(names, ["IX", "IZ", "XI", "XX"]);
    let x = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
    assert_eq!(congruence(&x, &Tensor::identity(4), 4).data(), &[0.0, 1.0, 0.0, 0.0]);
}

/// `xᵀ Wᵀ P W x` with `P` built densely from its Kronecker factors.
fn dense_congruence(x: &[f64], w: &Tensor, word: &str) -> f64 {
    let single = |c: char| -> [[Complex64; 2]; 2] {
        let (o, l, i) = (
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
        );
        match c {
            'I' => [[l, o], [o, l]],
            'X' => [[o, l], [l, o]],
            'Y' => [[o, -i], [i, o]],
            _ => [[l, o], [o, -l]],
        }
    };
    let c: Vec<char> = word.chars().collect();
    let (a, b) = (single(c[0]), single(c[1]));
    let p = |r: usize, s: usize| a[r >> 1][s >> 1] * b[r & 1][s & 1];
    let y: Vec<f64> = (0..4)
        .map(|r| (0..4).map(|k| w.data()[r * 4 + k] * x[k]).sum())
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..4 {
        for s in 0..4 {
            acc += y[r] * p(r, s) * y[s];
        }
    }
    acc.re
}

#[test]
fn qisa_values_match_dense_oracle_and_permute_with_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[5, 4]);
    let w = random(&mut rng, &[4, 4]);
    let out = congruence(&x, &w, 4);
    for (r, xr) in (0..5).map(|r| (r, x.row(r))) {
        for (k, word) in ["IX", "IZ", "XI", "XX"].iter().enumerate() {
            let want = dense_congruence(xr, &w, word);
            assert!((out.data()[r * 4 + k] - want).abs() < 1e-12);
        }
    }
    let perm = [3, 0, 4, 1, 2];
    let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let outp = congruence(&xp, &w, 4);
    for (r, &src) in perm.iter().enumerate() {
        assert_eq!(outp.row(r), out.row(src));
    }
}

#[test]
fn zero_angle_ansatz_is_a_bare_cnot() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = select_observables(2, 15, ObservableMode::Unitary).unwrap();
    let mut x = random(&mut rng, &[6, 4]);
    for r in 0..6 {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut x.data_mut()[r * 4..(r + 1) * 4] {
            *v /= n;
        }
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let theta = g.constant(Tensor::zeros(&[1, 2, 3]));
    let out = ansatz_expectations(&mut g, xv, &[theta], Hea::new(2, 1).unwrap(), &obs, 6).unwrap();
    let out = g.value(out).clone();
    for r in 0..6 {
        // CNOT with control on the leading qubit swaps |10⟩ and |11⟩.
        let xr = x.row(r);
        let psi = [xr[0], xr[1], xr[3], xr[2]];
        for (k, p) in obs.iter().enumerate() {
            let m = p.matrix();
            let mut e = Complex64::new(0.0, 0.0);
            for a in 0..4 {
                for b in 0..4 {
                    e += psi[a] * m.get(a, b) * psi[b];
                }
            }
            assert!((out.data()[r * 15 + k] - e.re).abs() < 1e-12, "{p}");
        }
    }
}

#[test]
fn gaussian_attention_rows() {
    assert_eq!(gaussian_attention(&[0.3], &[0.1]).unwrap().data(), &[1.0]);
    let a = gaussian_attention(&[0.5; 4], &[0.5; 4]).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
            assert!((a.data()[i * 4 + j] - want).abs() < 1e-15);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = gaussian_attention(&q, &k).unwrap();
    for i in 0..7 {
        assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn shared_circuit_matches_per_token_circuits_with_equal_angles() {
    let l = 6;
    let v1 = AttentionSpec::new(Variant::QsannV1, 4, 1, l, 2).unwrap();
    let full = AttentionSpec::new(Variant::Qsann, 4, 1, l, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w1 = init_weights(&v1, &mut rng).unwrap();
    let mut wf = init_weights(&full, &mut rng).unwrap();
    let h = &w1.heads[0];
    wf.heads[0].query = vec![h.query[0].clone(); l];
    wf.heads[0].key = vec![h.key[0].clone(); l];
    wf.heads[0].value = vec![h.value[0].clone(); l];
    let x = random(&mut rng, &[2, l, 4]);
    assert_eq!(forward(&v1, &w1, &x), forward(&full, &wf, &x));
}

#[test]
fn qsann_family_outputs_are_pauli_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for v in [Variant::Qsann, Variant::QsannV1, Variant::QsannV2] {
        for heads in [1, 4] {
            let spec = AttentionSpec::new(v, 16, heads, 8, 1).unwrap();
            let w = init_weights(&spec, &mut rng).unwrap();
            let x = random(&mut rng, &[3, 8, 16]);
            let y = forward(&spec, &w, &x);
            assert!(y.data().iter().all(|v| v.abs() <= 1.0 + 1e-12), "{v}");
        }
    }
}

#[test]
fn dot_kernel_logits_are_bounded_by_root_m() {
    let m = 16;
    let spec = AttentionSpec::new(Variant::QsannV2, m, 1, 8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = init_weights(&spec, &mut rng).unwrap();
    let x = random(&mut rng, &[2, 8, m]);
    let mut g = Graph::new();
    let p = bind(&mut g, &w);
    let xv = g.constant(x);
    let t = attention_forward_traced(&mut g, &spec, &p, xv, None).unwrap();
    let a = g.value(t.attention[0]);
    // Softmax weights within a row differ by at most exp(2√m).
    let bound = (2.0 * (m as f64).sqrt()).exp() * (1.0 + 1e-9);
    for r in 0..16 {
        let i = r % 8;
        let row = &a.row(r)[..=i];
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(hi / lo <= bound);
    }
}

#[test]
fn every_variant_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for v in Variant::ALL {
        let spec = AttentionSpec::new(v, 4, 1, 8, 1).unwrap();
        let w = init_weights(&spec, &mut rng).unwrap();
        let x = random(&mut rng, &[1, 8, 4]);
        let y = forward(&spec, &w, &x);
        for i in 0..7 {
            let mut xp = x.clone();
            for t in i + 1..8 {
                for c in 0..4 {
                    xp.data_mut()[t * 4 + c] = rng.random_range(-3.0..3.0);
                }
            }
            let yp = forward(&spec, &w, &xp);
            let cols = y.numel() / 8;
            let diff = y.data()[..(i + 1) * cols]
                .iter()
                .zip(&yp.data()[..(i + 1) * cols])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-12, "{v}: position {i} moved by {diff}");
        }
    }
}
