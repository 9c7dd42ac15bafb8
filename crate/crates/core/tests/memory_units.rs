use mosaic_core::memory_units::{
    contextual_forward, extract_keys, extract_values, moons_linear_extractors, persistent_forward,
    ContextualUnitParams, MemoryState, PersistentUnitParams, StreamingContextualUnit,
};
use mosaic_core::numerics::{normalize, ComplexVector, Tensor};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_params(r: &mut ChaCha8Rng, d_in: usize, d_k: usize, d_v: usize) -> ContextualUnitParams {
    ContextualUnitParams {
        w_phi: random_matrix(r, d_k, d_in),
        w_psi: random_matrix(r, d_v, d_in),
        lambda_phi: r.random_range(0.0..0.95),
        lambda_psi: r.random_range(0.0..2.0),
        beta: r.random_range(0.5..8.0),
    }
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn softmax_retrieve(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], beta: f64, dv: usize) -> Vec<f64> {
    if keys.is_empty() {
        return vec![0.0; dv];
    }
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| beta * k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    (0..dv)
        .map(|j| w.iter().zip(values).map(|(wi, v)| wi * v[j]).sum::<f64>() / z)
        .collect()
}

#[test]
fn keys_match_closed_form_leaky_sum() {
    let mut r = rng(1);
    for _ in 0..20 {
        let p = random_params(&mut r, 4, 3, 2);
        let x = random_matrix(&mut r, 9, 4);
        let keys = extract_keys(&x, &p).unwrap();
        for t in 0..9 {
            let mut acc = vec![0.0; 3];
            for s in 0..=t {
                let f = p.lambda_phi.powi((t - s) as i32);
                for (a, b) in acc.iter_mut().zip(matvec(&p.w_phi, x.row(s))) {
                    *a += f * b;
                }
            }
            let want = normalize(&acc);
            for (a, b) in keys.row(t).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            let n: f64 = keys.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn no_leak_keys_are_normalized_projections() {
    let mut r = rng(2);
    let mut p = random_params(&mut r, 3, 3, 3);
    p.lambda_phi = 0.0;
    p.lambda_psi = 0.0;
    let x = random_matrix(&mut r, 5, 3);
    let keys = extract_keys(&x, &p).unwrap();
    let values = extract_values(&x, &p).unwrap();
    assert_eq!(values.rows(), 4);
    let close = |a: &[f64], b: Vec<f64>| a.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-15);
    for t in 0..5 {
        assert!(close(keys.row(t), normalize(&matvec(&p.w_phi, x.row(t)))));
    }
    for t in 0..4 {
        assert!(close(values.row(t), normalize(&matvec(&p.w_psi, x.row(t)))));
    }
}

#[test]
fn values_depend_only_on_current_and_next_input() {
    let mut r = rng(3);
    let p = random_params(&mut r, 3, 2, 3);
    let x = random_matrix(&mut r, 8, 3);
    let base = extract_values(&x, &p).unwrap();
    let mut y = x.clone();
    for v in y.row_mut(4) {
        *v += 5.0;
    }
    let moved = extract_values(&y, &p).unwrap();
    for t in 0..7 {
        let same = base.row(t) == moved.row(t);
        assert_eq!(same, t != 3 && t != 4, "value {t}");
    }
}

#[test]
fn outputs_match_unrolled_retrieval() {
    let mut r = rng(4);
    let p = random_params(&mut r, 3, 4, 2);
    let x = random_matrix(&mut r, 10, 3);
    let keys = extract_keys(&x, &p).unwrap();
    let values = extract_values(&x, &p).unwrap();
    let y = contextual_forward(&x, &p).unwrap();
    let kv: Vec<Vec<f64>> = (0..10).map(|t| keys.row(t).to_vec()).collect();
    let vv: Vec<Vec<f64>> = (0..9).map(|t| values.row(t).to_vec()).collect();
    for t in 0..10 {
        let want = softmax_retrieve(&kv[t], &kv[..t], &vv[..t], p.beta, 2);
        for (a, b) in y.row(t).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn streaming_matches_batch_and_stores_one_pair_per_step() {
    let mut r = rng(5);
    let p = random_params(&mut r, 3, 3, 2);
    let x = random_matrix(&mut r, 12, 3);
    let batch = contextual_forward(&x, &p).unwrap();
    let mut unit = StreamingContextualUnit::new(&p).unwrap();
    for t in 0..12 {
        let y = unit.step(x.row(t)).unwrap();
        assert_eq!(unit.memory().len(), t);
        for (a, b) in y.iter().zip(batch.row(t)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn memory_state_truncates() {
    let mut m = MemoryState::new();
    assert!(m.retrieve(&[1.0], 1.0, 2).unwrap().iter().all(|v| *v == 0.0));
    m.push(vec![1.0], vec![2.0, 3.0]);
    m.push(vec![-1.0], vec![0.0, 0.0]);
    m.truncate(1);
    assert_eq!(m.len(), 1);
    assert_eq!(m.retrieve(&[1.0], 3.0, 2).unwrap(), vec![2.0, 3.0]);
}

fn complex_pair(v: Complex64) -> Vec<f64> {
    vec![v.re, v.im]
}

#[test]
fn period_two_sequence_is_predicted() {
    // Moons-style features on a scalar complex sequence a, b, a, b, ...
    // Logits use the real dot of (re, im), i.e. Re of the Hermitian product.
    let a = Complex64::new(1.0, 0.0);
    let b = Complex64::new(0.0, 1.0);
    let seq: Vec<ComplexVector> = (0..6)
        .map(|t| ComplexVector::from_values(&[if t % 2 == 0 { a } else { b }]))
        .collect();
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for t in 0..seq.len() {
        keys.push(complex_pair(seq[t].get(0)));
        if t + 1 < seq.len() {
            values.push(complex_pair(seq[t + 1].get(0)));
        }
    }
    for t in 2..5 {
        let y = softmax_retrieve(&keys[t], &keys[..t], &values[..t], 50.0, 2);
        let next = complex_pair(seq[t + 1].get(0));
        let err = ((y[0] - next[0]).powi(2) + (y[1] - next[1]).powi(2)).sqrt();
        assert!(err < 1e-3, "t={t} err={err}");
    }
    // Hand-unrolled step 3: weights e^50 on (a -> b) and e^0 on (b -> a).
    let y3 = softmax_retrieve(&keys[2], &keys[..2], &values[..2], 50.0, 2);
    let w = 50f64.exp() / (50f64.exp() + 1.0);
    assert!((y3[0] - (1.0 - w)).abs() < 1e-15);
    assert!((y3[1] - w).abs() < 1e-15);
}

#[test]
fn exact_recall_with_identity_extractors() {
    let mut r = rng(6);
    let d = 4;
    let p = ContextualUnitParams {
        w_phi: Tensor::identity(d),
        w_psi: Tensor::identity(d),
        lambda_phi: 0.0,
        lambda_psi: 1.0,
        beta: 50.0,
    };
    // Unit observations pairwise at distance >= 0.5, with the last repeating
    // the one at position 3.
    let mut obs: Vec<Vec<f64>> = Vec::new();
    while obs.len() < 8 {
        let c = normalize(&(0..d).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let far = obs
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= 0.5);
        if far {
            obs.push(c);
        }
    }
    obs.push(obs[3].clone());
    let x = Tensor::from_rows(&obs).unwrap();
    let y = contextual_forward(&x, &p).unwrap();
    let recalled = extract_values(&x, &p).unwrap();
    let err: f64 = y
        .row(8)
        .iter()
        .zip(recalled.row(3))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let bound = 1.0 * 9.0 * (-50.0f64 * 0.25 / 2.0).exp();
    assert!(err < bound, "err {err} bound {bound}");
}

fn persistent(r: &mut ChaCha8Rng, n_m: usize, beta: f64) -> PersistentUnitParams {
    let keys: Vec<Vec<f64>> = (0..n_m)
        .map(|_| normalize(&(0..3).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    PersistentUnitParams {
        w_phi: random_matrix(r, 3, 2),
        stored_keys: Tensor::from_rows(&keys).unwrap(),
        stored_values: random_matrix(r, n_m, 4),
        beta,
        lambda_phi: 0.0,
    }
}

#[test]
fn persistent_single_slot_returns_its_value() {
    let mut r = rng(7);
    let p = persistent(&mut r, 1, 3.0);
    let y = persistent_forward(&random_matrix(&mut r, 5, 2), &p).unwrap();
    for t in 0..5 {
        for (a, b) in y.row(t).iter().zip(p.stored_values.row(0)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn persistent_zero_beta_is_mean() {
    let mut r = rng(8);
    let p = persistent(&mut r, 5, 0.0);
    let y = persistent_forward(&random_matrix(&mut r, 3, 2), &p).unwrap();
    for j in 0..4 {
        let mean = (0..5).map(|i| p.stored_values.get2(i, j)).sum::<f64>() / 5.0;
        for t in 0..3 {
            assert!((y.get2(t, j) - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn persistent_orthogonal_keys_weights() {
    let p = PersistentUnitParams {
        w_phi: Tensor::identity(2),
        stored_keys: Tensor::identity(2),
        stored_values: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        beta: 1.0,
        lambda_phi: 0.0,
    };
    let y = persistent_forward(&Tensor::matrix(1, 2, vec![2.0, 0.0]).unwrap(), &p).unwrap();
    let e = std::f64::consts::E;
    assert!((y.get2(0, 0) - e / (e + 1.0)).abs() < 1e-15);
    assert!((y.get2(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
}

#[test]
fn persistent_unit_is_a_softmax_hidden_layer() {
    let mut r = rng(9);
    for _ in 0..10 {
        let beta = r.random_range(0.1..10.0);
        let p = persistent(&mut r, 6, beta);
        let x = random_matrix(&mut r, 4, 2);
        let y = persistent_forward(&x, &p).unwrap();
        for t in 0..4 {
            let q = normalize(&matvec(&p.w_phi, x.row(t)));
            // hidden = softmax(beta K q); out = V^T hidden
            let hidden_pre: Vec<f64> = matvec(&p.stored_keys, &q).iter().map(|h| p.beta * h).collect();
            let m = hidden_pre.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = hidden_pre.iter().map(|h| (h - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..4 {
                let out: f64 = (0..6).map(|i| e[i] / z * p.stored_values.get2(i, j)).sum();
                assert!((y.get2(t, j) - out).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn persistent_rejects_mismatched_storage() {
    let mut r = rng(10);
    let mut p = persistent(&mut r, 3, 1.0);
    p.stored_values = random_matrix(&mut r, 2, 4);
    assert!(persistent_forward(&random_matrix(&mut r, 2, 2), &p).is_err());
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn identity3() -> [[Complex64; 3]; 3] {
    let mut w = [[c(0.0, 0.0); 3]; 3];
    for (i, row) in w.iter_mut().enumerate() {
        row[i] = c(1.0, 0.0);
    }
    w
}

#[test]
fn moons_extractor_head_split() {
    let xs: Vec<ComplexVector> = (0..4)
        .map(|t| ComplexVector::from_values(&[c(t as f64, 1.0), c(-1.0, t as f64), c(0.5, 0.25 * t as f64)]))
        .collect();
    let one = moons_linear_extractors(&xs, &identity3(), &identity3(), 1).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].keys, xs);
    assert_eq!(one[0].values, xs[1..].to_vec());
    let three = moons_linear_extractors(&xs, &identity3(), &identity3(), 3).unwrap();
    for (h, head) in three.iter().enumerate() {
        assert_eq!(head.keys.len(), 4);
        for (k, x) in head.keys.iter().zip(&xs) {
            assert_eq!(k.to_values(), vec![x.get(h)]);
        }
        assert_eq!(head.values.len(), 3);
    }
    assert!(moons_linear_extractors(&xs, &identity3(), &identity3(), 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn suffix_perturbation_leaves_prefix_outputs(seed in any::<u64>(), cut in 1usize..9, d in 2usize..5) {
        let mut r = rng(seed);
        let p = random_params(&mut r, d, 3, 2);
        let x = random_matrix(&mut r, 10, d);
        let mut y = x.clone();
        for t in cut..10 {
            for v in y.row_mut(t) {
                *v = r.random_range(-3.0..3.0);
            }
        }
        let a = contextual_forward(&x, &p).unwrap();
        let b = contextual_forward(&y, &p).unwrap();
        for t in 0..cut {
            for (u, v) in a.row(t).iter().zip(b.row(t)) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn streaming_memory_length_is_steps_minus_one(seed in any::<u64>(), steps in 1usize..15) {
        let mut r = rng(seed);
        let p = random_params(&mut r, 2, 2, 2);
        let mut unit = StreamingContextualUnit::new(&p).unwrap();
        for _ in 0..steps {
            let x: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
            unit.step(&x).unwrap();
        }
        prop_assert_eq!(unit.memory().len(), steps - 1);
    }
}
