use mosaic_core::numerics::{attend, attend_distance_form, attend_var, grad_check, normalize, Mask, Tape, Tensor, Var};
use mosaic_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn unit(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    normalize(&random_vec(r, n))
}

/// Independent scalar softmax used as the oracle for retrieval examples.
fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / z).collect()
}

#[test]
fn single_pair_returns_its_value() {
    let out = attend(&[0.3, -0.2], &[vec![1.0, 0.0]], &[vec![4.0, -1.5, 2.0]], 7.0, 3).unwrap();
    assert_eq!(out, vec![4.0, -1.5, 2.0]);
}

#[test]
fn symmetric_query_averages() {
    let s = 1.0 / 2f64.sqrt();
    for beta in [0.0, 1.0, 50.0] {
        let out = attend(
            &[s, s],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0], vec![3.0]],
            beta,
            1,
        )
        .unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15);
    }
}

#[test]
fn basis_query_matches_scalar_softmax() {
    let w = softmax_oracle(&[1.0, 0.0]);
    let expected = w[0] * 1.0 + w[1] * 3.0;
    let out = attend(
        &[1.0, 0.0],
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[vec![1.0], vec![3.0]],
        1.0,
        1,
    )
    .unwrap();
    assert!((out[0] - expected).abs() < 1e-15);
    assert!((out[0] - 1.537_882_842_739_990_6).abs() < 1e-12);
}

#[test]
fn empty_memory_is_zero() {
    let out = attend(&[1.0, 0.0], &[], &[], 3.0, 4).unwrap();
    assert_eq!(out, vec![0.0; 4]);
}

#[test]
fn mismatched_inputs_are_contract_errors() {
    assert!(attend(&[1.0, 0.0], &[vec![1.0]], &[vec![1.0]], 1.0, 1).is_err());
    assert!(attend(&[1.0], &[vec![1.0], vec![0.0]], &[vec![1.0]], 1.0, 1).is_err());
    assert!(attend(&[f64::NAN], &[vec![1.0]], &[vec![1.0]], 1.0, 1).is_err());
    assert!(attend(&[1.0], &[vec![1.0]], &[vec![1.0]], -1.0, 1).is_err());
    assert!(attend_distance_form(&[1.0], &[], &[], 1.0).is_err());
}

#[test]
fn distance_form_edge_cases() {
    let out = attend_distance_form(&[0.2], &[vec![5.0]], &[vec![7.0, 1.0]], 3.0).unwrap();
    assert_eq!(out, vec![7.0, 1.0]);
    let out = attend_distance_form(
        &[0.2],
        &[vec![5.0], vec![-1.0], vec![0.0]],
        &[vec![1.0], vec![2.0], vec![6.0]],
        0.0,
    )
    .unwrap();
    assert!((out[0] - 3.0).abs() < 1e-15);
}

#[test]
fn distance_form_equals_dot_form_with_doubled_bandwidth() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let d = r.random_range(1..8);
        let n = r.random_range(1..12);
        let dv = r.random_range(1..5);
        let q = unit(&mut r, d);
        let keys: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, d)).collect();
        let values: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, dv)).collect();
        let beta = r.random_range(0.0..20.0);
        let a = attend_distance_form(&q, &keys, &values, beta).unwrap();
        let b = attend(&q, &keys, &values, 2.0 * beta, dv).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn large_beta_selects_nearest_key() {
    let mut r = rng(5);
    let mut tried = 0;
    while tried < 200 {
        let d = 4;
        let n = 6;
        let q = unit(&mut r, d);
        let keys: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, d)).collect();
        let mut dots: Vec<(f64, usize)> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.iter().zip(&q).map(|(a, b)| a * b).sum(), i))
            .collect();
        dots.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        // well separated: the best logit beats the runner-up by a margin
        if dots[0].0 - dots[1].0 < 0.01 {
            continue;
        }
        tried += 1;
        let values: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, 3)).collect();
        let out = attend(&q, &keys, &values, 1e4, 3).unwrap();
        let best = &values[dots[0].1];
        for (x, y) in out.iter().zip(best) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn output_in_convex_hull(seed in 0u64..10_000, n in 1usize..10, beta in 0.0f64..100.0) {
        let mut r = rng(seed);
        let q = random_vec(&mut r, 3);
        let keys: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, 3)).collect();
        let values: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, 2)).collect();
        let out = attend(&q, &keys, &values, beta, 2).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let max = values.iter().map(|v| norm(v)).fold(0.0, f64::max);
        prop_assert!(norm(&out) <= max + 1e-12);
    }

    #[test]
    fn permutation_invariant(seed in 0u64..10_000, n in 1usize..10, beta in 0.0f64..50.0) {
        let mut r = rng(seed);
        let q = unit(&mut r, 4);
        let keys: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, 4)).collect();
        let values: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, 2)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let pk: Vec<Vec<f64>> = order.iter().map(|&i| keys[i].clone()).collect();
        let pv: Vec<Vec<f64>> = order.iter().map(|&i| values[i].clone()).collect();
        let a = attend(&q, &keys, &values, beta, 2).unwrap();
        let b = attend(&q, &pk, &pv, beta, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

// ------------------------------------------------------------- backward

#[test]
fn square_and_constant_gradients() {
    let mut t = Tape::new();
    let w = t.param(Tensor::scalar(3.0));
    let sq = t.mul(w, w);
    let g = t.backward(sq).unwrap();
    assert_eq!(g.wrt(w).item(), 6.0);

    let mut t = Tape::new();
    let w = t.param(Tensor::scalar(3.0));
    let c = t.constant(Tensor::scalar(5.0));
    let s = t.sum(c);
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(w).item(), 0.0);
}

#[test]
fn non_scalar_output_is_rejected() {
    let mut t = Tape::new();
    let w = t.param(Tensor::vector(vec![1.0, 2.0]));
    let y = t.scale(w, 2.0);
    assert!(t.backward(y).is_err());
}

#[test]
fn adjoints_visit_in_reverse_recording_order() {
    let mut t = Tape::new();
    let a = t.param(Tensor::scalar(2.0));
    let b = t.param(Tensor::scalar(-1.0));
    let c = t.mul(a, b);
    let d = t.add(c, a);
    let e = t.sigmoid(d);
    let g = t.backward(e).unwrap();
    let v = g.visited();
    assert!(v.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(v[0], e.index());
}

#[test]
fn beta_gradient_matches_finite_difference() {
    let mut r = rng(3);
    let q = unit(&mut r, 3);
    let keys: Vec<f64> = (0..3).flat_map(|_| unit(&mut r, 3)).collect();
    let values: Vec<f64> = random_vec(&mut r, 6);
    let eval = |beta: f64| -> (f64, f64) {
        let mut t = Tape::new();
        let qv = t.constant(Tensor::vector(q.clone()));
        let kv = t.constant(Tensor::matrix(3, 3, keys.clone()).unwrap());
        let vv = t.constant(Tensor::matrix(3, 2, values.clone()).unwrap());
        let b = t.param(Tensor::vector(vec![beta]));
        let y = attend_var(&mut t, qv, kv, vv, b).unwrap();
        // first output component
        let pick = t.gather_cols(y, &[0]);
        let s = t.sum(pick);
        let g = t.backward(s).unwrap();
        (t.value(s).item(), g.wrt(b).item())
    };
    let beta = 1.7;
    let h = 1e-5;
    let (_, analytic) = eval(beta);
    let numeric = (eval(beta + h).0 - eval(beta - h).0) / (2.0 * h);
    assert!(
        (analytic - numeric).abs() / analytic.abs().max(1e-12) < 1e-6,
        "{analytic} {numeric}"
    );
}

/// Builds `sum(op(inputs) * probe)` so every output entry contributes.
fn check_primitive(
    name: &str,
    shapes: &[Vec<usize>],
    positive: bool,
    op: impl Fn(&mut Tape, &[Var]) -> Var,
    seed: u64,
) {
    let mut r = rng(seed);
    let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
    let total: usize = sizes.iter().sum();
    let point: Vec<f64> = (0..total)
        .map(|_| {
            if positive {
                r.random_range(0.2..1.5)
            } else {
                r.random_range(-1.0..1.0)
            }
        })
        .collect();
    let probe_seed = r.random::<u64>();
    let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut t = Tape::new();
        let mut vars = Vec::new();
        let mut off = 0;
        for (s, &n) in shapes.iter().zip(&sizes) {
            vars.push(t.param(Tensor::new(s.clone(), x[off..off + n].to_vec())?));
            off += n;
        }
        let out = op(&mut t, &vars);
        let mut pr = rng(probe_seed);
        let shape = t.value(out).shape().to_vec();
        let n = t.value(out).len();
        let probe = t.constant(Tensor::new(shape, random_vec(&mut pr, n))?);
        let prod = t.mul(out, probe);
        let loss = t.sum(prod);
        let g = t.backward(loss)?;
        let grad = vars.iter().flat_map(|&v| g.wrt(v).into_data()).collect();
        Ok((t.value(loss).item(), grad))
    };
    let rep = grad_check(f, &point, 1e-5).unwrap();
    assert!(rep.passes(1e-4), "{name}: {rep:?}");
}

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..5 {
        check_primitive(
            "matmul",
            &[vec![3, 4], vec![4, 2]],
            false,
            |t, v| t.matmul(v[0], v[1]),
            seed,
        );
        check_primitive(
            "matmul_ta",
            &[vec![4, 3], vec![4, 2]],
            false,
            |t, v| t.matmul_t(v[0], v[1], true, false),
            seed,
        );
        check_primitive(
            "matmul_tb",
            &[vec![3, 4], vec![2, 4]],
            false,
            |t, v| t.linear(v[0], v[1]),
            seed,
        );
        check_primitive(
            "matmul_tt",
            &[vec![4, 3], vec![2, 4]],
            false,
            |t, v| t.matmul_t(v[0], v[1], true, true),
            seed,
        );
        check_primitive("add", &[vec![2, 3], vec![2, 3]], false, |t, v| t.add(v[0], v[1]), seed);
        check_primitive("sub", &[vec![2, 3], vec![2, 3]], false, |t, v| t.sub(v[0], v[1]), seed);
        check_primitive("mul", &[vec![2, 3], vec![2, 3]], false, |t, v| t.mul(v[0], v[1]), seed);
        check_primitive(
            "add_row",
            &[vec![3, 4], vec![4]],
            false,
            |t, v| t.add_row(v[0], v[1]),
            seed,
        );
        check_primitive("scale", &[vec![5]], false, |t, v| t.scale(v[0], -2.5), seed);
        check_primitive("mean", &[vec![2, 3]], false, |t, v| t.mean(v[0]), seed);
        check_primitive("sigmoid", &[vec![6]], false, |t, v| t.sigmoid(v[0]), seed);
        check_primitive("softplus", &[vec![6]], false, |t, v| t.softplus(v[0]), seed);
        check_primitive("gelu", &[vec![3, 3]], false, |t, v| t.gelu(v[0]), seed);
        check_primitive(
            "layer_norm",
            &[vec![3, 5], vec![5], vec![5]],
            false,
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
            seed,
        );
        check_primitive(
            "normalize_heads",
            &[vec![4, 6]],
            false,
            |t, v| t.normalize_heads(v[0], 2),
            seed,
        );
        check_primitive(
            "leaky_average",
            &[vec![5, 4], vec![2]],
            false,
            |t, v| t.leaky_average(v[0], v[1], 2),
            seed,
        );
        check_primitive(
            "shift_mix",
            &[vec![5, 4], vec![2]],
            false,
            |t, v| t.shift_mix(v[0], v[1], 2),
            seed,
        );
        for mask in [Mask::None, Mask::Causal, Mask::StrictCausal] {
            check_primitive(
                "attention",
                &[vec![5, 4], vec![5, 4], vec![5, 6], vec![2]],
                false,
                move |t, v| t.attention(v[0], v[1], v[2], v[3], 2, mask),
                seed,
            );
        }
        check_primitive(
            "attention_short_values",
            &[vec![5, 2], vec![4, 2], vec![4, 3], vec![1]],
            false,
            |t, v| t.attention(v[0], v[1], v[2], v[3], 1, Mask::StrictCausal),
            seed,
        );
        check_primitive(
            "self_attention_shared_qk",
            &[vec![6, 4], vec![6, 4], vec![2]],
            false,
            |t, v| t.attention(v[0], v[0], v[1], v[2], 2, Mask::StrictCausal),
            seed,
        );
        check_primitive(
            "embedding",
            &[vec![5, 3]],
            false,
            |t, v| t.embedding(v[0], &[4, 0, 4, 2]),
            seed,
        );
        check_primitive(
            "gather_cols",
            &[vec![3, 4]],
            false,
            |t, v| t.gather_cols(v[0], &[3, 1, 1]),
            seed,
        );
        check_primitive(
            "slice_rows",
            &[vec![5, 2]],
            false,
            |t, v| t.slice_rows(v[0], 1, 4),
            seed,
        );
        check_primitive(
            "concat_cols",
            &[vec![3, 2], vec![3, 1]],
            false,
            |t, v| t.concat_cols(&[v[0], v[1]]),
            seed,
        );
        check_primitive(
            "cross_entropy",
            &[vec![4, 5]],
            false,
            |t, v| t.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)]).unwrap(),
            seed,
        );
        check_primitive(
            "clipped_sq_err",
            &[vec![4, 3], vec![4, 3]],
            false,
            |t, v| t.clipped_sq_err(v[0], v[1], 2.0, &[false, true, true, true]),
            seed,
        );
    }
}

#[test]
fn attention_rows_without_memory_are_zero() {
    let mut t = Tape::new();
    let q = t.constant(Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]).unwrap());
    let v = t.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
    let b = t.constant(Tensor::vector(vec![1.0]));
    let y = t.attention(q, q, v, b, 1, Mask::StrictCausal);
    assert_eq!(t.value(y).row(0), &[0.0]);
    assert_eq!(t.value(y).row(1), &[1.0]);
    let (w, heads, tq, tk) = t.attention_weights(y).unwrap();
    assert_eq!((heads, tq, tk), (1, 3, 3));
    for i in 1..3 {
        let s: f64 = w[i * 3..i * 3 + 3].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
