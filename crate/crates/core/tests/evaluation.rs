use mosaic_core::datasets::{
    exact_next_token_distribution, gen_induction_set, gen_moon_sequence_len, gen_pfa_pool, sample_icl_sequence,
    IclConfig, IclSequence, InductionConfig, MoonSequence, MoonSystem, PfaConfig, PfaSpec, PfaSplit,
};
use mosaic_core::evaluation::{
    attention_profile, bandwidth, icl_eval_with, induction_accuracy, moons_error_curve, score_prediction, tvd,
    unit_attention_profile, ErrorCurve, PeriodicOracle, RepeatLast,
};
use mosaic_core::memory_units::{extract_keys, ContextualUnitParams};
use mosaic_core::networks::{build_lm, Family, LmConfig};
use mosaic_core::numerics::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seqs(periods: [u64; 3], n: usize, len: usize) -> Vec<MoonSequence> {
    (0..n)
        .map(|i| {
            let s = MoonSystem::new(periods, [0.3 * i as f64, 1.0, 2.0]).unwrap();
            gen_moon_sequence_len(&s, len)
        })
        .collect()
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn unit(r: &mut ChaCha8Rng, d: usize, lambda: f64, beta: f64) -> ContextualUnitParams {
    ContextualUnitParams {
        w_phi: random_matrix(r, d, d),
        w_psi: random_matrix(r, d, d),
        lambda_phi: lambda,
        lambda_psi: 1.0,
        beta,
    }
}

#[test]
fn oracle_forecaster_has_zero_error() {
    let s = seqs([3, 5, 7], 4, 80);
    let c = moons_error_curve(&PeriodicOracle, &s, 1..=40, 25).unwrap();
    assert_eq!(c.points.len(), 40);
    assert!(c.points.iter().all(|p| p.1 == 0.0));
    assert_eq!(c.lcm, 105);
}

#[test]
fn repeat_last_on_alternating_moons() {
    // Period 2 from phase 0 alternates between -1 and 1, so repeating the
    // last value misses by 2 per moon on every other step.
    let s = [gen_moon_sequence_len(
        &MoonSystem::new([2, 2, 2], [0.0; 3]).unwrap(),
        20,
    )];
    let c = moons_error_curve(&RepeatLast, &s, 1..=10, 2).unwrap();
    for (_, e) in &c.points {
        assert!((e - 3.0).abs() < 1e-12);
    }
    let one = moons_error_curve(&RepeatLast, &s, 1..=10, 1).unwrap();
    assert!(one.points.iter().all(|p| (p.1 - 6.0).abs() < 1e-12));
}

#[test]
fn error_curve_contracts() {
    let mut s = seqs([3, 5, 7], 1, 50);
    assert!(moons_error_curve(&RepeatLast, &s, 1..=30, 25).is_err());
    assert!(moons_error_curve(&RepeatLast, &s, 0..=10, 5).is_err());
    assert!(moons_error_curve(&RepeatLast, &[], 1..=10, 5).is_err());
    s.extend(seqs([2, 3, 5], 1, 50));
    assert!(moons_error_curve(&RepeatLast, &s, 1..=10, 5).is_err());
}

#[test]
fn window_mean_uses_half_open_windows() {
    let c = ErrorCurve {
        points: (1..=10).map(|t| (t, t as f64)).collect(),
        periods: [2, 3, 5],
        lcm: 30,
    };
    assert_eq!(c.window_mean(2, 5), Some(4.0));
    assert_eq!(c.window_mean(0, 1), Some(1.0));
    assert_eq!(c.window_mean(10, 20), None);
    assert_eq!(c.at(7), Some(7.0));
    assert_eq!(c.at(11), None);
    let csv = c.to_csv();
    assert!(csv.starts_with("context_length,mean_error\n1,1.0\n"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn tvd_by_hand() {
    assert_eq!(tvd(&[0.5, 0.5], &[1.0, 0.0]), 0.5);
    assert_eq!(tvd(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
    assert_eq!(tvd(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]), 1.0);
}

#[test]
fn score_prediction_renormalizes_and_accepts_ties() {
    let (ok, d) = score_prediction(&[2.0, 2.0, 0.0], &[0.5, 0.25, 0.25]);
    assert!(ok);
    assert!((d - 0.25).abs() < 1e-15);
    let (ok, _) = score_prediction(&[0.1, 0.2, 0.7], &[0.4, 0.4, 0.2]);
    assert!(!ok);
    let (ok, _) = score_prediction(&[0.1, 0.8, 0.1], &[0.4, 0.4, 0.2]);
    assert!(ok);
}

fn icl_items(n: usize) -> (Vec<PfaSpec>, Vec<(usize, IclSequence)>) {
    let pfas = gen_pfa_pool(4, PfaSplit::Test, 5, &PfaConfig::default()).unwrap();
    let items = (0..n)
        .map(|i| {
            (
                i % 5,
                sample_icl_sequence(&pfas[i % 5], i as u64, &IclConfig::default()).unwrap(),
            )
        })
        .collect();
    (pfas, items)
}

#[test]
fn exact_predictor_scores_perfectly() {
    let (pfas, items) = icl_items(40);
    let refs: Vec<_> = items.iter().map(|(j, s)| (&pfas[*j], s)).collect();
    let score = icl_eval_with(&refs, |p, s| exact_next_token_distribution(p, s.last_prefix())).unwrap();
    assert_eq!(score.accuracy, 1.0);
    assert!(score.tvd < 1e-12);
    assert_eq!(score.items, 40);
}

#[test]
fn uniform_predictor_tvd_matches_direct_computation() {
    let (pfas, items) = icl_items(20);
    let refs: Vec<_> = items.iter().map(|(j, s)| (&pfas[*j], s)).collect();
    let score = icl_eval_with(&refs, |p, _| Ok(vec![1.0; p.alphabet])).unwrap();
    let mut want = 0.0;
    for (p, s) in &refs {
        let exact = exact_next_token_distribution(p, s.last_prefix()).unwrap();
        let u = 1.0 / p.alphabet as f64;
        want += exact.iter().map(|e| (e - u).abs()).sum::<f64>() / 2.0;
    }
    assert!((score.tvd - want / 20.0).abs() < 1e-12);
    assert!(icl_eval_with(&refs, |_, _| Ok(vec![1.0; 3])).is_err());
    assert!(icl_eval_with(&[], |_, _| Ok(vec![])).is_err());
}

#[test]
fn copying_the_previous_successor_solves_induction() {
    let samples = gen_induction_set(9, "eval", &InductionConfig::default(), 30).unwrap();
    let copy = induction_accuracy(&samples, |s| {
        Ok(s.queries
            .iter()
            .map(|&q| {
                let a = s.tokens[q];
                let prev = s.tokens[..q].iter().rposition(|&t| t == a).unwrap();
                s.tokens[prev + 1]
            })
            .collect())
    })
    .unwrap();
    assert_eq!(copy, 1.0);
    let wrong = induction_accuracy(&samples, |s| Ok(s.labels.iter().map(|l| l + 1).collect())).unwrap();
    assert_eq!(wrong, 0.0);
    assert!(induction_accuracy(&samples, |_| Ok(vec![])).is_err());
}

#[test]
fn bandwidth_by_hand() {
    assert_eq!(bandwidth(&[0.5, 0.3, 0.2]), 1);
    assert_eq!(bandwidth(&[0.3, 0.3, 0.4]), 2);
    assert_eq!(bandwidth(&[0.25; 4]), 2);
    assert_eq!(bandwidth(&[0.1, 0.1, 0.1, 0.1, 0.6]), 1);
    assert_eq!(bandwidth(&[]), 0);
}

#[test]
fn unit_profile_matches_direct_softmax() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let p = unit(&mut r, 4, 0.5, 3.0);
    let x = random_matrix(&mut r, 9, 4);
    let prof = unit_attention_profile(&p, std::slice::from_ref(&x)).unwrap();
    let k = extract_keys(&x, &p).unwrap();
    let last = k.row(8);
    let scores: Vec<f64> = (0..8)
        .map(|j| p.beta * k.row(j).iter().zip(last).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    for (j, s) in scores.iter().enumerate() {
        assert!((prof.mean[j] - s.exp() / z).abs() < 1e-12, "column {j}");
    }
    assert_eq!(prof.relative_positions, (-8..0).collect::<Vec<i64>>());
}

#[test]
fn vanishing_beta_gives_a_flat_profile() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let p = unit(&mut r, 3, 0.0, 1e-12);
    let inputs: Vec<Tensor> = (0..3).map(|_| random_matrix(&mut r, 11, 3)).collect();
    let prof = unit_attention_profile(&p, &inputs).unwrap();
    assert!(prof.mean.iter().all(|w| (w - 0.1).abs() < 1e-10));
    assert_eq!(bandwidth(&prof.mean), 5);
}

#[test]
fn model_profiles_are_distributions() {
    let cfg = LmConfig {
        vocab: 11,
        d_model: 16,
        n_blocks: 2,
        n_heads: 2,
        max_len: 16,
        ..LmConfig::default()
    };
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let seqs: Vec<Vec<usize>> = (0..4)
        .map(|_| (0..10).map(|_| r.random_range(0..11)).collect())
        .collect();
    for (family, width) in [(Family::Mosaic, 9), (Family::Transformer, 10)] {
        let m = build_lm(family, &cfg, 1).unwrap();
        for layer in 0..2 {
            let prof = attention_profile(&m, &seqs, layer).unwrap();
            assert_eq!(prof.heads.len(), 2);
            for row in prof.heads.iter().chain(std::iter::once(&prof.mean)) {
                assert_eq!(row.len(), width);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(
                *prof.relative_positions.last().unwrap(),
                if width == 10 { 0 } else { -1 }
            );
        }
        assert!(attention_profile(&m, &seqs, 2).is_err());
        assert!(attention_profile(&m, &[vec![1, 2], vec![1, 2, 3]], 0).is_err());
    }
}

#[test]
fn profile_csv_lists_every_head_and_the_mean() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let p = unit(&mut r, 2, 0.2, 1.0);
    let prof = unit_attention_profile(&p, &[random_matrix(&mut r, 5, 2)]).unwrap();
    let csv = prof.to_csv();
    assert!(csv.starts_with("relative_position,head_id,weight\n-4,0,"));
    assert_eq!(csv.lines().filter(|l| l.contains(",all,")).count(), 4);
}

proptest! {
    #[test]
    fn unit_profiles_sum_to_one(seed in any::<u64>(), lambda in 0.0f64..0.95, beta in 0.01f64..20.0, len in 2usize..12) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = unit(&mut r, 3, lambda, beta);
        let inputs: Vec<Tensor> = (0..2).map(|_| random_matrix(&mut r, len, 3)).collect();
        let prof = unit_attention_profile(&p, &inputs).unwrap();
        prop_assert_eq!(prof.mean.len(), len - 1);
        prop_assert!((prof.mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(prof.mean.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn bandwidth_is_permutation_invariant_and_bounded(w in proptest::collection::vec(0.0f64..1.0, 1..20), seed in any::<u64>()) {
        let mut v = w.clone();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, r.random_range(0..=i));
        }
        let b = bandwidth(&w);
        prop_assert_eq!(b, bandwidth(&v));
        prop_assert!(b >= 1 && b <= w.len());
    }

    #[test]
    fn tvd_is_a_bounded_symmetric_distance(a in proptest::collection::vec(0.01f64..1.0, 5), b in proptest::collection::vec(0.01f64..1.0, 5)) {
        let n = |x: &[f64]| { let z: f64 = x.iter().sum(); x.iter().map(|v| v / z).collect::<Vec<_>>() };
        let (p, q) = (n(&a), n(&b));
        let d = tvd(&p, &q);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - tvd(&q, &p)).abs() < 1e-15);
        prop_assert!(tvd(&p, &p) == 0.0);
    }
}
