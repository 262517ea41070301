use proptest::prelude::*;

use siman_core::binarize::*;

mod common;
use common::exhaustive_best;

fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len).prop_filter("nonzero", |v| v.iter().any(|&x| x != 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn optimal_matches_exhaustive_search(v in weights(14)) {
        let w = WeightVector::new(v.clone()).unwrap();
        let code = optimal_binarize(&w).unwrap();
        let got = objective_value(&w, &code).unwrap();
        prop_assert!((got - exhaustive_best(&v)).abs() <= 1e-12);
        let brute = brute_force_binarize(&w).unwrap();
        prop_assert!((objective_value(&w, &brute).unwrap() - got).abs() <= 1e-12);
    }

    #[test]
    fn optimal_code_is_a_magnitude_prefix(v in weights(40)) {
        let w = WeightVector::new(v.clone()).unwrap();
        let code = optimal_binarize(&w).unwrap();
        let min_on = v.iter().zip(code.bits()).filter(|(_, &b)| b == 1).map(|(x, _)| x.abs()).fold(f64::INFINITY, f64::min);
        let max_off = v.iter().zip(code.bits()).filter(|(_, &b)| b == 0).map(|(x, _)| x.abs()).fold(0.0, f64::max);
        prop_assert!(min_on >= max_off);
        prop_assert!(code.ones() >= 1);
    }

    #[test]
    fn scale_invariance(v in weights(30), s in 0.01f64..100.0) {
        let w = WeightVector::new(v.clone()).unwrap();
        let ws = WeightVector::new(v.iter().map(|x| x * s).collect()).unwrap();
        prop_assert_eq!(optimal_binarize(&w).unwrap().ones(), optimal_binarize(&ws).unwrap().ones());
        prop_assert_eq!(half_half_binarize(&w), half_half_binarize(&ws));
    }

    #[test]
    fn sign_flip_invariance(v in weights(30), flips in prop::collection::vec(any::<bool>(), 30)) {
        let w = WeightVector::new(v.clone()).unwrap();
        let f: Vec<f64> = v.iter().zip(&flips).map(|(x, &fl)| if fl { -x } else { *x }).collect();
        let wf = WeightVector::new(f).unwrap();
        prop_assert_eq!(optimal_binarize(&w).unwrap(), optimal_binarize(&wf).unwrap());
    }

    #[test]
    fn permutation_equivariance(v in weights(30), seed in any::<u64>()) {
        // distinct magnitudes so ties cannot reorder
        let v: Vec<f64> = v.iter().enumerate().map(|(i, x)| x.abs() + 1e-6 * i as f64 + 1e-3).collect();
        let n = v.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let w = WeightVector::new(v.clone()).unwrap();
        let wp = WeightVector::new(perm.iter().map(|&p| v[p]).collect()).unwrap();
        let (c, cp) = (optimal_binarize(&w).unwrap(), optimal_binarize(&wp).unwrap());
        let (h, hp) = (half_half_binarize(&w), half_half_binarize(&wp));
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(cp.bits()[i], c.bits()[p]);
            prop_assert_eq!(hp.bits()[i], h.bits()[p]);
        }
    }

    #[test]
    fn half_half_count(v in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let w = WeightVector::new(v.clone()).unwrap();
        prop_assert_eq!(half_half_binarize(&w).ones(), v.len().div_ceil(2));
    }

    #[test]
    fn quantization_error_identity(v in weights(50)) {
        // ||w||^2 sin^2(theta) == min_lambda ||lambda b - w||^2
        let w = WeightVector::new(v.clone()).unwrap();
        let s = sign_binarize_scaled(&w).to_f64();
        let qe = quantization_error(&v, &s).unwrap();
        let c = cosine(&v, &s);
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        prop_assert!((qe - norm2 * (1.0 - c * c)).abs() <= 1e-9 * norm2.max(1.0));
        // direct minimization: lambda* = <w,b>/<b,b>
        let lam = v.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.len() as f64;
        let direct: f64 = v.iter().zip(&s).map(|(a, b)| (lam * b - a).powi(2)).sum();
        prop_assert!((qe - direct).abs() <= 1e-9 * norm2.max(1.0));
    }

    #[test]
    fn sign_scale_is_mean_magnitude(v in weights(50)) {
        let w = WeightVector::new(v.clone()).unwrap();
        let s = sign_binarize_scaled(&w);
        let mean = v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        prop_assert!((s.scale - mean).abs() <= 1e-12 * mean.max(1.0));
        let expected: Vec<i8> = v.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect();
        prop_assert_eq!(&s.bits, &expected);
    }

    #[test]
    fn angle_bounds_monotone(k in 1usize..500, r in 0usize..500) {
        let r = r.min(k);
        let (lo, hi) = angle_bounds(k, r).unwrap();
        prop_assert!(0.0 <= lo && lo <= hi + 1e-12 && hi <= 90.0);
        if r < k {
            let (lo2, hi2) = angle_bounds(k, r + 1).unwrap();
            prop_assert!(lo2 >= lo && hi2 >= hi);
        }
    }

    #[test]
    fn optimal_beats_sign_and_half(v in weights(200)) {
        let w = WeightVector::new(v.clone()).unwrap();
        let opt = objective_value(&w, &optimal_binarize(&w).unwrap()).unwrap();
        let half = objective_value(&w, &half_half_binarize(&w)).unwrap();
        let s = sign_binarize_scaled(&w).to_f64();
        prop_assert!(opt + 1e-12 >= half);
        prop_assert!(opt + 1e-12 >= cosine(&v, &s));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&opt));
    }

    #[test]
    fn margin_sign_predicts_objective_step(v in weights(40), k in 1usize..40) {
        let w = WeightVector::new(v.clone()).unwrap();
        prop_assume!(k < v.len());
        let order = magnitude_rank(&v);
        let code_with = |m: usize| {
            let mut bits = vec![0u8; v.len()];
            for &i in &order[..m] { bits[i] = 1; }
            BinaryCode::from_bits(bits).unwrap()
        };
        let margin = inequality_margin(&w, k).unwrap();
        let step = objective_value(&w, &code_with(k + 1)).unwrap() - objective_value(&w, &code_with(k)).unwrap();
        if margin.abs() > 1e-9 {
            prop_assert_eq!(margin > 0.0, step < 0.0);
        }
    }
}

#[test]
fn oracle_rejects_long_vectors() {
    let w = WeightVector::new(vec![1.0; BRUTE_FORCE_MAX_LEN + 1]).unwrap();
    assert!(matches!(brute_force_binarize(&w), Err(BinarizeError::TooLarge { .. })));
}

#[test]
fn all_zero_is_rejected() {
    let w = WeightVector::new(vec![0.0; 5]).unwrap();
    assert!(matches!(optimal_binarize(&w), Err(BinarizeError::AllZero)));
    assert_eq!(half_half_binarize(&w).ones(), 3);
}
