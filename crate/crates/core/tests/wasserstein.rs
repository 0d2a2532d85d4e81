mod support;

use driftscope_core::empirical::{wasserstein1, wasserstein1_samples, EmpiricalDistribution};
use driftscope_core::rng::{seeded, RngExt};
use proptest::prelude::*;
use support::{mixed_sample, w1_quantile_oracle};

fn w1(u: &[f64], v: &[f64]) -> f64 {
    wasserstein1_samples(u, v).unwrap()
}

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..60)
}

proptest! {
    #[test]
    fn symmetric(u in samples(), v in samples()) {
        prop_assert!((w1(&u, &v) - w1(&v, &u)).abs() <= 1e-12);
    }

    #[test]
    fn identity_of_indiscernibles(u in samples()) {
        prop_assert_eq!(w1(&u, &u), 0.0);
        let mut rev = u.clone();
        rev.reverse();
        prop_assert_eq!(w1(&u, &rev), 0.0);
    }

    #[test]
    fn triangle_inequality(u in samples(), v in samples(), z in samples()) {
        prop_assert!(w1(&u, &z) <= w1(&u, &v) + w1(&v, &z) + 1e-12);
    }

    #[test]
    fn translation_moves_by_the_shift(u in samples(), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
        prop_assert!((w1(&u, &shifted) - c.abs()).abs() <= 1e-12);
    }

    #[test]
    fn scaling_scales_distance(u in samples(), v in samples(), a in -4.0f64..4.0) {
        let su: Vec<f64> = u.iter().map(|x| a * x).collect();
        let sv: Vec<f64> = v.iter().map(|x| a * x).collect();
        let expect = a.abs() * w1(&u, &v);
        prop_assert!((w1(&su, &sv) - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn equal_sizes_reduce_to_sorted_differences(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..80)) {
        let (mut u, mut v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = w1(&u, &v);
        u.sort_by(f64::total_cmp);
        v.sort_by(f64::total_cmp);
        let expect = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>() / u.len() as f64;
        prop_assert!((d - expect).abs() <= 1e-9);
    }

    #[test]
    fn matches_quantile_oracle(u in samples(), v in samples()) {
        prop_assert!((w1(&u, &v) - w1_quantile_oracle(&u, &v)).abs() <= 1e-9);
    }

    #[test]
    fn weighted_with_integer_weights_matches_replication(
        items in prop::collection::vec((-20.0f64..20.0, 1u32..5), 1..20),
        v in samples(),
    ) {
        let (xs, ws): (Vec<f64>, Vec<u32>) = items.iter().copied().unzip();
        let weighted = EmpiricalDistribution::weighted(xs.clone(), ws.iter().map(|&w| f64::from(w)).collect()).unwrap();
        let replicated: Vec<f64> = items.iter().flat_map(|&(x, w)| std::iter::repeat_n(x, w as usize)).collect();
        let target = EmpiricalDistribution::new(v).unwrap();
        let a = wasserstein1(&weighted, &target);
        let b = wasserstein1(&EmpiricalDistribution::new(replicated).unwrap(), &target);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b));
    }
}

#[test]
fn worked_examples() {
    assert_eq!(w1(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    assert!((w1(&[0.0, 1.0], &[1.0, 2.0]) - 1.0).abs() <= 1e-12);
    assert!((w1(&[0.0, 1.0], &[0.0, 0.5, 1.0]) - 1.0 / 6.0).abs() <= 1e-12);
    assert!((w1(&[3.0], &[-1.0]) - 4.0).abs() <= 1e-12);
}

#[test]
fn empty_or_non_finite_input_is_an_error() {
    assert!(wasserstein1_samples(&[], &[1.0]).is_err());
    assert!(wasserstein1_samples(&[1.0], &[f64::NAN]).is_err());
    assert!(wasserstein1_samples(&[f64::INFINITY], &[1.0]).is_err());
}

#[test]
fn mixed_size_pairs_match_the_oracle() {
    let mut rng = seeded(11);
    for _ in 0..200 {
        let (n, m) = (rng.gen_range(1..=200), rng.gen_range(1..=200));
        let (u, v) = (mixed_sample(n, &mut rng), mixed_sample(m, &mut rng));
        let (d, o) = (w1(&u, &v), w1_quantile_oracle(&u, &v));
        assert!((d - o).abs() <= 1e-9, "sizes {n}/{m}: {d} vs oracle {o}");
    }
}
