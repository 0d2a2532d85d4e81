use driftscope_core::rng::{seeded, shuffle};
use driftscope_core::stats::{pearson, spearman};
use driftscope_core::Error;
use proptest::prelude::*;

fn varied() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1000.0f64..1000.0, 3..40)
        .prop_filter("needs spread", |xs| xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3))
}

proptest! {
    #[test]
    fn affine_image_has_unit_correlation(xs in varied(), a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], b in -100.0f64..100.0) {
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((pearson(&xs, &ys).unwrap() - a.signum()).abs() <= 1e-12);
    }

    #[test]
    fn invariant_under_positive_affine_maps(pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
                                            a in 0.01f64..50.0, b in -100.0f64..100.0, c in 0.01f64..50.0, d in -100.0f64..100.0) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(pearson(&xs, &ys).is_ok());
        let r = pearson(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let ys2: Vec<f64> = ys.iter().map(|y| c * y + d).collect();
        prop_assert!((pearson(&xs2, &ys).unwrap() - r).abs() <= 1e-12);
        prop_assert!((pearson(&xs, &ys2).unwrap() - r).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

#[test]
fn trivial_examples() {
    let xs = [1.0, 2.0, 4.0, 8.0];
    assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() <= 1e-12);
    let ys: Vec<f64> = xs.iter().map(|x| -x + 5.0).collect();
    assert!((pearson(&xs, &ys).unwrap() + 1.0).abs() <= 1e-12);
}

#[test]
fn published_table_values() {
    let dss = [0.097, 0.248, 0.119, 0.138];
    let f1 = [0.849, 0.683, 0.870, 0.754];
    let r = pearson(&dss, &f1).unwrap();
    assert!((r - -0.896).abs() <= 1e-3, "r = {r}");
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::ZeroVariance(_))));
    assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), Err(Error::ZeroVariance(_))));
    assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    assert!(pearson(&[1.0], &[1.0]).is_err());
    assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
}

/// Severity sweep where the shift score rises and F1 falls, both nonlinearly.
fn monotone_fixture() -> (Vec<f64>, Vec<f64>) {
    let n = 30;
    let dss: Vec<f64> = (0..n).map(|i| 0.01 * (i as f64).powf(1.3)).collect();
    let f1: Vec<f64> = (0..n).map(|i| 0.95 - 0.4 * (i as f64 / n as f64).powi(2)).collect();
    (dss, f1)
}

#[test]
fn monotone_fixture_is_strongly_negative() {
    let (dss, f1) = monotone_fixture();
    assert_eq!(spearman(&dss, &f1).unwrap(), -1.0);
    assert!(pearson(&dss, &f1).unwrap() <= -0.9);
}

#[test]
fn shuffled_pairing_destroys_the_correlation() {
    let (dss, mut f1) = monotone_fixture();
    let mut rng = seeded(1);
    let trials = 1000;
    let mut weak = 0;
    for _ in 0..trials {
        shuffle(&mut f1, &mut rng);
        if pearson(&dss, &f1).unwrap().abs() < 0.5 {
            weak += 1;
        }
    }
    assert!(weak as f64 / trials as f64 >= 0.95, "{weak}/{trials} shuffles below 0.5");
}

#[test]
fn spearman_uses_average_ranks_for_ties() {
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let expect = pearson(&[1.0, 2.5, 2.5, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((r - expect).abs() <= 1e-12);
}
