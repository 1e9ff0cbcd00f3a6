mod common;

use msrl_core::metrics::{ari, hungarian_acc, nmi, ClusteringScores};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labelling() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..30, 1usize..7).prop_flat_map(|(n, c)| {
        (prop::collection::vec(0..c, n), prop::collection::vec(0..c, n))
    })
}

proptest! {
    #[test]
    fn acc_equals_best_permutation((pred, truth) in labelling()) {
        let got = hungarian_acc(&pred, &truth).unwrap();
        prop_assert!((got - common::brute_force_acc(&pred, &truth)).abs() < 1e-15);
    }

    #[test]
    fn nmi_and_ari_match_oracles((pred, truth) in labelling()) {
        prop_assert!((nmi(&pred, &truth).unwrap() - common::contingency_nmi(&pred, &truth)).abs() <= 1e-10);
        prop_assert!((ari(&pred, &truth).unwrap() - common::pair_count_ari(&pred, &truth)).abs() <= 1e-10);
    }

    #[test]
    fn scores_ignore_relabelling((pred, truth) in labelling(), shift in 1usize..7) {
        let k = pred.iter().max().unwrap() + 1;
        let renamed: Vec<usize> = pred.iter().map(|&p| (p + shift) % k).collect();
        let a = ClusteringScores::compute(&pred, &truth).unwrap();
        let b = ClusteringScores::compute(&renamed, &truth).unwrap();
        prop_assert!((a.acc - b.acc).abs() < 1e-15);
        prop_assert!((a.nmi - b.nmi).abs() < 1e-12);
        prop_assert!((a.ari - b.ari).abs() < 1e-12);
    }

    #[test]
    fn acc_dominates_identity_mapping((pred, truth) in labelling()) {
        let fixed = pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64;
        prop_assert!(hungarian_acc(&pred, &truth).unwrap() >= fixed);
    }
}

#[test]
fn perfect_and_swapped_labelings() {
    let truth = [0, 0, 1, 1, 2, 2];
    let swapped = [1, 1, 0, 0, 2, 2];
    let s = ClusteringScores::compute(&swapped, &truth).unwrap();
    assert_eq!((s.acc, s.nmi, s.ari), (1.0, 1.0, 1.0));
}

#[test]
fn random_labelings_have_near_zero_ari() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 200;
    let mean: f64 = (0..trials)
        .map(|_| {
            let pred: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
            let truth: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
            ari(&pred, &truth).unwrap()
        })
        .sum::<f64>()
        / trials as f64;
    assert!(mean.abs() <= 0.05, "mean ARI {mean}");
}

#[test]
fn metric_input_errors() {
    assert!(hungarian_acc(&[0, 1], &[0]).is_err());
    assert!(hungarian_acc(&[], &[]).is_err());
    assert!(ari(&[0], &[0]).is_err());
}
