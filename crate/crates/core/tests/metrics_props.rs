use beta_evidence::evidential::Label;
use beta_evidence::metrics::{best_working_point, f1_scores, roc_auc, Confusion, ScoredSet};
use beta_evidence_oracle as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scored(scores: Vec<f64>, labels: Vec<bool>) -> ScoredSet {
    ScoredSet::from_scores(scores, labels.into_iter().map(Label::from).collect()).unwrap()
}

fn two_class(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

#[test]
fn auc_equals_pair_counting_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for k in 0..50 {
        let n = rng.random_range(2..=200);
        // Coarse levels force plenty of ties on some sets.
        let levels = if k % 2 == 0 { 7 } else { 1_000_000 };
        let (scores, labels) = two_class(&mut rng, n, levels);
        let fast = roc_auc(&scored(scores.clone(), labels.clone())).unwrap();
        assert_eq!(fast, oracle::auc_pairs(&scores, &labels), "set {k}");
    }
}

#[test]
fn micro_f1_equals_accuracy_on_random_confusions() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..500 {
        let n = rng.random_range(2..300);
        let (scores, labels) = two_class(&mut rng, n, 100);
        let s = scored(scores, labels);
        let t = rng.random();
        let c = Confusion::at_threshold(&s, t);
        assert!((f1_scores(&s, t).micro - c.accuracy()).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_maps(seed in 0u64..10_000, n in 2usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = two_class(&mut rng, n, 50);
        let base = roc_auc(&scored(scores.clone(), labels.clone())).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
        prop_assert_eq!(base, roc_auc(&scored(mapped, labels.clone())).unwrap());
        let reversed: Vec<f64> = scores.iter().map(|s| -s).collect();
        let r = roc_auc(&scored(reversed, labels)).unwrap();
        prop_assert!((base + r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_and_score_flip_swaps_class_f1(seed in 0u64..10_000, n in 2usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Strictly off-threshold scores so `>= 0.5` flips exactly.
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..1000) as f64 + 0.5) / 1000.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let a = f1_scores(&scored(scores.clone(), labels.clone()), 0.5);
        let b = f1_scores(&scored(scores.iter().map(|s| 1.0 - s).collect(), labels.iter().map(|l| !l).collect()), 0.5);
        prop_assert!((a.f1_pos - b.f1_neg).abs() < 1e-15 && (a.f1_neg - b.f1_pos).abs() < 1e-15);
        prop_assert!((a.micro - b.micro).abs() < 1e-15);
    }

    #[test]
    fn auc_in_unit_interval(seed in 0u64..10_000, n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = two_class(&mut rng, n, 5);
        let a = roc_auc(&scored(scores, labels)).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn working_point_is_optimal(seed in 0u64..10_000, n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scores, labels) = two_class(&mut rng, n, 20);
        let s = scored(scores, labels);
        let t = best_working_point(&s).unwrap();
        let best = f1_scores(&s, t).macro_mean();
        for k in 0..=100 {
            prop_assert!(f1_scores(&s, k as f64 / 100.0).macro_mean() <= best + 1e-12);
        }
    }
}
