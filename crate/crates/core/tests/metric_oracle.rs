//! Sweep EER and rank AUC against brute-force enumeration.

mod support;

use nre_core::eval::{eer, roc_auc};
use proptest::prelude::*;
use support::metrics::{metric_equivalence, random_case};

#[test]
fn matches_brute_force_on_random_score_sets() {
    assert_eq!(metric_equivalence(100), Ok(100));
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms(seed in 0u64..10_000, a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let (s, l) = random_case(seed);
        let transformed: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&transformed, &l).unwrap());
    }

    #[test]
    fn rates_stay_in_the_unit_interval(seed in 0u64..10_000) {
        let (s, l) = random_case(seed);
        let e = eer(&s, &l).unwrap();
        let auc = roc_auc(&s, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!((0.0..=1.0).contains(&auc));
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&flipped, &l).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }
}
