//! Structural invariants of clustering, the NRE loss, splitting and FGSM
//! over random inputs.

use nre_core::data::{split, synth_blobs, SplitSpec};
use nre_core::eval::fgsm_attack;
use nre_core::nre::{nre_loss, LossWeights, NreBatch};
use nre_core::similarity::{kmeans, LatentTable};
use nre_core::{rng, Activation, Network, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_rows(seed: u64, rows: usize, cols: usize, lo: f32, hi: f32) -> Tensor<f32> {
    let mut r = rng::seeded(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kmeans_objective_never_increases_and_partitions(
        seed in 0u64..1000, n in 2usize..60, dim in 1usize..6, k_frac in 0.0f64..1.0,
    ) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let table = LatentTable::new(random_rows(seed, n, dim, 0.0, 1.0), "random", 0).unwrap();
        let model = kmeans(&table, k, seed, 50).unwrap();
        prop_assert_eq!(model.k(), k);
        for w in model.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "objective rose: {:?}", model.objective_history);
        }
        let mut seen = vec![false; n];
        for c in 0..k {
            prop_assert!(!model.members(c).is_empty());
            for &i in model.members(c) {
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert_eq!(model.assignment()[i], c);
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert_eq!(&model, &kmeans(&table, k, seed, 50).unwrap());
    }

    #[test]
    fn kmeans_converged_assignment_is_nearest_center(seed in 0u64..1000, n in 4usize..40, k in 1usize..4) {
        let table = LatentTable::new(random_rows(seed, n, 3, 0.0, 1.0), "random", 0).unwrap();
        let model = kmeans(&table, k, seed, 1000).unwrap();
        for i in 0..n {
            let own = sq_dist(table.row(i), model.center(model.assignment()[i]));
            for c in 0..k {
                prop_assert!(own <= sq_dist(table.row(i), model.center(c)) + 1e-5);
            }
        }
    }

    #[test]
    fn nre_loss_is_bounded_by_its_weights(
        seed in 0u64..1000, n in 1usize..6, t in 1usize..4, normalize in any::<bool>(),
        w in (0.05f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    ) {
        let mut r = rng::seeded(seed);
        let mut encoder = Network::<f32>::mlp(&[6, 5, 3], Activation::Relu, Activation::Relu, &mut r).unwrap();
        let mut decoder = Network::<f32>::mlp(&[3, 5, 6], Activation::Relu, Activation::Sigmoid, &mut r).unwrap();
        let mut similarity = Network::<f32>::mlp(&[6, 4], Activation::Relu, Activation::Relu, &mut r).unwrap().frozen_copy();
        let inputs = random_rows(seed, n, 6, 0.0, 1.0);
        let anchors = random_rows(seed + 1, n, 4, 0.0, 2.0);
        let neighbors = random_rows(seed + 2, n * t, 4, 0.0, 2.0);
        let far = random_rows(seed + 3, n * t, 4, 0.0, 2.0);
        let sum = w.0 + w.1 + w.2;
        let w = (w.0 / sum, w.1 / sum, 1.0 - w.0 / sum - w.1 / sum);
        let weights = LossWeights::new(w.0, w.1, w.2).unwrap();
        let batch = NreBatch { inputs: &inputs, anchors: &anchors, neighbors: Some(&neighbors), far: Some(&far), t };
        let out = nre_loss(&mut encoder, &mut decoder, &mut similarity, &batch, &weights, normalize).unwrap();
        let per = if normalize { 1.0 } else { t as f64 };
        let bounds = [w.0, w.1 * per, w.2 * per];
        for (term, bound) in out.terms.iter().zip(bounds) {
            prop_assert!(*term >= 0.0 && *term <= bound + 1e-6, "term {term} outside [0, {bound}]");
        }
        prop_assert!((out.terms.iter().sum::<f64>() - out.loss).abs() < 1e-6);
        prop_assert!(out.reconstruction.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn split_is_disjoint_sized_and_seeded(
        seed in 0u64..1000, per_class in 5usize..30, labelled in any::<bool>(),
        frac in (0.0f64..0.5, 0.0f64..0.3, 0.0f64..0.2),
    ) {
        let mut ds = synth_blobs(3, per_class, 4, 2.0, seed).unwrap();
        if !labelled {
            ds = nre_core::data::Dataset::new("unlabelled", ds.images().clone(), None).unwrap();
        }
        let total = ds.len() as f64;
        let spec = SplitSpec {
            train: (total * frac.0) as usize,
            test: (total * frac.1) as usize,
            substitute: (total * frac.2) as usize,
            seed,
        };
        let s = split(&ds, &spec).unwrap();
        prop_assert_eq!((s.train.len(), s.test.len(), s.substitute.len()), (spec.train, spec.test, spec.substitute));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.substitute).copied().collect();
        all.sort_unstable();
        let count = all.len();
        all.dedup();
        prop_assert_eq!(all.len(), count);
        prop_assert!(all.iter().all(|&i| i < ds.len()));
        prop_assert_eq!(&s, &split(&ds, &spec).unwrap());
    }

    #[test]
    fn fgsm_respects_budget_and_pixel_box(seed in 0u64..1000, n in 1usize..40, eps in 0.0f64..0.5) {
        let mut r = rng::seeded(seed);
        let net = Network::<f32>::mlp(&[8, 6, 3], Activation::Tanh, Activation::Identity, &mut r).unwrap();
        let x = random_rows(seed, n, 8, 0.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 3).collect();
        let adv = fgsm_attack(&net, &x, &labels, eps).unwrap();
        prop_assert_eq!(adv.shape(), x.shape());
        for (&a, &b) in adv.data().iter().zip(x.data()) {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(((a - b).abs() as f64) <= eps + 1e-6);
        }
    }
}
