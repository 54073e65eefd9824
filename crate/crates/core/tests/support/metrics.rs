//! Brute-force references for the sweep EER and rank AUC.

use nre_core::eval::{eer, roc_auc};
use nre_core::rng;
use rand::Rng;

/// AUC as the fraction of (anomaly, normal) pairs ordered correctly, ties
/// counting one half.
pub fn auc_pairs(scores: &[f64], anomalous: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &a) in anomalous.iter().enumerate() {
        for (j, &b) in anomalous.iter().enumerate() {
            if a && !b {
                pairs += 1;
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / 2.0 / pairs as f64
}

/// EER by recounting FPR and FNR from scratch at every candidate threshold.
pub fn eer_all_thresholds(scores: &[f64], anomalous: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let positives = anomalous.iter().filter(|&&a| a).count() as f64;
    let negatives = anomalous.len() as f64 - positives;
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let fp = scores.iter().zip(anomalous).filter(|(&s, &a)| !a && s >= th).count();
            let fneg = scores.iter().zip(anomalous).filter(|(&s, &a)| a && s < th).count();
            (fp as f64 / negatives, fneg as f64 / positives)
        })
        .collect();
    for k in 0..rates.len() {
        let (fpr, fnr) = rates[k];
        let d = fpr - fnr;
        if d <= 0.0 {
            if d == 0.0 || k == 0 {
                return fpr;
            }
            let (pf, pn) = rates[k - 1];
            let alpha = (pf - pn) / ((pf - pn) - d);
            return pf + alpha * (fpr - pf);
        }
    }
    unreachable!()
}

pub fn random_case(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng::seeded(seed);
    let n = r.random_range(2..=200);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
    labels[0] = false;
    labels[1] = true;
    // Coarse grids force ties; continuous draws avoid them.
    let levels = [3u32, 10, 1000, 0][r.random_range(0..4)];
    let scores = (0..n)
        .map(|i| {
            let shift = if labels[i] { 0.3 } else { 0.0 };
            let v: f64 = r.random_range(0.0..1.0) + shift;
            if levels == 0 {
                v
            } else {
                (v * levels as f64).floor() / levels as f64
            }
        })
        .collect();
    (scores, labels)
}

/// Both metrics equal their brute-force references exactly on `sets` random
/// score sets of at most 200 samples, ties included.
pub fn metric_equivalence(sets: u64) -> Result<usize, String> {
    for seed in 0..sets {
        let (s, l) = random_case(seed);
        let auc = roc_auc(&s, &l).map_err(|e| e.to_string())?;
        if auc != auc_pairs(&s, &l) {
            return Err(format!(
                "set {seed}: AUC {auc} but pair count gives {}",
                auc_pairs(&s, &l)
            ));
        }
        let e = eer(&s, &l).map_err(|e| e.to_string())?;
        if e != eer_all_thresholds(&s, &l) {
            return Err(format!(
                "set {seed}: EER {e} but recount gives {}",
                eer_all_thresholds(&s, &l)
            ));
        }
    }
    Ok(sets as usize)
}
