use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nre::Reconstruct;
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Squared Euclidean error between each row and its reconstruction.
pub fn anomaly_scores(model: &impl Reconstruct, x: &Tensor<f32>) -> Result<Vec<f64>> {
    let r = model.reconstruct_rows(x)?;
    if r.shape() != x.shape() {
        return Err(Error::shape(alloc::format!(
            "reconstruction {:?} for inputs {:?}",
            r.shape(),
            x.shape()
        )));
    }
    Ok(x.iter_rows()
        .zip(r.iter_rows())
        .map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| ((p - q) as f64).powi(2)).sum())
        .collect())
}

fn check(scores: &[f64], anomalous: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != anomalous.len() {
        return Err(Error::shape(alloc::format!(
            "{} scores for {} labels",
            scores.len(),
            anomalous.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("anomaly scores"));
    }
    let positives = anomalous.iter().filter(|&&a| a).count();
    let negatives = anomalous.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("both normal and anomalous samples are required"));
    }
    Ok((positives, negatives))
}

/// Equal error rate of the rule "anomalous iff score ≥ threshold".
///
/// Thresholds sweep the sorted unique scores and finally `+∞`. The false
/// positive rate falls and the false negative rate rises along the sweep; at
/// the first point where FPR − FNR ≤ 0 the crossing is linearly interpolated
/// against the previous point.
pub fn eer(scores: &[f64], anomalous: &[bool]) -> Result<f64> {
    let (positives, negatives) = check(scores, anomalous)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Everything at or above the first threshold is flagged.
    let (mut false_pos, mut false_neg) = (negatives, 0usize);
    let rates = |fp: usize, fneg: usize| (fp as f64 / negatives as f64, fneg as f64 / positives as f64);
    let mut prev = rates(false_pos, false_neg);
    let mut i = 0;
    loop {
        let (fpr, fnr) = rates(false_pos, false_neg);
        let d = fpr - fnr;
        if d <= 0.0 {
            if d == 0.0 || i == 0 {
                return Ok(fpr);
            }
            let d_prev = prev.0 - prev.1;
            let alpha = d_prev / (d_prev - d);
            return Ok(prev.0 + alpha * (fpr - prev.0));
        }
        prev = (fpr, fnr);
        if i == order.len() {
            unreachable!("FPR reaches 0 at the +∞ threshold");
        }
        // Raise the threshold past the current score value.
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if anomalous[order[i]] {
                false_neg += 1;
            } else {
                false_pos -= 1;
            }
            i += 1;
        }
    }
}

/// Area under the ROC curve from the rank-sum statistic, with tied scores
/// sharing their average rank.
pub fn roc_auc(scores: &[f64], anomalous: &[bool]) -> Result<f64> {
    let (positives, negatives) = check(scores, anomalous)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let hits = order[i..j].iter().filter(|&&k| anomalous[k]).count();
        rank_sum += mean_rank * hits as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}
