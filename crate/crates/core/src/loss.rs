//! Scalar losses over `(batch, width)` outputs. Each returns the loss averaged
//! over the batch together with its gradient with respect to the output.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(alloc::format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Mean over every element of `(output - target)²`.
pub fn mse<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    same_shape(output, target)?;
    let n = T::of(output.len() as f64);
    let two = T::of(2.0);
    let mut grad = output.clone();
    let mut total = T::zero();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        total = total + d * d;
        *g = two * d / n;
    }
    Ok((total / n, grad))
}

fn check_labels<T: Scalar>(output: &Tensor<T>, labels: &[usize]) -> Result<()> {
    if output.shape().len() != 2 || output.rows() != labels.len() {
        return Err(Error::shape(alloc::format!(
            "{} labels for output {:?}",
            labels.len(),
            output.shape()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= output.cols()) {
        return Err(Error::invalid(alloc::format!(
            "label {bad} out of range for {} classes",
            output.cols()
        )));
    }
    Ok(())
}

/// Softmax cross-entropy on logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    check_labels(logits, labels)?;
    let n = T::of(labels.len() as f64);
    let mut grad = logits.clone();
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
        total = total - row[label].max(T::min_positive_value()).ln();
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v / n;
        }
    }
    Ok((total / n, grad))
}

/// One-vs-rest hinge loss: every class score is pushed above `+1` for its own
/// samples and below `-1` for the others.
pub fn one_vs_rest_hinge<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    check_labels(scores, labels)?;
    let n = T::of(labels.len() as f64);
    let mut grad = Tensor::zeros(scores.shape());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let s = scores.row(i);
        let g = grad.row_mut(i);
        for (c, (&sc, gc)) in s.iter().zip(g.iter_mut()).enumerate() {
            let y = if c == label { T::one() } else { -T::one() };
            let margin = T::one() - y * sc;
            if margin > T::zero() {
                total = total + margin;
                *gc = -y / n;
            }
        }
    }
    Ok((total / n, grad))
}

pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    scores
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    },
                )
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn numeric_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn losses_match_finite_differences() {
        let x = Tensor::matrix(2, 3, vec![0.2, -1.3, 0.7, 2.0, 0.1, -0.4]).unwrap();
        let target = Tensor::matrix(2, 3, vec![0.0, 1.0, 0.5, 0.3, 0.3, 0.3]).unwrap();
        let labels = [2usize, 0];

        let (_, g) = mse(&x, &target).unwrap();
        let num = numeric_grad(|x| mse(x, &target).unwrap().0, &x);
        for (a, b) in g.data().iter().zip(&num) {
            assert!((a - b).abs() < 1e-8);
        }

        let (_, g) = softmax_cross_entropy(&x, &labels).unwrap();
        let num = numeric_grad(|x| softmax_cross_entropy(x, &labels).unwrap().0, &x);
        for (a, b) in g.data().iter().zip(&num) {
            assert!((a - b).abs() < 1e-8);
        }

        // away from the hinge kinks
        let (_, g) = one_vs_rest_hinge(&x, &labels).unwrap();
        let num = numeric_grad(|x| one_vs_rest_hinge(x, &labels).unwrap().0, &x);
        for (a, b) in g.data().iter().zip(&num) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let x = Tensor::<f64>::zeros(&[1, 4]);
        let (l, _) = softmax_cross_entropy(&x, &[3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_checks() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        assert!(softmax_cross_entropy(&x, &[0]).is_err());
        assert!(one_vs_rest_hinge(&x, &[0, 3]).is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        let x = Tensor::matrix(2, 3, vec![1.0, 3.0, 3.0, -1.0, -2.0, -0.5]).unwrap();
        assert_eq!(argmax_rows::<f64>(&x), vec![1, 2]);
    }
}
