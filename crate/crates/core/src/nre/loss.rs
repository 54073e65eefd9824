use alloc::vec::Vec;

use super::LossWeights;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{Scalar, Tensor};

/// Inputs of one loss evaluation. `anchors` holds the similarity-space latents
/// of the inputs; `neighbors` and `far` hold `t` consecutive rows per input.
pub struct NreBatch<'a, T> {
    pub inputs: &'a Tensor<T>,
    pub anchors: &'a Tensor<T>,
    pub neighbors: Option<&'a Tensor<T>>,
    pub far: Option<&'a Tensor<T>>,
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct NreLoss<T> {
    /// Batch mean of the per-sample loss.
    pub loss: f64,
    /// Batch means of the three weighted terms; they sum to `loss`.
    pub terms: [f64; 3],
    pub encoder_grads: Vec<Tensor<T>>,
    pub decoder_grads: Vec<Tensor<T>>,
    pub reconstruction: Tensor<T>,
}

/// Cosine similarity of `a` and `b` and its gradient with respect to `b`.
/// A zero vector has similarity 0 and contributes no gradient.
fn cosine_and_grad<T: Scalar>(a: &[T], b: &[T], grad: &mut [T], scale: T) -> T {
    let (mut ab, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        ab = ab + x * y;
        aa = aa + x * x;
        bb = bb + y * y;
    }
    if aa == T::zero() || bb == T::zero() {
        return T::zero();
    }
    let norms = (aa * bb).sqrt();
    let s = ab / norms;
    for ((g, &x), &y) in grad.iter_mut().zip(a).zip(b) {
        *g = *g + scale * (x / norms - s * y / bb);
    }
    s
}

/// Neighborhood-relational loss of a batch and its parameter gradients.
///
/// Per sample, with `r' = A(D(E(x)))`:
/// `λ1·(1 − S(A(x), r')) + λ2·Σ (1 − S(r', n_i)) + λ3·Σ S(r', f_i)` over the
/// `t` neighbors `n_i` and far samples `f_i`; the sums are divided by `t`
/// when `normalize_by_t` is set. Gradients pass through the frozen
/// `similarity` network into `decoder` and `encoder`; the similarity
/// network's parameters are never touched.
pub fn nre_loss<T: Scalar>(
    encoder: &mut Network<T>,
    decoder: &mut Network<T>,
    similarity: &mut Network<T>,
    batch: &NreBatch<'_, T>,
    weights: &LossWeights,
    normalize_by_t: bool,
) -> Result<NreLoss<T>> {
    let n = batch.inputs.rows();
    let d = similarity.output_dim();
    if batch.anchors.shape() != [n, d] {
        return Err(Error::shape(alloc::format!(
            "anchors {:?} for a batch of {n} with latent width {d}",
            batch.anchors.shape()
        )));
    }
    let check_group = |g: Option<&Tensor<T>>, weight: f64, what: &str| -> Result<()> {
        match g {
            Some(g) if g.shape() != [n * batch.t, d] => Err(Error::shape(alloc::format!(
                "{what} {:?} does not hold T = {} rows of width {d} per sample",
                g.shape(),
                batch.t
            ))),
            None if weight > 0.0 => Err(Error::invalid(alloc::format!(
                "{what} latents are required when their weight is positive"
            ))),
            _ => Ok(()),
        }
    };
    check_group(batch.neighbors, weights.neighbor(), "neighbor")?;
    check_group(batch.far, weights.far(), "far")?;
    if weights.needs_mining() && batch.t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }

    let latent = encoder.forward(batch.inputs)?;
    let reconstruction = decoder.forward(&latent)?;
    let r = similarity.forward(&reconstruction)?;

    let per_t = if normalize_by_t && batch.t > 0 {
        1.0 / batch.t as f64
    } else {
        1.0
    };
    let inv_n = 1.0 / n as f64;
    let w1 = T::of(weights.reconstruction() * inv_n);
    let w2 = T::of(weights.neighbor() * per_t * inv_n);
    let w3 = T::of(weights.far() * per_t * inv_n);

    let mut grad = Tensor::zeros(r.shape());
    let mut sums = [0.0f64; 3];
    for i in 0..n {
        let ri = r.row(i);
        let gi = grad.row_mut(i);
        let s = cosine_and_grad(batch.anchors.row(i), ri, gi, -w1);
        sums[0] += 1.0 - s.to_f64_lossless();
        if let Some(nb) = batch.neighbors.filter(|_| weights.neighbor() > 0.0) {
            for j in 0..batch.t {
                let s = cosine_and_grad(nb.row(i * batch.t + j), ri, gi, -w2);
                sums[1] += 1.0 - s.to_f64_lossless();
            }
        }
        if let Some(far) = batch.far.filter(|_| weights.far() > 0.0) {
            for j in 0..batch.t {
                let s = cosine_and_grad(far.row(i * batch.t + j), ri, gi, w3);
                sums[2] += s.to_f64_lossless();
            }
        }
    }
    let terms = [
        weights.reconstruction() * sums[0] * inv_n,
        weights.neighbor() * per_t * sums[1] * inv_n,
        weights.far() * per_t * sums[2] * inv_n,
    ];
    let loss = terms.iter().sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::NonFinite("NRE loss"));
    }

    let grad_reconstruction = similarity.backward_input(&grad)?;
    let dec = decoder.backward(&grad_reconstruction)?;
    let enc = encoder.backward(&dec.input_grad)?;
    Ok(NreLoss {
        loss,
        terms,
        encoder_grads: enc.param_grads,
        decoder_grads: dec.param_grads,
        reconstruction,
    })
}
