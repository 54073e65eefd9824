//! The frozen similarity space: cosine similarity on nonnegative latents, the
//! encoded latent table, its k-means partition and neighbor mining.

mod kmeans;
mod mining;

pub use kmeans::{kmeans, ClusterModel};
pub use mining::{farthest, nearest, ClusterOrder, NeighborQueryResult, Scored};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

fn check_pair(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(alloc::format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid(
            "cosine similarity is defined here for nonnegative vectors only",
        ));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn sq_norm(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Cosine similarity from a dot product and two squared norms. Zero vectors
/// have similarity 0 to everything.
pub(crate) fn cosine_from_parts(dot: f64, sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == 0.0 || sq_b == 0.0 {
        return 0.0;
    }
    (dot / (sq_a * sq_b).sqrt()).clamp(0.0, 1.0)
}

/// `a·b / (‖a‖‖b‖)` for nonnegative vectors, in `[0, 1]`.
pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(cosine_from_parts(dot(a, b), sq_norm(a), sq_norm(b)))
}

/// `1 - cosine_sim(a, b)`.
pub fn cosine_dist(a: &[f32], b: &[f32]) -> Result<f64> {
    cosine_sim(a, b).map(|s| 1.0 - s)
}

/// Latents of a whole dataset under the frozen similarity encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTable {
    latents: Tensor<f32>,
    sq_norms: Vec<f64>,
    pub dataset: String,
    /// [`Network::fingerprint`] of the encoder that produced the table.
    pub fingerprint: u64,
}

impl LatentTable {
    pub fn new(latents: Tensor<f32>, dataset: impl Into<String>, fingerprint: u64) -> Result<Self> {
        if latents.shape().len() != 2 {
            return Err(Error::shape("latent table must be (rows, dim)"));
        }
        if latents.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("latent table entries must be finite and nonnegative"));
        }
        let sq_norms = latents.iter_rows().map(sq_norm).collect();
        Ok(Self {
            latents,
            sq_norms,
            dataset: dataset.into(),
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.latents.cols()
    }

    pub fn latents(&self) -> &Tensor<f32> {
        &self.latents
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.latents.row(i)
    }

    pub fn sq_norm(&self, i: usize) -> f64 {
        self.sq_norms[i]
    }

    /// Similarity of row `i` to a query with precomputed squared norm.
    pub(crate) fn similarity_to(&self, query: &[f32], query_sq: f64, i: usize) -> f64 {
        cosine_from_parts(dot(query, self.row(i)), query_sq, self.sq_norms[i])
    }
}

/// Encodes every row of `rows` with the frozen encoder `encoder`.
pub fn encode_all(encoder: &Network<f32>, rows: &Tensor<f32>, dataset: &str) -> Result<LatentTable> {
    if !encoder.is_frozen() {
        return Err(Error::invalid("the similarity encoder must be frozen"));
    }
    let latents = predict_in_chunks(encoder, rows)?;
    LatentTable::new(latents, dataset, encoder.fingerprint())
}

pub(crate) fn predict_in_chunks(net: &Network<f32>, rows: &Tensor<f32>) -> Result<Tensor<f32>> {
    const CHUNK: usize = 1024;
    if rows.shape().len() != 2 {
        return Err(Error::shape(alloc::format!(
            "expected (rows, features), got {:?}",
            rows.shape()
        )));
    }
    let mut out = Vec::with_capacity(rows.rows() * net.output_dim());
    let idx: Vec<usize> = (0..rows.rows()).collect();
    for chunk in idx.chunks(CHUNK) {
        out.extend(net.predict(&rows.select_rows(chunk)?)?.into_data());
    }
    Tensor::matrix(rows.rows(), net.output_dim(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Activation;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(cosine_sim(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(cosine_dist(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0);
        assert_eq!(cosine_dist(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((cosine_dist(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_and_contract_violations() {
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_dist(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(cosine_sim(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(
            cosine_sim(&[1.0, -0.5], &[1.0, 2.0]),
            Err(Error::InvalidParameter(_))
        ));
    }

    fn nonneg(len: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(0.0f32..10.0, len)
    }

    proptest! {
        #[test]
        fn cosine_properties((a, b) in (1usize..16).prop_flat_map(|n| (nonneg(n), nonneg(n))), c in 0.01f32..100.0) {
            let s = cosine_sim(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, cosine_sim(&b, &a).unwrap());
            if a.iter().any(|&v| v > 0.0) {
                let scaled: Vec<f32> = a.iter().map(|v| v * c).collect();
                prop_assert!((cosine_sim(&a, &scaled).unwrap() - 1.0).abs() < 1e-6);
                prop_assert_eq!(cosine_dist(&a, &a).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn encode_all_requires_frozen_encoder_and_is_nonnegative() {
        let net = Network::mlp(&[5, 4, 3], Activation::Relu, Activation::Relu, &mut rng::seeded(3)).unwrap();
        let rows = Tensor::matrix(7, 5, (0..35).map(|v| ((v * 13) % 17) as f32 / 17.0).collect()).unwrap();
        assert!(encode_all(&net, &rows, "x").is_err());
        let frozen = net.frozen_copy();
        let table = encode_all(&frozen, &rows, "x").unwrap();
        assert_eq!(table.len(), 7);
        assert!(table.latents().data().iter().all(|&v| v >= 0.0));
        assert_eq!(table, encode_all(&frozen, &rows, "x").unwrap());
        assert_eq!(table.fingerprint, frozen.fingerprint());
    }
}
