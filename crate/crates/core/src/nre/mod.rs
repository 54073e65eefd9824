//! Autoencoder pretraining and neighborhood-relational fine-tuning.

mod loss;
mod train;

pub use loss::{nre_loss, NreBatch, NreLoss};
pub use train::{mine_dataset, pretrain_ae, train_nre, MiningRound, PretrainConfig};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layer::Activation;
use crate::network::Network;
use crate::rng;
use crate::similarity::predict_in_chunks;
use crate::tensor::Tensor;

/// The weights `(λ1, λ2, λ3)` of the reconstruction, neighbor and far terms.
/// They are nonnegative and sum to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    reconstruction: f64,
    neighbor: f64,
    far: f64,
}

impl LossWeights {
    pub const REPRESENTATION: (f64, f64, f64) = (0.5, 0.25, 0.25);
    pub const PROBE: (f64, f64, f64) = (0.5, 0.2, 0.3);
    pub const DEFENSE: (f64, f64, f64) = (0.6, 0.2, 0.2);
    pub const ANOMALY: (f64, f64, f64) = (0.6, 0.2, 0.2);

    pub fn new(reconstruction: f64, neighbor: f64, far: f64) -> Result<Self> {
        let all = [reconstruction, neighbor, far];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(alloc::format!(
                "loss weights must be finite and nonnegative, got {all:?}"
            )));
        }
        let sum = reconstruction + neighbor + far;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(alloc::format!("loss weights must sum to 1, got {sum}")));
        }
        let w = Self {
            reconstruction,
            neighbor,
            far,
        };
        if !w.reconstruction_dominates() {
            log::warn!(
                "λ1 = {reconstruction} does not exceed λ2 = {neighbor} and λ3 = {far}; reconstructions may drift"
            );
        }
        Ok(w)
    }

    pub fn from_tuple(t: (f64, f64, f64)) -> Result<Self> {
        Self::new(t.0, t.1, t.2)
    }

    pub fn reconstruction(&self) -> f64 {
        self.reconstruction
    }

    pub fn neighbor(&self) -> f64 {
        self.neighbor
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.reconstruction, self.neighbor, self.far]
    }

    /// Whether neighbors have to be mined at all.
    pub fn needs_mining(&self) -> bool {
        self.neighbor > 0.0 || self.far > 0.0
    }

    pub fn reconstruction_dominates(&self) -> bool {
        self.reconstruction > self.neighbor && self.reconstruction > self.far
    }
}

/// What a reconstruction is compared against when mining neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryMode {
    /// Mine around the current reconstruction `D(E(X))`, placed by cosine
    /// similarity to the cluster centers.
    ByReconstruction,
    /// Mine around the table row of `X` itself inside its k-means cluster.
    ByInput,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::ByReconstruction => "by-reconstruction",
            QueryMode::ByInput => "by-input",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "by-reconstruction" => Some(QueryMode::ByReconstruction),
            "by-input" => Some(QueryMode::ByInput),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Nearby and far samples per training sample.
    pub t: usize,
    /// k-means clusters over the latent table.
    pub k: usize,
    pub kmeans_iters: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs between re-mining rounds.
    pub refresh_interval: usize,
    pub seed: u64,
    pub query_mode: QueryMode,
    /// Divide the neighbor and far sums by `t`.
    pub normalize_by_t: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t: 1,
            k: 10,
            kmeans_iters: 50,
            learning_rate: 1e-4,
            epochs: 40,
            batch_size: 64,
            refresh_interval: 1,
            seed: 0,
            query_mode: QueryMode::ByReconstruction,
            normalize_by_t: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.k == 0 || self.refresh_interval == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "T, K, refresh interval and batch size must all be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One line of training progress. `wall_ms` is filled in by callers that have
/// a clock.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub wall_ms: u64,
    /// Samples whose mined neighbors were less similar than a mined far sample.
    pub mining_violations: usize,
}

/// Encoder widths, e.g. `[784, 256, 32]`; the decoder mirrors them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AeArchitecture {
    pub encoder_dims: Vec<usize>,
}

impl AeArchitecture {
    pub fn new(encoder_dims: Vec<usize>) -> Result<Self> {
        if encoder_dims.len() < 2 || encoder_dims.contains(&0) {
            return Err(Error::invalid(alloc::format!(
                "architecture needs at least an input and a latent width, got {encoder_dims:?}"
            )));
        }
        Ok(Self { encoder_dims })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_dims[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_dims.last().unwrap()
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        self.encoder_dims.iter().rev().copied().collect()
    }
}

/// An encoder with a post-relu latent and a sigmoid-output decoder.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub encoder: Network<f32>,
    pub decoder: Network<f32>,
}

impl Autoencoder {
    pub fn new(arch: &AeArchitecture, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let encoder = Network::mlp(&arch.encoder_dims, Activation::Relu, Activation::Relu, &mut r)?;
        let decoder = Network::mlp(&arch.decoder_dims(), Activation::Relu, Activation::Sigmoid, &mut r)?;
        Ok(Self { encoder, decoder })
    }

    pub fn from_parts(encoder: Network<f32>, decoder: Network<f32>) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() || decoder.output_dim() != encoder.input_dim() {
            return Err(Error::shape("encoder and decoder widths do not line up"));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        predict_in_chunks(&self.encoder, x)
    }

    pub fn reconstruct(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        predict_in_chunks(&self.decoder, &self.encode(x)?)
    }
}

/// A fine-tuned encoder-decoder together with the frozen similarity encoder
/// it was trained against.
#[derive(Clone, Debug)]
pub struct NreModel {
    pub encoder: Network<f32>,
    pub decoder: Network<f32>,
    pub similarity: Network<f32>,
    pub weights: LossWeights,
    pub config: TrainConfig,
}

impl NreModel {
    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        predict_in_chunks(&self.encoder, x)
    }

    pub fn reconstruct(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        predict_in_chunks(&self.decoder, &self.encode(x)?)
    }

    pub fn autoencoder(&self) -> Autoencoder {
        Autoencoder {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }
}

/// Anything that maps inputs back onto the image space.
pub trait Reconstruct {
    fn reconstruct_rows(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
    fn encode_rows(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Reconstruct for Autoencoder {
    fn reconstruct_rows(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.reconstruct(x)
    }

    fn encode_rows(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.encode(x)
    }
}

impl Reconstruct for NreModel {
    fn reconstruct_rows(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.reconstruct(x)
    }

    fn encode_rows(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.encode(x)
    }
}
