//! Neighborhood-relational encoding (NRE) for encoder-decoder networks.
//!
//! An autoencoder is first trained to reconstruct its input. Its encoder is then
//! frozen and used as a similarity space: every training sample is encoded once,
//! the latents are partitioned with k-means, and for each reconstruction the
//! closest and most dissimilar samples are mined under cosine similarity. A copy
//! of the autoencoder is fine-tuned so that, seen through the frozen encoder, its
//! reconstructions stay close to the input and its neighbors and away from the
//! far samples.
//!
//! The crate is `no_std` + `alloc` when built without the default `std` feature.
//! File formats, the command line and wall-clock timing live in the `nre` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod data;
pub mod error;
pub mod eval;
pub mod layer;
pub mod loss;
pub mod network;
pub mod nre;
pub mod rng;
pub mod similarity;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Error, Result};
pub use layer::{Activation, Layer, LayerKind};
pub use network::{Backward, Network};
pub use tensor::{Scalar, Tensor};
