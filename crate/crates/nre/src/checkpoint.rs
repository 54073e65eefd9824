//! Checkpoint container.
//!
//! Layout: the 8-byte magic `NRECKPT1`, a little-endian `u32` version, a
//! little-endian `u64` metadata length, that many bytes of UTF-8 JSON
//! metadata, then every tensor as little-endian `f32` values, back to back in
//! metadata order. The metadata records each tensor's name, shape and byte
//! offset into the payload, the loss weights and training configuration, the
//! seed, and the fingerprint of the encoder that defines the similarity space.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nre_core::nre::{AeArchitecture, Autoencoder, LossWeights, NreModel, QueryMode, TrainConfig};
use nre_core::{Layer, LayerKind, Network, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 8] = b"NRECKPT1";
pub const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload that follows the metadata.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub role: String,
    pub input_dim: usize,
    pub layers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSnapshot {
    pub t: usize,
    pub k: usize,
    pub kmeans_iters: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub refresh_interval: usize,
    pub seed: u64,
    pub query_mode: String,
    pub normalize_by_t: bool,
}

impl From<&TrainConfig> for TrainSnapshot {
    fn from(c: &TrainConfig) -> Self {
        Self {
            t: c.t,
            k: c.k,
            kmeans_iters: c.kmeans_iters,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            refresh_interval: c.refresh_interval,
            seed: c.seed,
            query_mode: c.query_mode.name().to_owned(),
            normalize_by_t: c.normalize_by_t,
        }
    }
}

impl TrainSnapshot {
    fn config(&self) -> Result<TrainConfig, FormatError> {
        Ok(TrainConfig {
            t: self.t,
            k: self.k,
            kmeans_iters: self.kmeans_iters,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            refresh_interval: self.refresh_interval,
            seed: self.seed,
            query_mode: QueryMode::from_name(&self.query_mode)
                .ok_or_else(|| FormatError::Malformed(format!("unknown query mode {:?}", self.query_mode)))?,
            normalize_by_t: self.normalize_by_t,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// `autoencoder` or `nre`.
    pub kind: String,
    pub architecture: Vec<usize>,
    pub networks: Vec<NetworkEntry>,
    pub tensors: Vec<TensorEntry>,
    pub weights: Option<[f64; 3]>,
    pub train: Option<TrainSnapshot>,
    /// Resolved run configuration, for provenance.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub epoch: usize,
    /// Fingerprint of the similarity encoder (the encoder itself for a plain
    /// autoencoder).
    pub encoder_fingerprint: u64,
}

#[derive(Clone, Debug)]
pub enum Model {
    Autoencoder(Autoencoder),
    Nre(NreModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Autoencoder(_) => "autoencoder",
            Model::Nre(_) => "nre",
        }
    }

    pub fn encoder(&self) -> &Network<f32> {
        match self {
            Model::Autoencoder(ae) => &ae.encoder,
            Model::Nre(m) => &m.encoder,
        }
    }

    pub fn autoencoder(&self) -> Autoencoder {
        match self {
            Model::Autoencoder(ae) => ae.clone(),
            Model::Nre(m) => m.autoencoder(),
        }
    }

    fn similarity_encoder(&self) -> &Network<f32> {
        match self {
            Model::Autoencoder(ae) => &ae.encoder,
            Model::Nre(m) => &m.similarity,
        }
    }

    fn networks(&self) -> Vec<(&'static str, &Network<f32>)> {
        match self {
            Model::Autoencoder(ae) => vec![("encoder", &ae.encoder), ("decoder", &ae.decoder)],
            Model::Nre(m) => vec![
                ("encoder", &m.encoder),
                ("decoder", &m.decoder),
                ("similarity", &m.similarity),
            ],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub architecture: AeArchitecture,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut networks = Vec::new();
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        for (role, net) in self.model.networks() {
            networks.push(NetworkEntry {
                role: role.to_owned(),
                input_dim: net.input_dim(),
                layers: net.kinds().iter().map(|k| k.name().to_owned()).collect(),
            });
            let mut affine = 0;
            for layer in net.layers() {
                let params = layer.params();
                if params.is_empty() {
                    continue;
                }
                for (p, part) in params.iter().zip(["weight", "bias"]) {
                    tensors.push(TensorEntry {
                        name: format!("{role}.{affine}.{part}"),
                        shape: p.shape().to_vec(),
                        offset: payload.len() as u64,
                    });
                    for v in p.data() {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                affine += 1;
            }
        }
        let (weights, train) = match &self.model {
            Model::Autoencoder(_) => (None, None),
            Model::Nre(m) => (Some(m.weights.as_array()), Some(TrainSnapshot::from(&m.config))),
        };
        let meta = Metadata {
            kind: self.model.kind().to_owned(),
            architecture: self.architecture.encoder_dims.clone(),
            networks,
            tensors,
            weights,
            train,
            config: self.config.clone(),
            seed: self.seed,
            epoch: self.epoch,
            encoder_fingerprint: self.model.similarity_encoder().fingerprint(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Data(format!("serializing metadata: {e}")))?;
        let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(FormatError::WrongMagic {
                expected: "NRECKPT1".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            });
        }
        if bytes.len() < PREFIX {
            return Err(FormatError::Truncated {
                what: "checkpoint header",
                expected: PREFIX as u64,
                found: bytes.len() as u64,
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let meta_end = (PREFIX as u64).saturating_add(meta_len);
        if (bytes.len() as u64) < meta_end {
            return Err(FormatError::Truncated {
                what: "checkpoint metadata",
                expected: meta_end,
                found: bytes.len() as u64,
            });
        }
        let meta: Metadata = serde_json::from_slice(&bytes[PREFIX..meta_end as usize])
            .map_err(|e| FormatError::Malformed(format!("checkpoint metadata: {e}")))?;
        let payload = &bytes[meta_end as usize..];
        let needed: u64 = meta
            .tensors
            .iter()
            .map(|t| t.offset + 4 * t.shape.iter().product::<usize>() as u64)
            .max()
            .unwrap_or(0);
        if (payload.len() as u64) < needed {
            return Err(FormatError::Truncated {
                what: "checkpoint payload",
                expected: meta_end + needed,
                found: bytes.len() as u64,
            });
        }
        if payload.len() as u64 > needed {
            return Err(FormatError::Malformed(format!(
                "{} bytes after the last tensor",
                payload.len() as u64 - needed
            )));
        }
        from_metadata(meta, payload)
    }

    /// Writes to a temporary sibling and renames it over `path`, so an
    /// interrupted write never leaves a partial checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::format(path, e))
    }
}

fn from_metadata(meta: Metadata, payload: &[u8]) -> Result<Checkpoint, FormatError> {
    let malformed = |m: String| FormatError::Malformed(m);
    let mut tensors = meta.tensors.iter();
    let mut next_tensor = |expected: &str| -> Result<Tensor<f32>, FormatError> {
        let entry = tensors
            .next()
            .ok_or_else(|| malformed(format!("missing tensor {expected}")))?;
        if entry.name != expected {
            return Err(malformed(format!("expected tensor {expected}, found {}", entry.name)));
        }
        let start = entry.offset as usize;
        let n: usize = entry.shape.iter().product();
        let data = payload[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(entry.shape.clone(), data).map_err(|e| malformed(e.to_string()))
    };

    let mut nets = BTreeMap::new();
    for entry in &meta.networks {
        let mut layers = Vec::with_capacity(entry.layers.len());
        let mut affine = 0;
        for name in &entry.layers {
            let kind = LayerKind::from_name(name).ok_or_else(|| malformed(format!("unknown layer kind {name:?}")))?;
            layers.push(match kind {
                LayerKind::Affine => {
                    let w = next_tensor(&format!("{}.{affine}.weight", entry.role))?;
                    let b = next_tensor(&format!("{}.{affine}.bias", entry.role))?;
                    affine += 1;
                    Layer::affine(w, b).map_err(|e| malformed(e.to_string()))?
                }
                LayerKind::Relu => Layer::relu(),
                LayerKind::Sigmoid => Layer::sigmoid(),
                LayerKind::Tanh => Layer::tanh(),
            });
        }
        let net = Network::new(entry.input_dim, layers).map_err(|e| malformed(e.to_string()))?;
        nets.insert(entry.role.clone(), net);
    }
    if tensors.next().is_some() {
        return Err(malformed("tensors not referenced by any network".into()));
    }
    let mut take = |role: &str| {
        nets.remove(role)
            .ok_or_else(|| malformed(format!("missing network {role}")))
    };
    let encoder = take("encoder")?;
    let decoder = take("decoder")?;
    let model = match meta.kind.as_str() {
        "autoencoder" => {
            Model::Autoencoder(Autoencoder::from_parts(encoder, decoder).map_err(|e| malformed(e.to_string()))?)
        }
        "nre" => {
            let weights = meta
                .weights
                .ok_or_else(|| malformed("NRE checkpoint without loss weights".into()))?;
            let train = meta
                .train
                .as_ref()
                .ok_or_else(|| malformed("NRE checkpoint without training config".into()))?;
            Model::Nre(NreModel {
                encoder,
                decoder,
                similarity: take("similarity")?.frozen_copy(),
                weights: LossWeights::new(weights[0], weights[1], weights[2]).map_err(|e| malformed(e.to_string()))?,
                config: train.config()?,
            })
        }
        other => return Err(malformed(format!("unknown checkpoint kind {other:?}"))),
    };
    let found = model.similarity_encoder().fingerprint();
    if found != meta.encoder_fingerprint {
        return Err(FormatError::FingerprintMismatch {
            expected: meta.encoder_fingerprint,
            found,
        });
    }
    let architecture = AeArchitecture::new(meta.architecture).map_err(|e| malformed(e.to_string()))?;
    if architecture.encoder_dims.first() != Some(&model.encoder().input_dim())
        || architecture.encoder_dims.last() != Some(&model.encoder().output_dim())
    {
        return Err(malformed("architecture does not match the stored encoder".into()));
    }
    Ok(Checkpoint {
        model,
        architecture,
        config: meta.config,
        seed: meta.seed,
        epoch: meta.epoch,
    })
}
