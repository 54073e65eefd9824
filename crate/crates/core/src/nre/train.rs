use alloc::format;
use alloc::vec::Vec;

use super::{
    nre_loss, AeArchitecture, Autoencoder, EpochMetrics, LossWeights, NreBatch, NreModel, QueryMode, TrainConfig,
};
use crate::adam::{Adam, AdamConfig};
use crate::data::batch_indices;
use crate::error::{Error, Result};
use crate::loss::mse;
use crate::rng;
use crate::similarity::{
    encode_all, farthest, kmeans, nearest, predict_in_chunks, ClusterModel, ClusterOrder, LatentTable,
    NeighborQueryResult,
};
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 1;
const STREAM_BATCHES: u64 = 2;
const STREAM_KMEANS: u64 = 3;
const STREAM_FAR: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Stops training when the loss is non-finite or has stayed above ten times
/// its first-epoch value for three epochs in a row.
struct DivergenceGuard {
    initial: Option<f64>,
    strikes: usize,
}

impl DivergenceGuard {
    fn new() -> Self {
        Self {
            initial: None,
            strikes: 0,
        }
    }

    fn check(&mut self, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss is {loss} at epoch {epoch}")));
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial {
            self.strikes += 1;
            if self.strikes >= 3 {
                return Err(Error::Divergence(format!(
                    "loss {loss} above ten times its initial value {initial} for 3 epochs"
                )));
            }
        } else {
            self.strikes = 0;
        }
        Ok(())
    }
}

/// Trains a plain autoencoder on pixel mean-squared error with Adam.
///
/// `on_epoch` sees each epoch's mean loss and the current model.
pub fn pretrain_ae(
    rows: &Tensor<f32>,
    arch: &AeArchitecture,
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Autoencoder) -> Result<()>,
) -> Result<Autoencoder> {
    if rows.shape().len() != 2 || rows.cols() != arch.input_dim() {
        return Err(Error::shape(format!(
            "architecture expects width {}, data is {:?}",
            arch.input_dim(),
            rows.shape()
        )));
    }
    let mut ae = Autoencoder::new(arch, rng::mix(cfg.seed, STREAM_INIT))?;
    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut adam_e = Adam::new(adam_cfg, &ae.encoder.params());
    let mut adam_d = Adam::new(adam_cfg, &ae.decoder.params());
    let mut guard = DivergenceGuard::new();

    for epoch in 0..cfg.epochs {
        let mut r = rng::derive(rng::mix(cfg.seed, STREAM_BATCHES), epoch as u64);
        let mut total = 0.0;
        for idx in batch_indices(rows.rows(), cfg.batch_size, &mut r)? {
            let x = rows.select_rows(&idx)?;
            let z = ae.encoder.forward(&x)?;
            let y = ae.decoder.forward(&z)?;
            let (loss, grad) = mse(&y, &x)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss is {loss} at epoch {epoch}")));
            }
            total += loss as f64 * idx.len() as f64;
            let dec = ae.decoder.backward(&grad)?;
            let enc = ae.encoder.backward(&dec.input_grad)?;
            ae.decoder.apply_adam(&mut adam_d, &dec.param_grads)?;
            ae.encoder.apply_adam(&mut adam_e, &enc.param_grads)?;
        }
        let loss = total / rows.rows() as f64;
        guard.check(epoch, loss)?;
        let metrics = EpochMetrics {
            epoch,
            loss,
            term1: loss,
            ..Default::default()
        };
        on_epoch(&metrics, &ae)?;
    }
    Ok(ae)
}

/// Mined neighbor and far indices for every query row.
#[derive(Clone, Debug, PartialEq)]
pub struct MiningRound {
    pub results: Vec<NeighborQueryResult>,
    /// Queries whose neighbors were not all at least as similar as their far
    /// samples.
    pub violations: usize,
}

/// Mines `t` neighbors and `t` far samples for each row of `queries`; query
/// `i` never receives table row `i` (the queries describe the table's own
/// samples). `homes`, when given, pins each query's home cluster.
pub fn mine_dataset(
    queries: &Tensor<f32>,
    table: &LatentTable,
    clusters: &ClusterModel,
    homes: Option<&[usize]>,
    t: usize,
    seed: u64,
) -> Result<MiningRound> {
    let mut results = Vec::with_capacity(queries.rows());
    let mut violations = 0;
    for i in 0..queries.rows() {
        let q = queries.row(i);
        let order = match homes {
            Some(h) => ClusterOrder::with_home(q, clusters, h[i])?,
            None => ClusterOrder::new(q, clusters)?,
        };
        let neighbors = nearest(q, table, clusters, &order, t, &[i])?;
        let mut exclude: Vec<usize> = neighbors.iter().map(|s| s.index).collect();
        exclude.push(i);
        let mut r = rng::derive(seed, i as u64);
        let far = farthest(q, table, clusters, &order, t, &exclude, &mut r)?;
        let result = NeighborQueryResult {
            neighbors,
            farthest: far,
        };
        if !result.is_ordered() {
            violations += 1;
        }
        results.push(result);
    }
    Ok(MiningRound { results, violations })
}

fn gather(table: &LatentTable, results: &[NeighborQueryResult], idx: &[usize], far: bool) -> Result<Tensor<f32>> {
    let rows: Vec<usize> = idx
        .iter()
        .flat_map(|&i| {
            let r = &results[i];
            if far { &r.farthest } else { &r.neighbors }.iter().map(|s| s.index)
        })
        .collect();
    table.latents().select_rows(&rows)
}

/// Fine-tunes a copy of `pretrained` with the neighborhood-relational loss.
///
/// The pretrained encoder, frozen, defines the similarity space; the training
/// set is encoded once into a latent table and partitioned with k-means.
/// Every `refresh_interval` epochs neighbors and far samples are re-mined for
/// all samples (around the current reconstructions or the inputs, per
/// `query_mode`). Only the encoder and decoder copies are updated.
pub fn train_nre(
    pretrained: &Autoencoder,
    rows: &Tensor<f32>,
    config: &TrainConfig,
    weights: &LossWeights,
    mut on_epoch: impl FnMut(&EpochMetrics, &NreModel) -> Result<()>,
) -> Result<NreModel> {
    config.validate()?;
    if rows.shape().len() != 2 || rows.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut model = NreModel {
        encoder: pretrained.encoder.clone(),
        decoder: pretrained.decoder.clone(),
        similarity: pretrained.encoder.frozen_copy(),
        weights: *weights,
        config: config.clone(),
    };
    model.encoder.clear_cache();
    model.decoder.clear_cache();
    let table = encode_all(&model.similarity, rows, "train")?;
    let clusters = if weights.needs_mining() {
        if config.t * 2 + 1 > rows.rows() {
            return Err(Error::invalid(format!(
                "T = {} needs at least {} samples",
                config.t,
                2 * config.t + 1
            )));
        }
        let k = config.k.min(rows.rows());
        Some(kmeans(
            &table,
            k,
            rng::mix(config.seed, STREAM_KMEANS),
            config.kmeans_iters,
        )?)
    } else {
        None
    };

    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut adam_e = Adam::new(adam_cfg, &model.encoder.params());
    let mut adam_d = Adam::new(adam_cfg, &model.decoder.params());
    let mut guard = DivergenceGuard::new();
    let mut mined: Option<MiningRound> = None;
    let mut violations = 0;

    for epoch in 0..config.epochs {
        if let Some(clusters) = &clusters {
            if epoch % config.refresh_interval == 0 {
                let far_seed = rng::mix(rng::mix(config.seed, STREAM_FAR), epoch as u64);
                let round = match config.query_mode {
                    QueryMode::ByReconstruction => {
                        let recon = model.reconstruct(rows)?;
                        let queries = predict_in_chunks(&model.similarity, &recon)?;
                        mine_dataset(&queries, &table, clusters, None, config.t, far_seed)?
                    }
                    QueryMode::ByInput => mine_dataset(
                        table.latents(),
                        &table,
                        clusters,
                        Some(clusters.assignment()),
                        config.t,
                        far_seed,
                    )?,
                };
                violations = round.violations;
                if violations > 0 {
                    log::warn!("epoch {epoch}: {violations} samples mined a far sample closer than a neighbor");
                }
                mined = Some(round);
            }
        }

        let mut r = rng::derive(rng::mix(config.seed, STREAM_BATCHES), epoch as u64);
        let mut sums = [0.0f64; 3];
        for idx in batch_indices(rows.rows(), config.batch_size, &mut r)? {
            let x = rows.select_rows(&idx)?;
            let anchors = table.latents().select_rows(&idx)?;
            let (near, far) = match &mined {
                Some(m) => (
                    Some(gather(&table, &m.results, &idx, false)?),
                    Some(gather(&table, &m.results, &idx, true)?),
                ),
                None => (None, None),
            };
            let batch = NreBatch {
                inputs: &x,
                anchors: &anchors,
                neighbors: near.as_ref(),
                far: far.as_ref(),
                t: config.t,
            };
            let out = nre_loss(
                &mut model.encoder,
                &mut model.decoder,
                &mut model.similarity,
                &batch,
                weights,
                config.normalize_by_t,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence(format!("non-finite loss at epoch {epoch}")),
                other => other,
            })?;
            for (s, term) in sums.iter_mut().zip(out.terms) {
                *s += term * idx.len() as f64;
            }
            model.decoder.apply_adam(&mut adam_d, &out.decoder_grads)?;
            model.encoder.apply_adam(&mut adam_e, &out.encoder_grads)?;
        }
        let n = rows.rows() as f64;
        let metrics = EpochMetrics {
            epoch,
            loss: sums.iter().sum::<f64>() / n,
            term1: sums[0] / n,
            term2: sums[1] / n,
            term3: sums[2] / n,
            wall_ms: 0,
            mining_violations: violations,
        };
        guard.check(epoch, metrics.loss)?;
        on_epoch(&metrics, &model)?;
    }
    Ok(model)
}
