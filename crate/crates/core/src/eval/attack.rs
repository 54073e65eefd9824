use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::adam::{Adam, AdamConfig};
use crate::data::batch_indices;
use crate::error::{Error, Result};
use crate::layer::Activation;
use crate::loss::{argmax_rows, softmax_cross_entropy};
use crate::network::Network;
use crate::nre::Reconstruct;
use crate::rng;
use crate::similarity::predict_in_chunks;
use crate::tensor::Tensor;

const ATTACK_CHUNK: usize = 1024;

/// Where the attack gradient comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMode {
    /// Gradients of the attacked classifier itself.
    WhiteBox,
    /// Gradients of a substitute trained on a small labeled budget.
    BlackBoxSubstitute,
}

impl AttackMode {
    pub fn name(self) -> &'static str {
        match self {
            AttackMode::WhiteBox => "white-box",
            AttackMode::BlackBoxSubstitute => "black-box-substitute",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "white-box" => Some(AttackMode::WhiteBox),
            "black-box-substitute" => Some(AttackMode::BlackBoxSubstitute),
            _ => None,
        }
    }
}

/// A relu MLP classifier emitting logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![128],
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Additive Gaussian pixel noise, clipped back into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub noise_sigma: f64,
    pub seed: u64,
}

fn class_count(labels: &[usize]) -> (usize, usize) {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = alloc::vec![false; n_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    (n_classes, seen.iter().filter(|&&s| s).count())
}

/// Trains a softmax classifier over `n_classes` outputs with Adam.
pub fn train_classifier(
    rows: &Tensor<f32>,
    labels: &[usize],
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<Network<f32>> {
    if rows.shape().len() != 2 || rows.rows() != labels.len() {
        return Err(Error::shape(alloc::format!(
            "{} labels for inputs {:?}",
            labels.len(),
            rows.shape()
        )));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(Error::invalid(alloc::format!("labels must be below {n_classes}")));
    }
    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(rows.cols());
    dims.extend_from_slice(&cfg.hidden);
    dims.push(n_classes);
    let mut net = Network::mlp(
        &dims,
        Activation::Relu,
        Activation::Identity,
        &mut rng::derive(cfg.seed, 0),
    )?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate), &net.params());
    for epoch in 0..cfg.epochs {
        let mut r = rng::derive(cfg.seed, 1 + epoch as u64);
        for idx in batch_indices(rows.rows(), cfg.batch_size, &mut r)? {
            let xb = rows.select_rows(&idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let logits = net.forward(&xb)?;
            let (_, g) = softmax_cross_entropy(&logits, &yb)?;
            let grads = net.backward(&g)?.param_grads;
            net.apply_adam(&mut adam, &grads)?;
        }
    }
    Ok(net)
}

/// Trains the black-box gradient source on a small labeled budget. It needs
/// at least two classes and at least one sample per class on average.
pub fn train_substitute(
    rows: &Tensor<f32>,
    labels: &[usize],
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<Network<f32>> {
    let (_, distinct) = class_count(labels);
    if distinct < 2 {
        return Err(Error::invalid("a substitute needs at least two classes"));
    }
    if labels.len() < n_classes {
        return Err(Error::invalid(alloc::format!(
            "{} samples cannot cover {n_classes} classes",
            labels.len()
        )));
    }
    train_classifier(rows, labels, n_classes, cfg)
}

pub fn accuracy(classifier: &Network<f32>, rows: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    if rows.rows() != labels.len() {
        return Err(Error::shape("label count differs from input rows"));
    }
    let pred = argmax_rows(&predict_in_chunks(classifier, rows)?);
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Fast gradient sign perturbation `clip(x + ε·sign(∂CE/∂x), 0, 1)` using the
/// gradients of `source`.
pub fn fgsm_attack(source: &Network<f32>, x: &Tensor<f32>, labels: &[usize], epsilon: f64) -> Result<Tensor<f32>> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(alloc::format!(
            "ε must be finite and nonnegative, got {epsilon}"
        )));
    }
    if x.shape().len() != 2 || x.rows() != labels.len() {
        return Err(Error::shape(alloc::format!(
            "{} labels for inputs {:?}",
            labels.len(),
            x.shape()
        )));
    }
    let eps = epsilon as f32;
    let mut net = source.clone();
    let mut out = x.clone();
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(ATTACK_CHUNK) {
        let xb = x.select_rows(chunk)?;
        let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let logits = net.forward(&xb)?;
        let (_, g) = softmax_cross_entropy(&logits, &yb)?;
        let grad = net.backward_input(&g)?;
        grad.ensure_finite("FGSM input gradient")?;
        let w = x.cols();
        let dst = &mut out.data_mut()[chunk[0] * w..(chunk[0] + chunk.len()) * w];
        for (v, &g) in dst.iter_mut().zip(grad.data()) {
            let step = if g > 0.0 {
                eps
            } else if g < 0.0 {
                -eps
            } else {
                0.0
            };
            *v = (*v + step).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Maps inputs through the model's encoder and decoder.
pub fn defend_refine(model: &impl Reconstruct, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    model.reconstruct_rows(x)
}

pub fn add_noise(x: &Tensor<f32>, cfg: &NoiseConfig) -> Result<Tensor<f32>> {
    let normal = Normal::new(0.0, cfg.noise_sigma)
        .ok()
        .filter(|_| cfg.noise_sigma >= 0.0)
        .ok_or_else(|| Error::invalid(alloc::format!("noise σ must be nonnegative, got {}", cfg.noise_sigma)))?;
    let mut r = rng::seeded(cfg.seed);
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + normal.sample(&mut r)).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}
