use alloc::vec;
use alloc::vec::Vec;

use crate::adam::{Adam, AdamConfig};
use crate::data::batch_indices;
use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::loss::{argmax_rows, one_vs_rest_hinge};
use crate::network::Network;
use crate::rng;
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty `l2/2 · ‖W‖²` on the weights (not the bias).
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-2,
            l2: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// One-vs-rest linear classifier over standardized features.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    /// `(n_classes, d)`
    pub weight: Tensor<f32>,
    /// `(n_classes)`
    pub bias: Tensor<f32>,
    mean: Vec<f32>,
    scale: Vec<f32>,
    pub config: ProbeConfig,
}

fn standardize(x: &Tensor<f32>, mean: &[f32], scale: &[f32]) -> Tensor<f32> {
    let mut out = x.clone();
    let d = mean.len();
    for row in out.data_mut().chunks_exact_mut(d) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}

impl LinearProbe {
    pub fn scores(&self, latents: &Tensor<f32>) -> Result<Tensor<f32>> {
        if latents.shape().len() != 2 || latents.cols() != self.mean.len() {
            return Err(Error::shape(alloc::format!(
                "probe expects width {}, got {:?}",
                self.mean.len(),
                latents.shape()
            )));
        }
        let layer = Layer::affine(self.weight.clone(), self.bias.clone())?;
        Ok(layer.predict(&standardize(latents, &self.mean, &self.scale)))
    }

    pub fn predict(&self, latents: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(latents)?))
    }

    pub fn accuracy(&self, latents: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(latents)?;
        if pred.len() != labels.len() {
            return Err(Error::shape("label count differs from latent rows"));
        }
        Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
    }
}

/// Trains a linear probe with one-vs-rest hinge loss and L2 using Adam.
pub fn train_probe(latents: &Tensor<f32>, labels: &[usize], cfg: &ProbeConfig) -> Result<LinearProbe> {
    if latents.shape().len() != 2 || latents.rows() != labels.len() {
        return Err(Error::shape(alloc::format!(
            "{} labels for latents {:?}",
            labels.len(),
            latents.shape()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::invalid("a probe needs at least two classes"));
    }
    let n = latents.rows() as f64;
    let d = latents.cols();
    let mut mean = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    for row in latents.iter_rows() {
        for ((m, s), &v) in mean.iter_mut().zip(&mut sq).zip(row) {
            *m += v as f64;
            *s += v as f64 * v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / n) as f32).collect();
    let scale: Vec<f32> = sq
        .iter()
        .zip(&mean)
        .map(|(s, &m)| ((s / n - (m as f64).powi(2)).max(0.0).sqrt().max(1e-6)) as f32)
        .collect();
    let x = standardize(latents, &mean, &scale);

    let mut net = Network::new(
        d,
        vec![Layer::affine(
            Tensor::zeros(&[n_classes, d]),
            Tensor::zeros(&[n_classes]),
        )?],
    )?;
    let mut adam = Adam::new(AdamConfig::with_learning_rate(cfg.learning_rate), &net.params());
    let l2 = cfg.l2 as f32;
    for epoch in 0..cfg.epochs {
        let mut r = rng::derive(cfg.seed, epoch as u64);
        for idx in batch_indices(x.rows(), cfg.batch_size, &mut r)? {
            let xb = x.select_rows(&idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let scores = net.forward(&xb)?;
            let (_, g) = one_vs_rest_hinge(&scores, &yb)?;
            let mut grads = net.backward(&g)?.param_grads;
            let w = net.params()[0];
            for (gv, &wv) in grads[0].data_mut().iter_mut().zip(w.data()) {
                *gv += l2 * wv;
            }
            net.apply_adam(&mut adam, &grads)?;
        }
    }
    let params = net.params();
    Ok(LinearProbe {
        weight: params[0].clone(),
        bias: params[1].clone(),
        mean,
        scale,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, synth_blobs, SplitSpec};
    use rand::seq::SliceRandom;

    #[test]
    fn separable_blobs_are_classified_perfectly() {
        let ds = synth_blobs(2, 100, 6, 8.0, 2).unwrap();
        let sp = split(
            &ds,
            &SplitSpec {
                train: 150,
                test: 50,
                substitute: 0,
                seed: 0,
            },
        )
        .unwrap();
        let (train, test, _) = sp.datasets(&ds).unwrap();
        let probe = train_probe(&train.rows(), train.labels().unwrap(), &ProbeConfig::default()).unwrap();
        assert_eq!(probe.accuracy(&test.rows(), test.labels().unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let ds = synth_blobs(10, 100, 8, 3.0, 7).unwrap();
        let mut labels = ds.labels().unwrap().to_vec();
        labels.shuffle(&mut rng::seeded(1));
        let rows = ds.rows();
        let train_idx: Vec<usize> = (0..1000).filter(|i| i % 5 != 0).collect();
        let test_idx: Vec<usize> = (0..1000).filter(|i| i % 5 == 0).collect();
        let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
        let cfg = ProbeConfig {
            epochs: 10,
            ..Default::default()
        };
        let probe = train_probe(&rows.select_rows(&train_idx).unwrap(), &pick(&train_idx), &cfg).unwrap();
        let acc = probe
            .accuracy(&rows.select_rows(&test_idx).unwrap(), &pick(&test_idx))
            .unwrap();
        assert!((acc - 0.1).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn single_class_is_rejected_and_training_is_deterministic() {
        let ds = synth_blobs(3, 20, 4, 5.0, 1).unwrap();
        let rows = ds.rows();
        assert!(train_probe(&rows, &vec![1; 60], &ProbeConfig::default()).is_err());
        let a = train_probe(&rows, ds.labels().unwrap(), &ProbeConfig::default()).unwrap();
        let b = train_probe(&rows, ds.labels().unwrap(), &ProbeConfig::default()).unwrap();
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
    }
}
