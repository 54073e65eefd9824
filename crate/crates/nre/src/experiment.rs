//! The three downstream protocols (latent probe, black-box FGSM defense,
//! holdout-class anomaly detection) over a pretrained autoencoder and its
//! NRE fine-tuned counterpart.

use std::path::Path;

use nre_core::data::{split, Dataset, SplitSpec};
use nre_core::eval::{
    accuracy, add_noise, anomaly_scores, defend_refine, eer, fgsm_attack, roc_auc, train_classifier, train_probe,
    train_substitute, AttackMode, ClassifierConfig, NoiseConfig, ProbeConfig,
};
use nre_core::nre::{Autoencoder, NreModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idx::load_idx;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Train, test and substitute subsets drawn from one labeled dataset.
#[derive(Clone, Debug)]
pub struct Subsets {
    pub train: Dataset,
    pub test: Dataset,
    pub substitute: Option<Dataset>,
}

pub fn subsets(ds: &Dataset, spec: &SplitSpec) -> Result<Subsets> {
    let (train, test, substitute) = split(ds, spec)?.datasets(ds)?;
    Ok(Subsets {
        train,
        test,
        substitute,
    })
}

/// Loads the MNIST training files from `dir` and splits them.
pub fn mnist_subsets(dir: &Path, spec: &SplitSpec) -> Result<Subsets> {
    let ds = load_idx(&dir.join(MNIST_TRAIN_IMAGES), Some(&dir.join(MNIST_TRAIN_LABELS)))?;
    subsets(&ds, spec)
}

fn labels(ds: &Dataset) -> Result<&[usize]> {
    ds.labels()
        .ok_or_else(|| Error::Data(format!("dataset {} has no labels", ds.name)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub plain_ae: f64,
    pub nre: f64,
}

/// Linear-probe test accuracy on the latents of both encoders.
pub fn probe(ae: &Autoencoder, nre: &NreModel, data: &Subsets, cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    let (train_x, test_x) = (data.train.rows(), data.test.rows());
    let (train_y, test_y) = (labels(&data.train)?, labels(&data.test)?);
    let run = |train_z, test_z| -> Result<f64> {
        let p = train_probe(&train_z, train_y, cfg)?;
        Ok(p.accuracy(&test_z, test_y)?)
    };
    Ok(ProbeOutcome {
        plain_ae: run(ae.encode(&train_x)?, ae.encode(&test_x)?)?,
        nre: run(nre.encode(&train_x)?, nre.encode(&test_x)?)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DefenseConfig {
    pub epsilons: Vec<f64>,
    pub mode: AttackMode,
    pub target: ClassifierConfig,
    pub substitute: ClassifierConfig,
    /// Gaussian noise applied for the robustness comparison.
    pub noise: NoiseConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub epsilon: f64,
    pub no_defense: f64,
    pub plain_ae_refine: f64,
    pub nre_refine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseOutcome {
    pub target_accuracy: f64,
    /// Accuracy of the gradient source on the test set (equals the target's
    /// in white-box mode).
    pub source_accuracy: f64,
    pub clean: DefenseRow,
    pub noisy: DefenseRow,
    pub rows: Vec<DefenseRow>,
}

/// FGSM against a classifier trained on the training subset, with inputs
/// refined by either autoencoder before classification.
pub fn defense(ae: &Autoencoder, nre: &NreModel, data: &Subsets, cfg: &DefenseConfig) -> Result<DefenseOutcome> {
    let train_y = labels(&data.train)?;
    let n_classes = data.train.n_classes().max(data.test.n_classes());
    let target = train_classifier(&data.train.rows(), train_y, n_classes, &cfg.target)?;
    let source = match cfg.mode {
        AttackMode::WhiteBox => target.clone(),
        AttackMode::BlackBoxSubstitute => {
            let sub = data
                .substitute
                .as_ref()
                .ok_or_else(|| Error::config("black-box attacks need a substitute split"))?;
            train_substitute(&sub.rows(), labels(sub)?, n_classes, &cfg.substitute)?
        }
    };
    let (x, y) = (data.test.rows(), labels(&data.test)?);
    let row = |epsilon: f64, inputs: &nre_core::Tensor<f32>| -> Result<DefenseRow> {
        Ok(DefenseRow {
            epsilon,
            no_defense: accuracy(&target, inputs, y)?,
            plain_ae_refine: accuracy(&target, &defend_refine(ae, inputs)?, y)?,
            nre_refine: accuracy(&target, &defend_refine(nre, inputs)?, y)?,
        })
    };
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        rows.push(row(eps, &fgsm_attack(&source, &x, y, eps)?)?);
    }
    Ok(DefenseOutcome {
        target_accuracy: accuracy(&target, &x, y)?,
        source_accuracy: accuracy(&source, &x, y)?,
        clean: row(0.0, &x)?,
        noisy: row(0.0, &add_noise(&x, &cfg.noise)?)?,
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub auc: f64,
    pub eer: f64,
    pub mean_normal_score: f64,
    pub mean_anomalous_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyOutcome {
    pub plain_ae: Detection,
    pub nre: Detection,
}

/// Removes `class` from a labeled dataset, for normal-only training.
pub fn without_class(ds: &Dataset, class: usize) -> Result<Dataset> {
    Ok(ds.filter_labels(|l| l != class)?)
}

fn detection(
    model: &impl nre_core::nre::Reconstruct,
    x: &nre_core::Tensor<f32>,
    anomalous: &[bool],
) -> Result<Detection> {
    let scores = anomaly_scores(model, x)?;
    let mean = |want: bool| {
        let picked: Vec<f64> = scores
            .iter()
            .zip(anomalous)
            .filter(|(_, &a)| a == want)
            .map(|(s, _)| *s)
            .collect();
        picked.iter().sum::<f64>() / picked.len().max(1) as f64
    };
    Ok(Detection {
        auc: roc_auc(&scores, anomalous)?,
        eer: eer(&scores, anomalous)?,
        mean_normal_score: mean(false),
        mean_anomalous_score: mean(true),
    })
}

/// Reconstruction-error detection of `anomalous_class` on the test subset.
pub fn anomaly(ae: &Autoencoder, nre: &NreModel, test: &Dataset, anomalous_class: usize) -> Result<AnomalyOutcome> {
    let flags: Vec<bool> = labels(test)?.iter().map(|&l| l == anomalous_class).collect();
    let x = test.rows();
    Ok(AnomalyOutcome {
        plain_ae: detection(ae, &x, &flags)?,
        nre: detection(nre, &x, &flags)?,
    })
}
