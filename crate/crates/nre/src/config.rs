//! Flat `key = value` run configuration.
//!
//! Values are resolved per key from, in order of precedence, command-line
//! overrides, the config file, the `NRE_SEED` environment variable (for
//! `seed` only) and built-in defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use nre_core::eval::{AttackMode, ClassifierConfig, NoiseConfig, ProbeConfig};
use nre_core::nre::{AeArchitecture, LossWeights, PretrainConfig, QueryMode, TrainConfig};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SEED_ENV: &str = "NRE_SEED";

/// Every accepted key with its default; `None` marks keys without one.
const KEYS: &[(&str, Option<&str>)] = &[
    ("train_images", None),
    ("train_labels", None),
    ("image_dir", None),
    ("patch_size", Some("0")),
    ("patch_stride", Some("0")),
    ("train_count", Some("10000")),
    ("test_count", Some("2000")),
    ("substitute_count", Some("150")),
    ("holdout_class", None),
    ("architecture", Some("784,256,32")),
    ("pretrain_epochs", Some("40")),
    ("pretrain_learning_rate", Some("0.001")),
    ("lambda", Some("0.5,0.25,0.25")),
    ("t", Some("1")),
    ("k", Some("10")),
    ("kmeans_iters", Some("50")),
    ("learning_rate", Some("0.0001")),
    ("epochs", Some("40")),
    ("batch_size", Some("64")),
    ("refresh_interval", Some("1")),
    ("query_mode", Some("by-reconstruction")),
    ("normalize_by_t", Some("false")),
    ("probe_epochs", Some("30")),
    ("probe_learning_rate", Some("0.01")),
    ("probe_l2", Some("0.0001")),
    ("epsilons", Some("0.01,0.1,0.2,0.3")),
    ("attack_mode", Some("black-box-substitute")),
    ("classifier_hidden", Some("128")),
    ("classifier_epochs", Some("10")),
    ("classifier_learning_rate", Some("0.001")),
    ("substitute_hidden", Some("128")),
    ("substitute_epochs", Some("50")),
    ("noise_sigma", Some("0.2")),
    ("seed", Some("0")),
    ("output_dir", Some("runs")),
];

/// Where the training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: Option<PathBuf> },
    PgmFolder(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Every key with its resolved value, defaults included.
    pub values: BTreeMap<String, String>,
    pub data: DataSource,
    pub patch: Option<(usize, usize)>,
    pub train_count: usize,
    pub test_count: usize,
    pub substitute_count: usize,
    pub holdout_class: Option<usize>,
    pub architecture: AeArchitecture,
    pub pretrain: PretrainConfig,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub epsilons: Vec<f64>,
    pub attack_mode: AttackMode,
    pub classifier: ClassifierConfig,
    pub substitute: ClassifierConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::config(format!("unknown key {key:?}")))
    }
}

fn parse<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = &values[key];
    raw.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {raw:?}")))
}

fn list<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    let raw = &values[key];
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse {raw:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Resolves a configuration from file contents, overrides and the value
    /// of `NRE_SEED`.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)], env_seed: Option<&str>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in KEYS {
            if let Some(v) = v {
                values.insert((*k).to_owned(), (*v).to_owned());
            }
        }
        if let Some(seed) = env_seed {
            values.insert("seed".into(), seed.trim().to_owned());
        }
        let mut from_file = BTreeMap::new();
        for (k, v) in parse_pairs(file.unwrap_or_default())? {
            known(&k)?;
            if from_file.insert(k.clone(), ()).is_some() {
                return Err(Error::config(format!("key {k:?} given twice")));
            }
            values.insert(k, v);
        }
        for (k, v) in overrides {
            known(k)?;
            values.insert(k.clone(), v.clone());
        }
        Self::from_values(values)
    }

    fn from_values(values: BTreeMap<String, String>) -> Result<Self> {
        let data = match (values.get("train_images"), values.get("image_dir")) {
            (Some(_), Some(_)) => return Err(Error::config("give either train_images or image_dir, not both")),
            (Some(images), None) => DataSource::Idx {
                images: images.into(),
                labels: values.get("train_labels").map(PathBuf::from),
            },
            (None, Some(dir)) => DataSource::PgmFolder(dir.into()),
            (None, None) => return Err(Error::config("missing dataset path: set train_images (or image_dir)")),
        };
        let patch_size: usize = parse(&values, "patch_size")?;
        let patch_stride: usize = parse(&values, "patch_stride")?;
        let patch = (patch_size > 0).then_some((patch_size, if patch_stride == 0 { patch_size } else { patch_stride }));
        let seed: u64 = parse(&values, "seed")?;
        let lambda: Vec<f64> = list(&values, "lambda")?;
        if lambda.len() != 3 {
            return Err(Error::config(format!(
                "lambda needs three values, got {}",
                lambda.len()
            )));
        }
        let weights =
            LossWeights::new(lambda[0], lambda[1], lambda[2]).map_err(|e| Error::config(format!("lambda: {e}")))?;
        let architecture = AeArchitecture::new(list(&values, "architecture")?)
            .map_err(|e| Error::config(format!("architecture: {e}")))?;
        let query_mode = QueryMode::from_name(&values["query_mode"])
            .ok_or_else(|| Error::config(format!("query_mode: unknown mode {:?}", values["query_mode"])))?;
        let attack_mode = AttackMode::from_name(&values["attack_mode"])
            .ok_or_else(|| Error::config(format!("attack_mode: unknown mode {:?}", values["attack_mode"])))?;
        let train = TrainConfig {
            t: parse(&values, "t")?,
            k: parse(&values, "k")?,
            kmeans_iters: parse(&values, "kmeans_iters")?,
            learning_rate: parse(&values, "learning_rate")?,
            epochs: parse(&values, "epochs")?,
            batch_size: parse(&values, "batch_size")?,
            refresh_interval: parse(&values, "refresh_interval")?,
            seed,
            query_mode,
            normalize_by_t: parse(&values, "normalize_by_t")?,
        };
        train.validate().map_err(|e| Error::config(e.to_string()))?;
        let pretrain = PretrainConfig {
            epochs: parse(&values, "pretrain_epochs")?,
            learning_rate: parse(&values, "pretrain_learning_rate")?,
            batch_size: train.batch_size,
            seed,
        };
        let epsilons: Vec<f64> = list(&values, "epsilons")?;
        if epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::config("epsilons must be finite and nonnegative"));
        }
        let noise_sigma: f64 = parse(&values, "noise_sigma")?;
        if !(noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be nonnegative"));
        }
        let classifier = ClassifierConfig {
            hidden: list(&values, "classifier_hidden")?,
            epochs: parse(&values, "classifier_epochs")?,
            learning_rate: parse(&values, "classifier_learning_rate")?,
            batch_size: train.batch_size,
            seed,
        };
        let substitute = ClassifierConfig {
            hidden: list(&values, "substitute_hidden")?,
            epochs: parse(&values, "substitute_epochs")?,
            seed: seed ^ 0x5b5b,
            ..classifier.clone()
        };
        Ok(Self {
            data,
            patch,
            train_count: parse(&values, "train_count")?,
            test_count: parse(&values, "test_count")?,
            substitute_count: parse(&values, "substitute_count")?,
            holdout_class: values
                .get("holdout_class")
                .map(|_| parse(&values, "holdout_class"))
                .transpose()?,
            architecture,
            pretrain,
            weights,
            train,
            probe: ProbeConfig {
                epochs: parse(&values, "probe_epochs")?,
                learning_rate: parse(&values, "probe_learning_rate")?,
                l2: parse(&values, "probe_l2")?,
                batch_size: 64,
                seed,
            },
            epsilons,
            attack_mode,
            classifier,
            substitute,
            noise: NoiseConfig { noise_sigma, seed },
            seed,
            output_dir: values["output_dir"].clone().into(),
            values,
        })
    }

    /// Hex digest of every resolved setting except the output directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.values.iter().filter(|(k, _)| *k != "output_dir") {
            h.update(format!("{k}={v}\n"));
        }
        h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `<output_dir>/<hash>-seed<seed>`: one directory per distinct
    /// configuration.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-seed{}", self.hash(), self.seed))
    }

    /// The resolved configuration in the file format, one key per line.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
