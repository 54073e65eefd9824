//! The pipeline steps behind each subcommand. Every step reads a resolved
//! [`RunConfig`] and writes its artifacts under the run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use nre_core::data::{extract_patches, Dataset, SplitSpec};
use nre_core::nre::{mine_dataset, pretrain_ae, train_nre, Autoencoder, EpochMetrics, NreModel};
use nre_core::similarity::{cosine_sim, encode_all, ClusterModel};

use crate::checkpoint::{Checkpoint, Model};
use crate::config::{DataSource, RunConfig};
use crate::error::{Error, FormatError, Result};
use crate::experiment::{self, DefenseConfig, Detection, Subsets};
use crate::idx::load_idx;
use crate::pgm::load_pgm_folder;
use crate::report::{write_latents_csv, EvalReport, MetricsLog};

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const NRE_CHECKPOINT: &str = "nre.ckpt";

/// Evaluation tasks accepted by `eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Probe,
    Defense,
    Anomaly,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Probe => "probe",
            Task::Defense => "defense",
            Task::Anomaly => "anomaly",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "probe" => Ok(Task::Probe),
            "defense" => Ok(Task::Defense),
            "anomaly" => Ok(Task::Anomaly),
            other => Err(Error::config(format!(
                "unknown eval task {other:?} (expected probe, defense or anomaly)"
            ))),
        }
    }
}

/// Creates the run directory and records the resolved configuration in it.
pub fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("config.txt");
    fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

/// Loads the configured dataset and splits it. With `holdout_class` set, the
/// class is removed from the training subset only. With a patch size set,
/// every subset is cut into patches after splitting.
pub fn load_data(cfg: &RunConfig) -> Result<Subsets> {
    let ds = match &cfg.data {
        DataSource::Idx { images, labels } => load_idx(images, labels.as_deref())?,
        DataSource::PgmFolder(dir) => load_pgm_folder(dir)?,
    };
    let spec = SplitSpec {
        train: cfg.train_count,
        test: cfg.test_count,
        substitute: cfg.substitute_count,
        seed: cfg.seed,
    };
    let mut data = experiment::subsets(&ds, &spec)?;
    if let Some(class) = cfg.holdout_class {
        data.train = experiment::without_class(&data.train, class)?;
    }
    if let Some((size, stride)) = cfg.patch {
        let cut = |d: &Dataset| extract_patches(d, size, size, stride);
        data.train = cut(&data.train)?;
        data.test = cut(&data.test)?;
        data.substitute = data.substitute.as_ref().map(cut).transpose()?;
    }
    info!(
        "data: {} train, {} test, {} substitute rows of width {}",
        data.train.len(),
        data.test.len(),
        data.substitute.as_ref().map_or(0, Dataset::len),
        data.train.pixels_per_image()
    );
    Ok(data)
}

/// Runs a fallible step inside a training callback. The step's error is
/// kept in `slot` so the caller can report it instead of the abort signal
/// handed back to the training loop.
fn stash(slot: &mut Option<Error>, step: Result<()>) -> nre_core::Result<()> {
    step.map_err(|e| {
        let abort = nre_core::Error::InvalidParameter(format!("aborted: {e}"));
        *slot = Some(e);
        abort
    })
}

fn finish<T>(slot: Option<Error>, outcome: nre_core::Result<T>) -> Result<T> {
    match (slot, outcome) {
        (Some(e), _) => Err(e),
        (None, r) => Ok(r?),
    }
}

fn with_clock(start: &Instant, m: &EpochMetrics) -> EpochMetrics {
    EpochMetrics {
        wall_ms: start.elapsed().as_millis() as u64,
        ..m.clone()
    }
}

/// Trains the plain autoencoder, checkpointing after every epoch. Returns
/// the checkpoint path.
pub fn pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg)?;
    let data = load_data(cfg)?;
    let ckpt_path = dir.join(PRETRAIN_CHECKPOINT);
    let mut log = MetricsLog::create(&dir.join("pretrain.metrics.jsonl"))?;
    let start = Instant::now();
    let mut failed = None;
    let outcome = pretrain_ae(&data.train.rows(), &cfg.architecture, &cfg.pretrain, |m, ae| {
        let m = with_clock(&start, m);
        info!("pretrain epoch {} loss {:.6} ({} ms)", m.epoch, m.loss, m.wall_ms);
        let step = log
            .record(&m)
            .and_then(|_| checkpoint(cfg, Model::Autoencoder(ae.clone()), m.epoch + 1).save(&ckpt_path));
        stash(&mut failed, step)
    });
    finish(failed, outcome)?;
    if cfg.pretrain.epochs == 0 {
        let ae = Autoencoder::new(&cfg.architecture, nre_core::rng::mix(cfg.seed, 1))?;
        checkpoint(cfg, Model::Autoencoder(ae), 0).save(&ckpt_path)?;
    }
    Ok(ckpt_path)
}

fn checkpoint(cfg: &RunConfig, model: Model, epoch: usize) -> Checkpoint {
    Checkpoint {
        model,
        architecture: cfg.architecture.clone(),
        config: cfg.values.clone(),
        seed: cfg.seed,
        epoch,
    }
}

/// Loads a pretrained autoencoder and checks it matches the configured
/// architecture.
pub fn load_pretrained(cfg: &RunConfig, path: &Path) -> Result<Autoencoder> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.architecture != cfg.architecture {
        return Err(Error::config(format!(
            "{} holds architecture {:?} but the configuration asks for {:?}",
            path.display(),
            ckpt.architecture.encoder_dims,
            cfg.architecture.encoder_dims
        )));
    }
    Ok(ckpt.model.autoencoder())
}

pub fn load_nre(path: &Path) -> Result<NreModel> {
    match Checkpoint::load(path)?.model {
        Model::Nre(m) => Ok(m),
        Model::Autoencoder(_) => Err(Error::format(
            path,
            FormatError::Malformed("expected an NRE checkpoint, found a plain autoencoder".into()),
        )),
    }
}

/// Fine-tunes the pretrained autoencoder with the NRE loss, checkpointing
/// after every epoch. Returns the checkpoint path.
pub fn train(cfg: &RunConfig, pretrained: &Path) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg)?;
    let ae = load_pretrained(cfg, pretrained)?;
    if !cfg.weights.reconstruction_dominates() {
        warn!(
            "lambda = {:?}: the reconstruction weight should exceed the other two",
            cfg.weights.as_array()
        );
    }
    let data = load_data(cfg)?;
    let ckpt_path = dir.join(NRE_CHECKPOINT);
    let mut log = MetricsLog::create(&dir.join("train.metrics.jsonl"))?;
    let start = Instant::now();
    let mut failed = None;
    let outcome = train_nre(&ae, &data.train.rows(), &cfg.train, &cfg.weights, |m, model| {
        let m = with_clock(&start, m);
        info!(
            "train epoch {} loss {:.6} terms {:.6} {:.6} {:.6} ({} ms)",
            m.epoch, m.loss, m.term1, m.term2, m.term3, m.wall_ms
        );
        let step = log
            .record(&m)
            .and_then(|_| checkpoint(cfg, Model::Nre(model.clone()), m.epoch + 1).save(&ckpt_path));
        stash(&mut failed, step)
    });
    let model = finish(failed, outcome)?;
    if cfg.train.epochs == 0 {
        checkpoint(cfg, Model::Nre(model), 0).save(&ckpt_path)?;
    }
    Ok(ckpt_path)
}

fn detection_metrics(report: &mut EvalReport, prefix: &str, d: &Detection) -> Result<()> {
    report.metric(format!("{prefix}_auc"), d.auc)?;
    report.metric(format!("{prefix}_eer"), d.eer)?;
    report
        .statistics
        .insert(format!("{prefix}_mean_normal_score"), d.mean_normal_score);
    report
        .statistics
        .insert(format!("{prefix}_mean_anomalous_score"), d.mean_anomalous_score);
    Ok(())
}

/// Runs one evaluation task on the pretrained and NRE checkpoints and
/// writes its report under the run directory.
pub fn eval(cfg: &RunConfig, task: Task, pretrained: &Path, nre: &Path) -> Result<EvalReport> {
    let dir = prepare_run_dir(cfg)?;
    let ae = load_pretrained(cfg, pretrained)?;
    let model = load_nre(nre)?;
    let data = load_data(cfg)?;
    let mut report = EvalReport::new(task.name(), cfg.seed, cfg.values.clone());
    match task {
        Task::Probe => {
            let p = experiment::probe(&ae, &model, &data, &cfg.probe)?;
            report.metric("plain_ae_accuracy", p.plain_ae)?;
            report.metric("nre_accuracy", p.nre)?;
        }
        Task::Defense => {
            let d = experiment::defense(
                &ae,
                &model,
                &data,
                &DefenseConfig {
                    epsilons: cfg.epsilons.clone(),
                    mode: cfg.attack_mode,
                    target: cfg.classifier.clone(),
                    substitute: cfg.substitute.clone(),
                    noise: cfg.noise,
                },
            )?;
            report.metric("target_accuracy", d.target_accuracy)?;
            report.metric("source_accuracy", d.source_accuracy)?;
            for (name, row) in [("clean", &d.clean), ("noisy", &d.noisy)] {
                report.metric(format!("{name}_no_defense"), row.no_defense)?;
                report.metric(format!("{name}_plain_ae_refine"), row.plain_ae_refine)?;
                report.metric(format!("{name}_nre_refine"), row.nre_refine)?;
            }
            for row in &d.rows {
                report.metric(format!("eps{}_no_defense", row.epsilon), row.no_defense)?;
                report.metric(format!("eps{}_plain_ae_refine", row.epsilon), row.plain_ae_refine)?;
                report.metric(format!("eps{}_nre_refine", row.epsilon), row.nre_refine)?;
            }
            report.defense = d.rows;
        }
        Task::Anomaly => {
            let class = cfg
                .holdout_class
                .ok_or_else(|| Error::config("anomaly evaluation needs holdout_class"))?;
            let a = experiment::anomaly(&ae, &model, &data.test, class)?;
            detection_metrics(&mut report, "plain_ae", &a.plain_ae)?;
            detection_metrics(&mut report, "nre", &a.nre)?;
        }
    }
    for path in report.write(&dir)? {
        info!("wrote {}", path.display());
    }
    Ok(report)
}

/// Encodes the training subset with the checkpoint's encoder and writes the
/// latents as CSV. Returns the number of rows written.
pub fn export_latents(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = load_data(cfg)?;
    let z = ckpt.model.encoder().predict(&data.train.rows())?;
    write_latents_csv(out, &z)?;
    Ok(z.rows())
}

/// Outcome of comparing single-cluster mining with exhaustive search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MineCheck {
    pub queries: usize,
    pub mismatches: usize,
}

/// The `t` best rows of `sims` (skipping `exclude`), best first, ties to the
/// lower index.
fn exhaustive(sims: &[f64], t: usize, exclude: &[usize], most_similar: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).filter(|j| !exclude.contains(j)).collect();
    order.sort_by(|&a, &b| {
        let ord = sims[a].total_cmp(&sims[b]);
        if most_similar { ord.reverse() } else { ord }.then(a.cmp(&b))
    });
    order.truncate(t);
    order
}

/// Mines neighbors and far samples for the reconstructions of the first
/// `samples` training rows with a single cluster, and compares every result
/// with an exhaustive search over the same latent table.
pub fn mine_check(cfg: &RunConfig, pretrained: &Path, samples: usize) -> Result<MineCheck> {
    let ae = load_pretrained(cfg, pretrained)?;
    let data = load_data(cfg)?;
    let n = samples.min(data.train.len());
    let idx: Vec<usize> = (0..n).collect();
    let rows = data.train.subset(&idx)?.rows();
    let table = encode_all(&ae.encoder.frozen_copy(), &rows, "mine-check")?;
    let clusters = ClusterModel::single(&table)?;
    let queries = ae.encoder.predict(&ae.reconstruct(&rows)?)?;
    let t = cfg.train.t;
    let mined = mine_dataset(&queries, &table, &clusters, None, t, cfg.seed)?;
    let mut mismatches = 0;
    for (i, result) in mined.results.iter().enumerate() {
        let q = queries.row(i);
        let sims = (0..n)
            .map(|j| cosine_sim(q, table.row(j)))
            .collect::<nre_core::Result<Vec<f64>>>()?;
        let near = exhaustive(&sims, t, &[i], true);
        let mut skip = near.clone();
        skip.push(i);
        let far = exhaustive(&sims, t, &skip, false);
        let got_near: Vec<usize> = result.neighbors.iter().map(|s| s.index).collect();
        let got_far: Vec<usize> = result.farthest.iter().map(|s| s.index).collect();
        if got_near != near || got_far != far {
            mismatches += 1;
        }
    }
    Ok(MineCheck { queries: n, mismatches })
}
