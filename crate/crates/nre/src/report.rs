//! Run artifacts: evaluation reports (JSON), the per-ε defense table (CSV),
//! per-epoch training metrics (JSON lines) and latent exports (CSV).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nre_core::nre::EpochMetrics;
use nre_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::DefenseRow;

/// Result of one evaluation task. `metrics` holds rates in `[0, 1]`;
/// `statistics` holds unbounded companion values such as mean scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub statistics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub defense: Vec<DefenseRow>,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(task: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            task: task.to_owned(),
            seed,
            metrics: BTreeMap::new(),
            statistics: BTreeMap::new(),
            defense: Vec::new(),
            config,
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Data(format!("metric {name} = {value} outside [0, 1]")));
        }
        self.metrics.insert(name, value);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("serializing report: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("parsing report: {e}")))
    }

    /// Writes `eval-<task>.json`, plus `defense.csv` when the report has a
    /// defense table. Returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let json = dir.join(format!("eval-{}.json", self.task));
        fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
        let mut written = vec![json];
        if !self.defense.is_empty() {
            let csv = dir.join("defense.csv");
            write_defense_csv(&csv, &self.defense)?;
            written.push(csv);
        }
        Ok(written)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Columns `epsilon,no_defense,plain_ae_refine,nre_refine`, one row per ε.
pub fn write_defense_csv(path: &Path, rows: &[DefenseRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_defense_csv(path: &Path) -> Result<Vec<DefenseRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Header `index,z0,…,z{d-1}`, one row per sample.
pub fn write_latents_csv(path: &Path, latents: &Tensor<f32>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = std::iter::once("index".to_owned()).chain((0..latents.cols()).map(|j| format!("z{j}")));
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for i in 0..latents.rows() {
        let row = std::iter::once(i.to_string()).chain(latents.row(i).iter().map(f32::to_string));
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct MetricLine {
    epoch: usize,
    loss: f64,
    term1: f64,
    term2: f64,
    term3: f64,
    mining_violations: usize,
    wall_ms: u64,
}

/// Appends one JSON object per epoch.
pub struct MetricsLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            out: BufWriter::new(file),
        })
    }

    pub fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        let line = MetricLine {
            epoch: m.epoch,
            loss: m.loss,
            term1: m.term1,
            term2: m.term2,
            term3: m.term3,
            mining_violations: m.mining_violations,
            wall_ms: m.wall_ms,
        };
        let text = serde_json::to_string(&line).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|line| {
            let m: MetricLine =
                serde_json::from_str(line).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            Ok(EpochMetrics {
                epoch: m.epoch,
                loss: m.loss,
                term1: m.term1,
                term2: m.term2,
                term3: m.term3,
                mining_violations: m.mining_violations,
                wall_ms: m.wall_ms,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defense_csv_round_trips_with_the_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let rows = vec![
            DefenseRow {
                epsilon: 0.1,
                no_defense: 0.5,
                plain_ae_refine: 0.75,
                nre_refine: 0.8,
            },
            DefenseRow {
                epsilon: 0.2,
                no_defense: 0.25,
                plain_ae_refine: 0.5,
                nre_refine: 0.625,
            },
        ];
        write_defense_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epsilon,no_defense,plain_ae_refine,nre_refine\n"));
        assert_eq!(read_defense_csv(&path).unwrap(), rows);
    }

    #[test]
    fn report_rejects_out_of_range_metrics_and_round_trips() {
        let mut r = EvalReport::new("probe", 3, BTreeMap::from([("seed".into(), "3".into())]));
        assert!(r.metric("accuracy", 1.5).is_err());
        r.metric("accuracy", 0.5).unwrap();
        r.statistics.insert("mean".into(), 12.0);
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn metrics_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut log = MetricsLog::create(&path).unwrap();
        let lines: Vec<EpochMetrics> = (0..3)
            .map(|epoch| EpochMetrics {
                epoch,
                loss: 0.5 / (epoch + 1) as f64,
                term1: 0.25,
                ..Default::default()
            })
            .collect();
        for m in &lines {
            log.record(m).unwrap();
        }
        assert_eq!(read_metrics(&path).unwrap(), lines);
    }
}
