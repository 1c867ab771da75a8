//! Per-run result records, their aggregates and the on-disk layout:
//! `records.jsonl` (append-only), `summary.csv` and `plotdata/*.csv`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Dynamical characterisation of an encoder system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub lambda_max: f64,
    pub lambda_sum: f64,
    pub ais: f64,
    pub tau_corr: f64,
    pub tau_corr_exceeds_window: bool,
}

/// Coordinates of a run inside an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
}

impl Point {
    pub fn labelled(label: impl Into<String>) -> Self {
        Point {
            label: label.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub point: Point,
    pub accuracy: Option<f64>,
    pub convergence_epoch: Option<usize>,
    /// Training-pass spikes of the convergence epoch.
    pub total_spikes: Option<f64>,
    pub dynamics: Option<Dynamics>,
    /// Experiment-specific scalars (deletion accuracies, RL returns, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn new(experiment: &str, config_hash: &str, seed: u64, point: Point) -> Self {
        RunRecord {
            experiment: experiment.into(),
            config_hash: config_hash.into(),
            seed,
            point,
            accuracy: None,
            convergence_epoch: None,
            total_spikes: None,
            dynamics: None,
            extra: BTreeMap::new(),
            wall_time: 0.0,
            error: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// A named scalar: `accuracy`, `convergence_epoch`, `total_spikes`,
    /// a dynamics field or an `extra` key.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "convergence_epoch" => self.convergence_epoch.map(|e| e as f64),
            "total_spikes" => self.total_spikes,
            "lambda_max" => self.dynamics.map(|d| d.lambda_max),
            "lambda_sum" => self.dynamics.map(|d| d.lambda_sum),
            "ais" => self.dynamics.map(|d| d.ais),
            "tau_corr" => self.dynamics.map(|d| d.tau_corr),
            other => self.extra.get(other).copied(),
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Aggregate { mean, std, n })
    }
}

/// All runs sharing one grid point, with aggregates over the successful ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub config_hash: String,
    pub point: Point,
    pub runs: Vec<RunRecord>,
    pub failed: usize,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub dynamics: Option<Dynamics>,
}

impl ExperimentRecord {
    pub fn metric(&self, name: &str) -> Option<Aggregate> {
        self.aggregates.get(name).copied()
    }
}

/// Groups runs by point in first-appearance order and aggregates every
/// metric present in at least one successful run.
pub fn aggregate(runs: &[RunRecord]) -> Vec<ExperimentRecord> {
    let mut out: Vec<ExperimentRecord> = Vec::new();
    for r in runs {
        let slot = out
            .iter_mut()
            .find(|e| e.point == r.point && e.experiment == r.experiment);
        match slot {
            Some(e) => e.runs.push(r.clone()),
            None => out.push(ExperimentRecord {
                experiment: r.experiment.clone(),
                config_hash: r.config_hash.clone(),
                point: r.point.clone(),
                runs: vec![r.clone()],
                failed: 0,
                aggregates: BTreeMap::new(),
                dynamics: None,
            }),
        }
    }
    for e in &mut out {
        e.runs.sort_by_key(|r| r.seed);
        e.failed = e.runs.iter().filter(|r| !r.is_ok()).count();
        e.dynamics = e.runs.iter().find_map(|r| r.dynamics);
        let mut names: Vec<String> = vec!["accuracy".into(), "convergence_epoch".into(), "total_spikes".into()];
        for r in &e.runs {
            for k in r.extra.keys() {
                if !names.contains(k) {
                    names.push(k.clone());
                }
            }
        }
        for name in names {
            let vals: Vec<f64> = e
                .runs
                .iter()
                .filter(|r| r.is_ok())
                .filter_map(|r| r.metric(&name))
                .collect();
            if let Some(a) = Aggregate::of(&vals) {
                e.aggregates.insert(name, a);
            }
        }
    }
    out
}

/// Serialized JSONL appender shared by all workers. Each record is flushed
/// as soon as it is written so an interrupted run keeps its finished points.
pub struct RecordWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordWriter {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join("records.jsonl");
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(RecordWriter {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().expect("record writer poisoned");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

const SUMMARY_METRICS: [&str; 3] = ["accuracy", "convergence_epoch", "total_spikes"];

/// One row per grid point: coordinates, run counts, dynamics and
/// mean/std of the standard metrics plus any extras.
pub fn write_summary(path: &Path, exps: &[ExperimentRecord]) -> Result<()> {
    let mut extras: Vec<String> = Vec::new();
    for e in exps {
        for k in e.aggregates.keys() {
            if !SUMMARY_METRICS.contains(&k.as_str()) && !extras.contains(k) {
                extras.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = [
        "experiment",
        "label",
        "system",
        "delta",
        "t_max",
        "n_steps",
        "runs",
        "failed",
        "lambda_max",
        "lambda_sum",
        "ais",
        "tau_corr",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in SUMMARY_METRICS
        .iter()
        .map(|s| s.to_string())
        .chain(extras.iter().cloned())
    {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in exps {
        let p = &e.point;
        let mut row = vec![
            e.experiment.clone(),
            p.label.clone(),
            p.system.clone().unwrap_or_default(),
            opt(p.delta),
            opt(p.t_max),
            p.n_steps.map(|n| n.to_string()).unwrap_or_default(),
            e.runs.len().to_string(),
            e.failed.to_string(),
            opt(e.dynamics.map(|d| d.lambda_max)),
            opt(e.dynamics.map(|d| d.lambda_sum)),
            opt(e.dynamics.map(|d| d.ais)),
            opt(e.dynamics.map(|d| d.tau_corr)),
        ];
        for m in SUMMARY_METRICS
            .iter()
            .map(|s| s.to_string())
            .chain(extras.iter().cloned())
        {
            let a = e.metric(&m);
            row.push(opt(a.map(|a| a.mean)));
            row.push(opt(a.map(|a| a.std)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// A plot series: `(x, y, ylo, yhi)` rows.
pub fn write_plotdata(dir: &Path, name: &str, rows: &[[f64; 4]]) -> Result<()> {
    let pd = dir.join("plotdata");
    fs::create_dir_all(&pd)?;
    let mut w = csv::Writer::from_path(pd.join(format!("{name}.csv"))).map_err(csv_err)?;
    w.write_record(["x", "y", "ylo", "yhi"]).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean +- std of `metric` against `x` for every point that has both.
pub fn series(exps: &[ExperimentRecord], x: impl Fn(&ExperimentRecord) -> Option<f64>, metric: &str) -> Vec<[f64; 4]> {
    let mut rows: Vec<[f64; 4]> = exps
        .iter()
        .filter_map(|e| {
            let a = e.metric(metric)?;
            Some([x(e)?, a.mean, a.mean - a.std, a.mean + a.std])
        })
        .collect();
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
    rows
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Runtime(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, label: &str, acc: Option<f64>) -> RunRecord {
        let mut r = RunRecord::new("t", "h", seed, Point::labelled(label));
        r.accuracy = acc;
        if acc.is_none() {
            r.error = Some("boom".into());
        }
        r
    }

    #[test]
    fn aggregate_groups_and_skips_failures() {
        let runs = vec![
            rec(1, "a", Some(0.5)),
            rec(0, "b", Some(0.9)),
            rec(0, "a", Some(0.7)),
            rec(2, "a", None),
        ];
        let exps = aggregate(&runs);
        assert_eq!(exps.len(), 2);
        assert_eq!(exps[0].point.label, "a");
        assert_eq!(exps[0].runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(exps[0].failed, 1);
        let a = exps[0].metric("accuracy").unwrap();
        assert_eq!(a.n, 2);
        assert!((a.mean - 0.6).abs() < 1e-15);
        assert!((a.std - (0.02f64).sqrt()).abs() < 1e-15);
        assert_eq!(exps[1].metric("accuracy").unwrap().std, 0.0);
    }

    #[test]
    fn writer_appends_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let w = RecordWriter::open(dir.path()).unwrap();
        let mut r = rec(3, "x", Some(0.25));
        r.extra.insert("final_return".into(), 123.5);
        w.append(&r).unwrap();
        w.append(&rec(4, "x", None)).unwrap();
        drop(w);
        let w = RecordWriter::open(dir.path()).unwrap();
        w.append(&rec(5, "y", Some(1.0))).unwrap();
        let back = read_records(&dir.path().join("records.jsonl")).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0], r);
        assert_eq!(back[1].error.as_deref(), Some("boom"));
    }

    #[test]
    fn summary_and_plotdata_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = rec(0, "a", Some(0.5));
        a.point.delta = Some(2.0);
        let mut b = rec(1, "a", Some(0.7));
        b.point.delta = Some(2.0);
        let exps = aggregate(&[a, b]);
        write_summary(&dir.path().join("summary.csv"), &exps).unwrap();
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(text.lines().next().unwrap().contains("accuracy_mean"));
        assert_eq!(text.lines().count(), 2);
        let rows = series(&exps, |e| e.point.delta, "accuracy");
        assert_eq!(rows.len(), 1);
        write_plotdata(dir.path(), "acc", &rows).unwrap();
        let pd = fs::read_to_string(dir.path().join("plotdata/acc.csv")).unwrap();
        assert_eq!(pd.lines().next().unwrap(), "x,y,ylo,yhi");
    }
}
