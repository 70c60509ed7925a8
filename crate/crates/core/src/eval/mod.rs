//! Error metrics, evaluation protocols and report tables.

mod protocol;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterId, ClusterModel};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{angular_error, Angles};
use crate::nnet::{image_to_input, BranchedNet, Tensor};
use crate::train::routes;

pub use protocol::{
    ablation_grid, kfold_subjects_protocol, loso_protocol, person_specific_protocol, protocol_splits, run_protocol,
    AblationCell, AblationGrid, ExperimentConfig, Protocol,
};

const EVAL_CHUNK: usize = 128;

/// Anything that maps samples of one cluster to gaze predictions.
pub trait GazePredictor: Sync {
    /// Number of heads. A single head gets every sample routed to cluster 1.
    fn k(&self) -> usize;

    /// Predictions for `indices` of `dataset`, all routed to `cluster`.
    fn predict(&self, dataset: &Dataset, indices: &[usize], cluster: ClusterId) -> Result<Vec<Angles>>;
}

impl GazePredictor for BranchedNet<f32> {
    fn k(&self) -> usize {
        BranchedNet::k(self)
    }

    fn predict(&self, dataset: &Dataset, indices: &[usize], cluster: ClusterId) -> Result<Vec<Angles>> {
        let cfg = self.config();
        if dataset.width() != cfg.input_w || dataset.height() != cfg.input_h || dataset.channels() != cfg.input_channels {
            return Err(Error::Shape(format!(
                "dataset images are {}x{}x{}, network expects {}x{}x{}",
                dataset.width(),
                dataset.height(),
                dataset.channels(),
                cfg.input_w,
                cfg.input_h,
                cfg.input_channels
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.input_len());
        let mut heads = Vec::with_capacity(indices.len());
        for &i in indices {
            let (s, img) = dataset.get(i);
            data.extend_from_slice(image_to_input(img, cfg)?.data());
            heads.push(s.head);
        }
        let x = Tensor::new(vec![indices.len(), cfg.input_channels, cfg.input_h, cfg.input_w], data)?;
        Ok(self
            .forward_batch(&x, &heads, cluster)?
            .into_iter()
            .map(|o| Angles {
                pitch: o[0] as f64,
                yaw: o[1] as f64,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub subject: String,
    /// Cluster used for reporting; equals the routed head for branched networks.
    pub cluster: ClusterId,
    pub fold: usize,
    pub error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub key: String,
    pub count: usize,
    pub mean_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub repeat: usize,
    pub seed: u64,
    pub test_subjects: Vec<String>,
    pub train_count: usize,
    pub count: usize,
    pub mean_error_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub protocol: String,
    pub k: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub records: Vec<SampleRecord>,
    /// Pooled mean over all test samples.
    pub mean_error_deg: f64,
    /// Mean of the per-subject means.
    pub subject_mean_error_deg: f64,
    pub per_cluster: Vec<GroupMean>,
    pub per_subject: Vec<GroupMean>,
    pub folds: Vec<FoldResult>,
}

fn group_means<'a>(records: impl Iterator<Item = (String, &'a SampleRecord)>) -> Vec<GroupMean> {
    let mut acc: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (key, r) in records {
        let e = acc.entry(key).or_default();
        e.0 += 1;
        e.1 += r.error_deg;
    }
    acc.into_iter()
        .map(|(key, (count, sum))| GroupMean {
            key,
            count,
            mean_error_deg: sum / count as f64,
        })
        .collect()
}

impl EvalReport {
    /// Builds all aggregates from per-sample records. Records are put into a canonical
    /// order first, so the report does not depend on test-set order.
    pub fn from_records(meta: EvalMeta, mut records: Vec<SampleRecord>, mut folds: Vec<FoldResult>) -> Self {
        records.sort_by(|a, b| (a.fold, &a.subject, &a.id).cmp(&(b.fold, &b.subject, &b.id)));
        let n = records.len();
        let mean_error_deg = if n == 0 {
            f64::NAN
        } else {
            records.iter().map(|r| r.error_deg).sum::<f64>() / n as f64
        };
        // Zero-padded keys keep clusters in numeric order.
        let mut per_cluster = group_means(records.iter().map(|r| (format!("{:06}", r.cluster.get()), r)));
        for g in &mut per_cluster {
            g.key = g.key.trim_start_matches('0').to_string();
        }
        let per_subject = group_means(records.iter().map(|r| (r.subject.clone(), r)));
        let subject_mean_error_deg = if per_subject.is_empty() {
            f64::NAN
        } else {
            per_subject.iter().map(|g| g.mean_error_deg).sum::<f64>() / per_subject.len() as f64
        };
        for f in &mut folds {
            let (count, sum) = records
                .iter()
                .filter(|r| r.fold == f.fold)
                .fold((0usize, 0.0f64), |(c, s), r| (c + 1, s + r.error_deg));
            f.count = count;
            f.mean_error_deg = if count == 0 { f64::NAN } else { sum / count as f64 };
        }
        folds.sort_by_key(|f| f.fold);
        EvalReport {
            meta,
            records,
            mean_error_deg,
            subject_mean_error_deg,
            per_cluster,
            per_subject,
            folds,
        }
    }

    pub fn cluster_mean(&self, id: ClusterId) -> Option<&GroupMean> {
        let key = id.get().to_string();
        self.per_cluster.iter().find(|g| g.key == key)
    }

    pub fn subject_mean(&self, subject: &str) -> Option<&GroupMean> {
        self.per_subject.iter().find(|g| g.key == subject)
    }

    /// Mean of the per-fold means.
    pub fn fold_mean_error_deg(&self) -> f64 {
        self.folds.iter().map(|f| f.mean_error_deg).sum::<f64>() / self.folds.len() as f64
    }

    /// Header for [`EvalReport::summary_row`] with `k` cluster columns.
    pub fn summary_header(k: usize) -> String {
        let mut s = String::from("configuration,mean_error_deg,subject_mean_error_deg");
        for c in 1..=k {
            let _ = write!(s, ",cluster_{c}");
        }
        s
    }

    /// One table row: configuration, pooled mean, subject mean, then per-cluster means
    /// (empty where a cluster has no test samples).
    pub fn summary_row(&self, label: &str, k: usize) -> String {
        let mut s = format!("{label},{:.4},{:.4}", self.mean_error_deg, self.subject_mean_error_deg);
        for c in 0..k {
            match self.cluster_mean(ClusterId::from_index(c)) {
                Some(g) => {
                    let _ = write!(s, ",{:.4}", g.mean_error_deg);
                }
                None => s.push(','),
            }
        }
        s
    }

    /// Overall and per-cluster summary table.
    pub fn summary_csv(&self) -> String {
        let k = self.per_cluster.iter().filter_map(|g| g.key.parse::<usize>().ok()).max().unwrap_or(0).max(self.meta.k);
        format!("{}\n{}\n", Self::summary_header(k), self.summary_row(&self.meta.protocol, k))
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("fold,repeat,seed,test_subjects,train_count,count,mean_error_deg\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6}",
                f.fold,
                f.repeat,
                f.seed,
                f.test_subjects.join(";"),
                f.train_count,
                f.count,
                f.mean_error_deg
            );
        }
        s
    }

    pub fn records_csv(&self) -> String {
        let mut s = String::from("fold,id,subject,cluster,error_deg\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{:.6}", r.fold, r.id, r.subject, r.cluster, r.error_deg);
        }
        s
    }

    /// Writes `report.json`, `summary.csv`, `folds.csv` and `records.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::json("eval report", e))?;
        for (name, body) in [
            ("report.json", json),
            ("summary.csv", self.summary_csv()),
            ("folds.csv", self.folds_csv()),
            ("records.csv", self.records_csv()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Per-sample angular errors of `predictor` on `dataset`, tagged with `fold`.
///
/// The reporting cluster of a sample is the model's assignment, else its stored id, else
/// cluster 1. Routing follows [`routes`], so a single-head predictor still reports
/// per-cluster errors.
pub fn evaluate_records<P: GazePredictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    cluster_model: Option<&ClusterModel>,
    fold: usize,
) -> Result<Vec<SampleRecord>> {
    let route = routes(dataset, predictor.k(), cluster_model)?;
    let report_cluster: Vec<ClusterId> = dataset
        .samples()
        .iter()
        .map(|s| match cluster_model {
            Some(m) => m.assign(s.head),
            None => s.cluster.unwrap_or(ClusterId::from_index(0)),
        })
        .collect();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| (route[i], i));
    let mut jobs = Vec::new();
    for group in order.chunk_by(|&a, &b| route[a] == route[b]) {
        jobs.extend(group.chunks(EVAL_CHUNK));
    }
    let preds: Vec<Vec<Angles>> = jobs
        .par_iter()
        .map(|idx| predictor.predict(dataset, idx, route[idx[0]]))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(dataset.len());
    for (idx, p) in jobs.iter().zip(preds) {
        if p.len() != idx.len() {
            return Err(Error::Shape(format!("{} predictions for {} samples", p.len(), idx.len())));
        }
        for (&i, pred) in idx.iter().zip(p) {
            let s = &dataset.samples()[i];
            records.push(SampleRecord {
                id: s.id.clone(),
                subject: s.subject.clone(),
                cluster: report_cluster[i],
                fold,
                error_deg: angular_error(pred, s.gaze),
            });
        }
    }
    Ok(records)
}

/// Evaluates on a whole dataset as a single fold.
pub fn evaluate<P: GazePredictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    cluster_model: Option<&ClusterModel>,
) -> Result<EvalReport> {
    let records = evaluate_records(predictor, dataset, cluster_model, 0)?;
    let meta = EvalMeta {
        protocol: "evaluate".into(),
        k: predictor.k(),
        ..EvalMeta::default()
    };
    let fold = FoldResult {
        fold: 0,
        repeat: 0,
        seed: 0,
        test_subjects: dataset.subjects(),
        train_count: 0,
        count: 0,
        mean_error_deg: 0.0,
    };
    Ok(EvalReport::from_records(meta, records, vec![fold]))
}
