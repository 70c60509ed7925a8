use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_records, EvalMeta, EvalReport, FoldResult, SampleRecord};
use crate::clustering::{fit_kmeans, KMeansConfig};
use crate::dataio::{config_hash, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{angular_error, Angles};
use crate::nnet::{BranchedNet, NetConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::train::{train_epochs, TrainConfig};

/// Everything one train/evaluate cycle needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Clustering refit on every training split. `k` must equal `net.k` for branched
    /// networks; single-head networks use it for per-cluster reporting only.
    pub cluster: KMeansConfig,
    /// Opt-in: drop test samples whose gaze label is farther than this from the camera axis.
    pub max_test_label_deg: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        ExperimentConfig {
            cluster: KMeansConfig {
                k: net.k,
                ..KMeansConfig::default()
            },
            net,
            train: TrainConfig::default(),
            max_test_label_deg: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if self.cluster.k == 0 {
            return Err(Error::Config("cluster.k must be at least 1".into()));
        }
        if self.net.k > 1 && self.net.k != self.cluster.k {
            return Err(Error::Config(format!(
                "network has {} heads but clustering uses K = {}",
                self.net.k, self.cluster.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    Loso,
    Kfold { folds: usize, repeats: usize },
    PersonSpecific { train_frac: f64 },
    /// Fixed test subjects, everyone else trains.
    HeldOut { test_subjects: Vec<String> },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Loso => "loso",
            Protocol::Kfold { .. } => "kfold",
            Protocol::PersonSpecific { .. } => "person-specific",
            Protocol::HeldOut { .. } => "held-out",
        }
    }
}

struct FoldJob {
    fold: usize,
    repeat: usize,
    seed: u64,
    test_subjects: Vec<String>,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn subject_fold_seed(seed: u64, repeat: usize, test_subjects: &[String]) -> u64 {
    derive_seed(seed, &format!("fold:{repeat}:{}", test_subjects.join(",")))
}

fn subject_job(ds: &Dataset, fold: usize, repeat: usize, seed: u64, mut test_subjects: Vec<String>) -> FoldJob {
    test_subjects.sort();
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| test_subjects.contains(&ds.samples()[i].subject));
    FoldJob {
        fold,
        repeat,
        seed: subject_fold_seed(seed, repeat, &test_subjects),
        test_subjects,
        train,
        test,
    }
}

fn run_fold(ds: &Dataset, exp: &ExperimentConfig, job: &FoldJob) -> Result<(Vec<SampleRecord>, FoldResult)> {
    if job.train.is_empty() || job.test.is_empty() {
        return Err(Error::Protocol(format!("fold {} has an empty train or test split", job.fold)));
    }
    let train = ds.subset(&job.train)?;
    let mut test = ds.subset(&job.test)?;
    if let Some(limit) = exp.max_test_label_deg {
        let keep: Vec<usize> = (0..test.len())
            .filter(|&i| angular_error(test.samples()[i].gaze, Angles::default()) <= limit)
            .collect();
        test = test.subset(&keep)?;
    }

    let poses: Vec<Angles> = train.samples().iter().map(|s| s.head).collect();
    let kcfg = KMeansConfig {
        seed: derive_seed(job.seed, "kmeans"),
        ..exp.cluster.clone()
    };
    let model = fit_kmeans(&poses, &kcfg)?;
    let mut net = BranchedNet::new(exp.net.clone(), derive_seed(job.seed, "init"))?;
    let tcfg = TrainConfig {
        seed: derive_seed(job.seed, "train"),
        finetune: None,
        ..exp.train.clone()
    };
    train_epochs(&mut net, &train, Some(&model), &tcfg)?;
    let records = evaluate_records(&net, &test, Some(&model), job.fold)?;
    let result = FoldResult {
        fold: job.fold,
        repeat: job.repeat,
        seed: job.seed,
        test_subjects: job.test_subjects.clone(),
        train_count: train.len(),
        count: 0,
        mean_error_deg: 0.0,
    };
    Ok((records, result))
}

fn run_jobs(ds: &Dataset, exp: &ExperimentConfig, protocol: &Protocol, seed: u64, jobs: Vec<FoldJob>) -> Result<EvalReport> {
    exp.validate()?;
    let results: Vec<(Vec<SampleRecord>, FoldResult)> = jobs.par_iter().map(|j| run_fold(ds, exp, j)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut folds = Vec::new();
    for (r, f) in results {
        records.extend(r);
        folds.push(f);
    }
    let meta = EvalMeta {
        protocol: protocol.name().into(),
        k: exp.net.k,
        config_hash: config_hash(&(exp, protocol, seed)),
        seed,
    };
    Ok(EvalReport::from_records(meta, records, folds))
}

fn loso_jobs(ds: &Dataset, seed: u64) -> Result<Vec<FoldJob>> {
    let subjects = ds.subjects();
    if subjects.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .into_iter()
        .enumerate()
        .map(|(f, s)| subject_job(ds, f, 0, seed, vec![s]))
        .collect())
}

fn kfold_jobs(ds: &Dataset, folds: usize, repeats: usize, seed: u64) -> Result<Vec<FoldJob>> {
    if folds < 2 {
        return Err(Error::Protocol(format!("need at least 2 folds, got {folds}")));
    }
    if repeats == 0 {
        return Err(Error::Protocol("need at least 1 repeat".into()));
    }
    let subjects = ds.subjects();
    if subjects.len() < folds {
        return Err(Error::Protocol(format!("{} subjects cannot fill {folds} folds", subjects.len())));
    }
    let mut jobs = Vec::with_capacity(folds * repeats);
    for r in 0..repeats {
        let mut order = subjects.clone();
        order.shuffle(&mut stream_rng(derive_seed(seed, "kfold"), r as u64));
        for g in 0..folds {
            let group: Vec<String> = order.iter().skip(g).step_by(folds).cloned().collect();
            jobs.push(subject_job(ds, r * folds + g, r, seed, group));
        }
    }
    Ok(jobs)
}

fn person_specific_jobs(ds: &Dataset, train_frac: f64, seed: u64) -> Result<Vec<FoldJob>> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Protocol(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let split_seed = derive_seed(seed, "person-split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (si, s) in ds.subjects().iter().enumerate() {
        let mut idx = ds.indices_of_subject(s);
        let n = idx.len();
        if n < 5 {
            return Err(Error::Protocol(format!("subject `{s}` has {n} samples, at least 5 are needed")));
        }
        idx.shuffle(&mut stream_rng(split_seed, si as u64));
        let n_test = ((n as f64 * (1.0 - train_frac)).round() as usize).clamp(1, n - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(vec![FoldJob {
        fold: 0,
        repeat: 0,
        seed: derive_seed(seed, "person-specific"),
        test_subjects: ds.subjects(),
        train,
        test,
    }])
}

fn held_out_jobs(ds: &Dataset, test_subjects: &[String], seed: u64) -> Result<Vec<FoldJob>> {
    let all = ds.subjects();
    if let Some(missing) = test_subjects.iter().find(|s| !all.contains(s)) {
        return Err(Error::Protocol(format!("test subject `{missing}` is not in the dataset")));
    }
    if test_subjects.is_empty() || test_subjects.len() >= all.len() {
        return Err(Error::Protocol("held-out split needs at least one test and one training subject".into()));
    }
    Ok(vec![subject_job(ds, 0, 0, seed, test_subjects.to_vec())])
}

/// Train/test splits of a protocol as `(train, test)` index lists, one per fold.
pub fn protocol_splits(ds: &Dataset, protocol: &Protocol, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    Ok(jobs_for(ds, protocol, seed)?.into_iter().map(|j| (j.train, j.test)).collect())
}

fn jobs_for(ds: &Dataset, protocol: &Protocol, seed: u64) -> Result<Vec<FoldJob>> {
    match protocol {
        Protocol::Loso => loso_jobs(ds, seed),
        Protocol::Kfold { folds, repeats } => kfold_jobs(ds, *folds, *repeats, seed),
        Protocol::PersonSpecific { train_frac } => person_specific_jobs(ds, *train_frac, seed),
        Protocol::HeldOut { test_subjects } => held_out_jobs(ds, test_subjects, seed),
    }
}

pub fn run_protocol(ds: &Dataset, exp: &ExperimentConfig, protocol: &Protocol, seed: u64) -> Result<EvalReport> {
    let jobs = jobs_for(ds, protocol, seed)?;
    run_jobs(ds, exp, protocol, seed, jobs)
}

/// One fold per subject: train on the others, test on it.
pub fn loso_protocol(ds: &Dataset, exp: &ExperimentConfig, seed: u64) -> Result<EvalReport> {
    run_protocol(ds, exp, &Protocol::Loso, seed)
}

/// Subjects are shuffled into `folds` groups, independently per repeat; each group is
/// tested once per repeat with the remaining groups as training data.
pub fn kfold_subjects_protocol(ds: &Dataset, folds: usize, repeats: usize, exp: &ExperimentConfig, seed: u64) -> Result<EvalReport> {
    run_protocol(ds, exp, &Protocol::Kfold { folds, repeats }, seed)
}

/// Stratified per-subject split, trained and evaluated once.
pub fn person_specific_protocol(ds: &Dataset, train_frac: f64, exp: &ExperimentConfig, seed: u64) -> Result<EvalReport> {
    run_protocol(ds, exp, &Protocol::PersonSpecific { train_frac }, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub head_pose: bool,
    pub branched: bool,
    pub report: EvalReport,
}

impl AblationCell {
    pub fn label(&self) -> String {
        format!(
            "{}/{}",
            if self.head_pose { "eye+pose" } else { "eye-only" },
            if self.branched { "branched" } else { "single" }
        )
    }
}

/// Four trainings: {eye only, eye + head pose} x {single head, branched}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub protocol: Protocol,
    pub seed: u64,
    pub k: usize,
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn cell(&self, head_pose: bool, branched: bool) -> &AblationCell {
        self.cells
            .iter()
            .find(|c| c.head_pose == head_pose && c.branched == branched)
            .expect("grid has all four cells")
    }

    pub fn error(&self, head_pose: bool, branched: bool) -> f64 {
        self.cell(head_pose, branched).report.mean_error_deg
    }

    /// Mean errors, rows by head-pose input, columns by branching.
    pub fn grid_csv(&self) -> String {
        let mut s = String::from("input,single,branched\n");
        for hp in [false, true] {
            let _ = writeln!(
                s,
                "{},{:.4},{:.4}",
                if hp { "eye+pose" } else { "eye-only" },
                self.error(hp, false),
                self.error(hp, true)
            );
        }
        s
    }

    /// One row per configuration with per-cluster means.
    pub fn clusters_csv(&self) -> String {
        let mut s = EvalReport::summary_header(self.k);
        s.push('\n');
        for c in &self.cells {
            s.push_str(&c.report.summary_row(&c.label(), self.k));
            s.push('\n');
        }
        s
    }
}

/// Runs the 2x2 ablation under one protocol and seed. The branched cells use
/// `exp.cluster.k` heads.
pub fn ablation_grid(ds: &Dataset, exp: &ExperimentConfig, protocol: &Protocol, seed: u64) -> Result<AblationGrid> {
    let k = exp.cluster.k;
    if k < 2 {
        return Err(Error::Config("ablation needs cluster.k >= 2 for the branched cells".into()));
    }
    let mut cells = Vec::with_capacity(4);
    for head_pose in [false, true] {
        for branched in [false, true] {
            let cfg = ExperimentConfig {
                net: NetConfig {
                    head_pose_inputs: head_pose,
                    k: if branched { k } else { 1 },
                    ..exp.net.clone()
                },
                ..exp.clone()
            };
            let report = run_protocol(ds, &cfg, protocol, seed)?;
            cells.push(AblationCell {
                head_pose,
                branched,
                report,
            });
        }
    }
    Ok(AblationGrid {
        protocol: protocol.clone(),
        seed,
        k,
        cells,
    })
}
