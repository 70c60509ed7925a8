//! Command line front end. Every invocation writes into its own run directory, together
//! with the fully resolved configuration it ran with.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::clustering::{cluster_stats, fit_kmeans, fit_kmeans_traced, k_sweep, ClusterModel};
use crate::dataio::{ingest_external, read_dataset, write_dataset, Dataset, IngestSpec, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::eval::{ablation_grid, evaluate, run_protocol, EvalReport, GazePredictor};
use crate::geometry::Angles;
use crate::image::EyeImage;
use crate::nnet::{image_to_input, partial_load, BranchedNet};
use crate::rng::derive_seed;
use crate::synthcam::generate_dataset;
use crate::train::{binned_histogram, finetune_epochs, histogram_chi2, pretrain_finetune, target_dataset, train_epochs};

pub use config::{ClusterSection, EvalSection, InferSection, Paths, RunConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Parser)]
#[command(name = "gazebranch", version, about = "Head-pose-branched gaze estimation toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run directory; defaults to runs/<command>-<unix seconds>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory (overrides paths.dataset)
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Reference dataset for targeting
    #[arg(long, global = true)]
    pub reference: Option<PathBuf>,
    /// Pretraining dataset; train then fine-tunes on --dataset
    #[arg(long, global = true)]
    pub synth_dataset: Option<PathBuf>,
    /// Fitted cluster model JSON
    #[arg(long, global = true)]
    pub cluster_model: Option<PathBuf>,
    /// Model manifest JSON (weights in the sibling .bin)
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a procedural eye-image dataset.
    Synth,
    /// Fit a head-pose cluster model, optionally sweeping K.
    Cluster,
    /// Subsample a dataset to match a reference distribution.
    Target,
    /// Train a network.
    Train,
    /// Evaluate a trained model, or run an evaluation protocol.
    Eval,
    /// Per-cluster gaze statistics.
    Stats,
    /// Predict gaze for one image and print it as JSON.
    Infer(InferArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct InferArgs {
    /// PGM/PPM eye image
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Head pitch in degrees
    #[arg(long, allow_negative_numbers = true)]
    pub head_pitch_deg: Option<f64>,
    /// Head yaw in degrees
    #[arg(long, allow_negative_numbers = true)]
    pub head_yaw_deg: Option<f64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Cluster => "cluster",
            Command::Target => "target",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Stats => "stats",
            Command::Infer(_) => "infer",
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            eprintln!("run directory: {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Applies command line overrides on top of the configuration file.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    for (slot, v) in [
        (&mut cfg.paths.dataset, &g.dataset),
        (&mut cfg.paths.reference, &g.reference),
        (&mut cfg.paths.synth_dataset, &g.synth_dataset),
        (&mut cfg.paths.cluster_model, &g.cluster_model),
        (&mut cfg.paths.model, &g.model),
    ] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
    if let Command::Infer(a) = &cli.command {
        if a.image.is_some() {
            cfg.paths.image.clone_from(&a.image);
        }
        if let Some(p) = a.head_pitch_deg {
            cfg.infer.head_pitch_deg = p;
        }
        if let Some(y) = a.head_yaw_deg {
            cfg.infer.head_yaw_deg = y;
        }
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn default_out(command: &str) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = PathBuf::from("runs").join(format!("{command}-{secs}"));
    let mut p = base.clone();
    let mut n = 1;
    while p.exists() {
        p = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    p
}

/// Runs one command and returns its run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    if let Some(n) = cli.global.threads {
        // Fails only if the pool already exists, in which case the existing one is used.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = resolve_config(cli)?;
    let out = cli.global.out.clone().unwrap_or_else(|| default_out(cli.command.name()));
    run_command(&cli.command, &cfg, &out)?;
    Ok(out)
}

/// Runs `command` with an already resolved configuration, writing into `out`.
pub fn run_command(command: &Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(RESOLVED_CONFIG_FILE), cfg)?;
    match command {
        Command::Synth => cmd_synth(cfg, out),
        Command::Cluster => cmd_cluster(cfg, out),
        Command::Target => cmd_target(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Eval => cmd_eval(cfg, out),
        Command::Stats => cmd_stats(cfg, out),
        Command::Infer(_) => {
            let p = cmd_infer(cfg, out)?;
            println!("{}", serde_json::to_string_pretty(&p).map_err(|e| Error::json("prediction", e))?);
            Ok(())
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidInput(format!("missing input: {what} (set paths.{what} or pass --{})", what.replace('_', "-"))))
}

/// Reads a native container, or ingests an external directory with `paths.ingest_spec`.
fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    if path.join(MANIFEST_FILE).exists() {
        return read_dataset(path);
    }
    if !path.exists() {
        return Err(Error::InvalidInput(format!("dataset {} does not exist", path.display())));
    }
    let spec: Option<IngestSpec> = match &cfg.paths.ingest_spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::json(p.display().to_string(), e))?)
        }
        None => None,
    };
    ingest_external(path, spec.as_ref())
}

fn head_poses(ds: &Dataset) -> Vec<Angles> {
    ds.samples().iter().map(|s| s.head).collect()
}

/// Configured centroids, a saved model, or a fresh fit on `ds`, in that order.
fn cluster_model_for(cfg: &RunConfig, ds: &Dataset) -> Result<ClusterModel> {
    if let Some(p) = &cfg.paths.cluster_model {
        return ClusterModel::load(p);
    }
    if let Some(c) = &cfg.cluster.centroids_deg {
        return ClusterModel::from_angles(&c.iter().map(|&[p, y]| Angles::from_degrees(p, y)).collect::<Vec<_>>());
    }
    fit_kmeans(&head_poses(ds), &cfg.cluster.kmeans(cfg.seed))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ds, log) = generate_dataset(&cfg.synth)?;
    let dir = out.join("dataset");
    write_dataset(&ds, &dir)?;
    write_json(&out.join("generation_log.json"), &log)?;
    let back = read_dataset(&dir)?;
    if back.len() != cfg.synth.n_subjects * cfg.synth.samples_per_subject {
        return Err(Error::Format(format!("wrote {} samples, expected {}", back.len(), ds.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct ClusterFitSummary {
    k: usize,
    objective: f64,
    iterations: usize,
    best_restart: Option<usize>,
    fixed_centroids: bool,
}

pub fn cmd_cluster(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg, require(&cfg.paths.dataset, "dataset")?)?;
    let poses = head_poses(&ds);
    let kcfg = cfg.cluster.kmeans(cfg.seed);
    let (model, summary, traces) = match &cfg.cluster.centroids_deg {
        Some(c) => {
            let model = ClusterModel::from_angles(&c.iter().map(|&[p, y]| Angles::from_degrees(p, y)).collect::<Vec<_>>())?;
            let summary = ClusterFitSummary {
                k: model.k(),
                objective: model.objective(&poses),
                iterations: 0,
                best_restart: None,
                fixed_centroids: true,
            };
            (model, summary, Vec::new())
        }
        None => {
            let fit = fit_kmeans_traced(&poses, &kcfg)?;
            let summary = ClusterFitSummary {
                k: fit.model.k(),
                objective: fit.objective,
                iterations: fit.iterations,
                best_restart: Some(fit.best_restart),
                fixed_centroids: false,
            };
            (fit.model, summary, fit.traces)
        }
    };
    let path = out.join("cluster_model.json");
    model.save(&path)?;
    write_json(&out.join("cluster_fit.json"), &summary)?;
    let mut trace = String::from("restart,iteration,objective\n");
    for (r, t) in traces.iter().enumerate() {
        for (i, v) in t.iter().enumerate() {
            let _ = writeln!(trace, "{r},{i},{v:.12}");
        }
    }
    write_text(&out.join("objective_trace.csv"), &trace)?;
    if !cfg.cluster.sweep.is_empty() {
        let mut s = String::from("k,objective\n");
        for (k, obj) in k_sweep(&poses, &cfg.cluster.sweep, &kcfg)? {
            let _ = writeln!(s, "{k},{obj:.12}");
        }
        write_text(&out.join("k_sweep.csv"), &s)?;
    }
    if ClusterModel::load(&path)? != model {
        return Err(Error::Format("cluster model did not round-trip".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct TargetingSummary {
    source_count: usize,
    reference_count: usize,
    kept: usize,
    chi2_before: f64,
    chi2_after: f64,
}

pub fn cmd_target(cfg: &RunConfig, out: &Path) -> Result<()> {
    let source = load_dataset(cfg, require(&cfg.paths.dataset, "dataset")?)?;
    let reference = load_dataset(cfg, require(&cfg.paths.reference, "reference")?)?;
    let kept = target_dataset(&source, &reference, &cfg.targeting, derive_seed(cfg.seed, "target"))?;
    let h_ref = binned_histogram(&reference, &cfg.targeting);
    let summary = TargetingSummary {
        source_count: source.len(),
        reference_count: reference.len(),
        kept: kept.len(),
        chi2_before: histogram_chi2(&binned_histogram(&source, &cfg.targeting), &h_ref),
        chi2_after: histogram_chi2(&binned_histogram(&kept, &cfg.targeting), &h_ref),
    };
    let dir = out.join("dataset");
    write_dataset(&kept, &dir)?;
    write_json(&out.join("targeting.json"), &summary)?;
    if read_dataset(&dir)?.len() != kept.len() {
        return Err(Error::Format("targeted dataset did not round-trip".into()));
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg, require(&cfg.paths.dataset, "dataset")?)?;
    let mut net = BranchedNet::new(cfg.net.clone(), derive_seed(cfg.seed, "init"))?;
    let model = if cfg.net.k > 1 {
        let m = cluster_model_for(cfg, &ds)?;
        m.save(&out.join("cluster_model.json"))?;
        Some(m)
    } else {
        None
    };
    let donor = cfg.train.finetune.as_ref().and_then(|f| f.donor.clone());
    let log = match (&cfg.paths.synth_dataset, donor) {
        (Some(synth), _) => {
            let synth = load_dataset(cfg, synth)?;
            let r = pretrain_finetune(&mut net, &synth, &ds, model.as_ref(), &cfg.train, Some(&out.join("pretrained.json")))?;
            write_json(&out.join("train_report.json"), &r)?;
            r.to_csv()
        }
        (None, Some(donor)) => {
            let load = partial_load(&mut net, &donor, &BTreeMap::new())?;
            write_json(&out.join("transfer.json"), &load)?;
            let r = finetune_epochs(&mut net, &ds, model.as_ref(), &cfg.train)?;
            write_json(&out.join("train_report.json"), &r)?;
            r.to_csv("finetune")
        }
        (None, None) => {
            let r = train_epochs(&mut net, &ds, model.as_ref(), &cfg.train)?;
            write_json(&out.join("train_report.json"), &r)?;
            r.to_csv("train")
        }
    };
    write_text(&out.join("train_log.csv"), &log)?;
    let path = out.join("model.json");
    net.save(&path)?;
    BranchedNet::load(&path)?;
    Ok(())
}

/// Evaluates `predictor` on `ds` and writes the report files into `out`.
pub fn eval_to_dir<P: GazePredictor + ?Sized>(
    predictor: &P,
    ds: &Dataset,
    model: Option<&ClusterModel>,
    config_hash: &str,
    out: &Path,
) -> Result<EvalReport> {
    let mut report = evaluate(predictor, ds, model)?;
    report.meta.config_hash = config_hash.to_string();
    report.write_to(out)?;
    EvalReport::load(&out.join("report.json"))?;
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg, require(&cfg.paths.dataset, "dataset")?)?;
    let hash = crate::dataio::config_hash(cfg);
    if let Some(p) = &cfg.paths.model {
        let net = BranchedNet::load(p)?;
        let model = match (&cfg.paths.cluster_model, net.k()) {
            (Some(c), _) => Some(ClusterModel::load(c)?),
            (None, 1) => None,
            (None, _) => {
                let sibling = p.with_file_name("cluster_model.json");
                if sibling.exists() {
                    Some(ClusterModel::load(&sibling)?)
                } else {
                    None
                }
            }
        };
        eval_to_dir(&net, &ds, model.as_ref(), &hash, out)?;
        return Ok(());
    }
    let exp = cfg.experiment();
    if cfg.eval.ablation {
        let grid = ablation_grid(&ds, &exp, &cfg.eval.protocol, cfg.seed)?;
        write_json(&out.join("ablation.json"), &grid)?;
        write_text(&out.join("ablation_grid.csv"), &grid.grid_csv())?;
        write_text(&out.join("ablation_clusters.csv"), &grid.clusters_csv())?;
        return Ok(());
    }
    let report = run_protocol(&ds, &exp, &cfg.eval.protocol, cfg.seed)?;
    report.write_to(out)?;
    EvalReport::load(&out.join("report.json"))?;
    Ok(())
}

pub fn cmd_stats(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg, require(&cfg.paths.dataset, "dataset")?)?;
    let model = cluster_model_for(cfg, &ds)?;
    model.save(&out.join("cluster_model.json"))?;
    let stats = cluster_stats(&model, &ds);
    write_json(&out.join("cluster_stats.json"), &stats)?;
    write_text(&out.join("cluster_stats.csv"), &stats.to_csv())?;

    // Joint gaze histograms per cluster, 2-degree bins.
    let bin = 2.0;
    let mut hist: BTreeMap<(u32, i64, i64), u64> = BTreeMap::new();
    for s in ds.samples() {
        let (p, y) = s.gaze.to_degrees();
        let key = (model.assign(s.head).get(), (p / bin).floor() as i64, (y / bin).floor() as i64);
        *hist.entry(key).or_default() += 1;
    }
    let mut csv = String::from("cluster,gaze_pitch_lo_deg,gaze_yaw_lo_deg,count\n");
    for ((c, p, y), n) in hist {
        let _ = writeln!(csv, "{c},{},{},{n}", p as f64 * bin, y as f64 * bin);
    }
    write_text(&out.join("gaze_hist2d.csv"), &csv)?;

    let mut pts = String::from("id,subject,cluster,head_pitch_deg,head_yaw_deg,gaze_pitch_deg,gaze_yaw_deg\n");
    for s in ds.samples() {
        let (hp, hy) = s.head.to_degrees();
        let (gp, gy) = s.gaze.to_degrees();
        let _ = writeln!(pts, "{},{},{},{hp:.4},{hy:.4},{gp:.4},{gy:.4}", s.id, s.subject, model.assign(s.head));
    }
    write_text(&out.join("angles.csv"), &pts)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Prediction {
    pub pitch_rad: f64,
    pub yaw_rad: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub cluster: u32,
}

pub fn cmd_infer(cfg: &RunConfig, out: &Path) -> Result<Prediction> {
    let net = BranchedNet::load(require(&cfg.paths.model, "model")?)?;
    let img_path = require(&cfg.paths.image, "image")?;
    let img = EyeImage::read_pnm(img_path)?;
    let head = Angles::from_degrees(cfg.infer.head_pitch_deg, cfg.infer.head_yaw_deg);
    let cluster = if net.k() == 1 {
        crate::clustering::ClusterId::from_index(0)
    } else {
        let p = require(&cfg.paths.cluster_model, "cluster_model")?;
        ClusterModel::load(p)?.assign(head)
    };
    let gaze = net.forward(&image_to_input(&img, net.config())?, head, cluster)?;
    let (pitch_deg, yaw_deg) = gaze.to_degrees();
    let p = Prediction {
        pitch_rad: gaze.pitch,
        yaw_rad: gaze.yaw,
        pitch_deg,
        yaw_deg,
        cluster: cluster.get(),
    };
    write_json(&out.join("prediction.json"), &p)?;
    Ok(p)
}
