//! Routed mini-batch training.
//!
//! A mini-batch is split into per-cluster sub-batches. Each sub-batch runs through the
//! shared trunk and its own head; gradients of the batch-mean loss are summed over the
//! sub-batches and applied in one optimizer step. Batches are put into a canonical
//! order (cluster, then sample index) before any arithmetic, so the result does not
//! depend on the order samples were drawn in.

mod optim;
mod targeting;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterId, ClusterModel};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{angles_to_vec, angular_error, Angles};
use crate::nnet::{image_to_input, BranchedNet, Gradients, Tensor};
use crate::rng::{derive_seed, stream_rng};

pub use optim::{Optimizer, OptimizerKind, OptimizerParams};
pub use targeting::{binned_histogram, histogram_chi2, target_dataset, BinKey, TargetingSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean of squared pitch and yaw differences, radians squared.
    #[default]
    MseRadians,
    /// Angle between predicted and true gaze directions, radians.
    Angular,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply the rate by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, gamma } => base * gamma.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Model to initialize from (matching tensors are copied).
    pub donor: Option<PathBuf>,
    pub freeze_trunk: bool,
    /// Fine-tuning runs at `learning_rate * lr_scale`.
    pub lr_scale: f64,
    /// Fine-tuning epochs; defaults to `epochs`.
    pub epochs: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            donor: None,
            freeze_trunk: false,
            lr_scale: 0.1,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub lr_schedule: LrSchedule,
    pub finetune: Option<FinetuneConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            loss: LossKind::MseRadians,
            lr_schedule: LrSchedule::Constant,
            finetune: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let LrSchedule::Step { every, gamma } = self.lr_schedule {
            if every == 0 || !(gamma > 0.0) {
                return Err(Error::Config("step schedule needs every >= 1 and gamma > 0".into()));
            }
        }
        Ok(())
    }

    pub fn optimizer_params(&self) -> OptimizerParams {
        OptimizerParams {
            kind: self.optimizer,
            momentum: self.momentum,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Mean squared pitch/yaw difference, radians squared.
pub fn loss(pred: Angles, target: Angles) -> f64 {
    let dp = pred.pitch - target.pitch;
    let dy = pred.yaw - target.yaw;
    (dp * dp + dy * dy) / 2.0
}

/// Loss value and its gradient with respect to the predicted `(pitch, yaw)`.
pub fn loss_and_grad(kind: LossKind, pred: Angles, target: Angles) -> (f64, [f64; 2]) {
    match kind {
        LossKind::MseRadians => (
            loss(pred, target),
            [pred.pitch - target.pitch, pred.yaw - target.yaw],
        ),
        LossKind::Angular => {
            let theta = angular_error(pred, target).to_radians();
            let v = angles_to_vec(target);
            let (sp, cp) = pred.pitch.sin_cos();
            let (sy, cy) = pred.yaw.sin_cos();
            // d(u . v) with u = (-cp sy, -sp, -cp cy).
            let dp = v.x * sp * sy - v.y * cp + v.z * sp * cy;
            let dy = -v.x * cp * cy + v.z * cp * sy;
            let s = theta.sin().max(1e-6);
            (theta, [-dp / s, -dy / s])
        }
    }
}

/// Cluster each sample is routed to: cluster 1 for single-head nets, otherwise the
/// model's assignment, otherwise the id stored on the sample.
pub fn routes(ds: &Dataset, k: usize, model: Option<&ClusterModel>) -> Result<Vec<ClusterId>> {
    let one = ClusterId::from_index(0);
    if k == 1 {
        return Ok(vec![one; ds.len()]);
    }
    let ids: Vec<ClusterId> = match model {
        Some(m) => {
            if m.k() != k {
                return Err(Error::InvalidInput(format!("cluster model has K = {}, network has {k} heads", m.k())));
            }
            ds.samples().iter().map(|s| m.assign(s.head)).collect()
        }
        None => ds
            .samples()
            .iter()
            .map(|s| {
                s.cluster
                    .ok_or_else(|| Error::InvalidInput(format!("sample `{}` has no cluster id and no cluster model was given", s.id)))
            })
            .collect::<Result<_>>()?,
    };
    if let Some(bad) = ids.iter().find(|c| c.index() >= k) {
        return Err(Error::InvalidInput(format!("cluster {bad} out of range for {k} heads")));
    }
    Ok(ids)
}

/// Preprocessed network inputs for every sample of a dataset, concatenated.
pub struct Inputs {
    data: Vec<f32>,
    sample_len: usize,
    shape: [usize; 3],
}

impl Inputs {
    pub fn new(ds: &Dataset, net: &BranchedNet<f32>) -> Result<Self> {
        let cfg = net.config();
        let mut data = Vec::with_capacity(ds.len() * net.input_len());
        for (s, img) in ds.iter() {
            let t = image_to_input(img, cfg).map_err(|e| Error::InvalidInput(format!("sample `{}`: {e}", s.id)))?;
            data.extend_from_slice(t.data());
        }
        Ok(Inputs {
            data,
            sample_len: net.input_len(),
            shape: [cfg.input_channels, cfg.input_h, cfg.input_w],
        })
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut d = Vec::with_capacity(indices.len() * self.sample_len);
        for &i in indices {
            d.extend_from_slice(&self.data[i * self.sample_len..(i + 1) * self.sample_len]);
        }
        let [c, h, w] = self.shape;
        Tensor::new(vec![indices.len(), c, h, w], d).expect("consistent sizes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-sample training loss over the epoch.
    pub loss: f64,
    /// Mean angular error of the training-time predictions, degrees.
    pub angular_error_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    /// Per parameter: number of samples of each cluster whose gradients reached it.
    pub update_counts: BTreeMap<String, BTreeMap<ClusterId, u64>>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,split,loss,angular_error_deg` rows (with header).
    pub fn to_csv(&self, split: &str) -> String {
        let mut out = String::from("epoch,split,loss,angular_error_deg\n");
        self.append_csv_rows(split, &mut out);
        out
    }

    pub fn append_csv_rows(&self, split: &str, out: &mut String) {
        for e in &self.epochs {
            let _ = writeln!(out, "{},{split},{:.9},{:.6}", e.epoch, e.loss, e.angular_error_deg);
        }
    }
}

fn add_gradients(acc: &mut Gradients<f32>, g: Gradients<f32>) {
    for ((_, a), (_, b)) in acc.trunk.tensors_mut().into_iter().zip(g.trunk.tensors()) {
        for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
    acc.heads.extend(g.heads);
}

/// Runs `cfg.epochs` epochs of routed mini-batch training.
pub fn train_epochs(
    net: &mut BranchedNet<f32>,
    dataset: &Dataset,
    cluster_model: Option<&ClusterModel>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_epochs_with(net, dataset, cluster_model, cfg, cfg.learning_rate, false)
}

fn train_epochs_with(
    net: &mut BranchedNet<f32>,
    dataset: &Dataset,
    cluster_model: Option<&ClusterModel>,
    cfg: &TrainConfig,
    base_lr: f64,
    freeze_trunk: bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if dataset.is_empty() || cfg.epochs == 0 {
        return Ok(report);
    }
    let routes = routes(dataset, net.k(), cluster_model)?;
    let inputs = Inputs::new(dataset, net)?;
    let mut opt = Optimizer::new(cfg.optimizer_params());
    let shuffle_seed = derive_seed(cfg.seed, "shuffle");
    let n = dataset.len();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.rate(base_lr, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(shuffle_seed, epoch as u64));
        let (mut loss_sum, mut err_sum) = (0.0f64, 0.0f64);

        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = chunk.to_vec();
            batch.sort_by_key(|&i| (routes[i], i));
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Option<Gradients<f32>> = None;
            for sub in batch.chunk_by(|&a, &b| routes[a] == routes[b]) {
                let cluster = routes[sub[0]];
                let heads: Vec<Angles> = sub.iter().map(|&i| dataset.samples()[i].head).collect();
                let cache = net
                    .forward_cached(&inputs.batch(sub), &heads, cluster)
                    .map_err(|_| Error::NonFiniteLoss { epoch, batch: b })?;
                let mut d_out = Vec::with_capacity(sub.len());
                for (&i, o) in sub.iter().zip(cache.outputs()) {
                    let pred = Angles {
                        pitch: o[0] as f64,
                        yaw: o[1] as f64,
                    };
                    let target = dataset.samples()[i].gaze;
                    let (l, g) = loss_and_grad(cfg.loss, pred, target);
                    if !l.is_finite() {
                        return Err(Error::NonFiniteLoss { epoch, batch: b });
                    }
                    loss_sum += l;
                    err_sum += angular_error(pred, target);
                    d_out.push([(g[0] * scale) as f32, (g[1] * scale) as f32]);
                }
                let g = net.backward(&cache, &d_out)?;
                for (name, _) in g.tensors() {
                    *report.update_counts.entry(name).or_default().entry(cluster).or_default() += sub.len() as u64;
                }
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => add_gradients(acc, g),
                }
            }
            let grads = grads.expect("non-empty batch");
            if !grads.tensors().iter().all(|(_, t)| t.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(net, &grads, lr, freeze_trunk);
            report.steps += 1;
        }
        report.epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            loss: loss_sum / n as f64,
            angular_error_deg: err_sum / n as f64,
        });
    }
    Ok(report)
}

/// Fine-tuning phase alone: `finetune.epochs` epochs at `learning_rate * lr_scale`,
/// optionally with a frozen trunk. Used on a network that already holds pretrained or
/// transferred weights.
pub fn finetune_epochs(
    net: &mut BranchedNet<f32>,
    dataset: &Dataset,
    cluster_model: Option<&ClusterModel>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let ft = cfg.finetune.clone().unwrap_or_default();
    let ft_cfg = TrainConfig {
        epochs: ft.epochs.unwrap_or(cfg.epochs),
        ..cfg.clone()
    };
    train_epochs_with(net, dataset, cluster_model, &ft_cfg, cfg.learning_rate * ft.lr_scale, ft.freeze_trunk)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub pretrain: TrainReport,
    pub finetune: TrainReport,
    pub checkpoint: Option<PathBuf>,
}

impl PretrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,angular_error_deg\n");
        self.pretrain.append_csv_rows("pretrain", &mut out);
        self.finetune.append_csv_rows("finetune", &mut out);
        out
    }
}

/// Trains on `synth` for `epochs`, optionally checkpoints, then fine-tunes on `real` for
/// `finetune.epochs` with a fresh optimizer at `learning_rate * finetune.lr_scale`. Without a pretraining phase (no
/// synthetic data or zero epochs) the real phase runs at the base rate, i.e. as plain
/// training.
pub fn pretrain_finetune(
    net: &mut BranchedNet<f32>,
    synth: &Dataset,
    real: &Dataset,
    cluster_model: Option<&ClusterModel>,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<PretrainReport> {
    cfg.validate()?;
    let ft = cfg.finetune.clone().unwrap_or_default();
    let pretrain = train_epochs(net, synth, cluster_model, cfg)?;
    let pretrained = !pretrain.epochs.is_empty();
    let checkpoint = match checkpoint {
        Some(p) if pretrained => {
            net.save(p)?;
            Some(p.to_path_buf())
        }
        _ => None,
    };
    let finetune = if pretrained {
        finetune_epochs(net, real, cluster_model, cfg)?
    } else {
        let real_cfg = TrainConfig {
            epochs: ft.epochs.unwrap_or(cfg.epochs),
            ..cfg.clone()
        };
        train_epochs(net, real, cluster_model, &real_cfg)?
    };
    Ok(PretrainReport {
        pretrain,
        finetune,
        checkpoint,
    })
}
