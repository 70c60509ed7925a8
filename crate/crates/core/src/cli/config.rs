use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::KMeansConfig;
use crate::error::{Error, Result};
use crate::eval::{ExperimentConfig, Protocol};
use crate::nnet::NetConfig;
use crate::synthcam::SynthConfig;
use crate::train::{TargetingSpec, TrainConfig};

/// One document configuring every command. Unknown keys are rejected.
///
/// `seed` is the single source of randomness: it is copied into the synth, clustering
/// and training sections when the configuration is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub cluster: ClusterSection,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub targeting: TargetingSpec,
    pub eval: EvalSection,
    pub infer: InferSection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            cluster: ClusterSection {
                k: net.k,
                ..ClusterSection::default()
            },
            net,
            train: TrainConfig::default(),
            targeting: TargetingSpec::default(),
            eval: EvalSection::default(),
            infer: InferSection::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub k: usize,
    pub max_iter: usize,
    pub n_restarts: usize,
    /// K values for an objective-versus-K sweep.
    pub sweep: Vec<usize>,
    /// Fixed centroids as `[pitch, yaw]` degrees; skips fitting when set.
    pub centroids_deg: Option<Vec<[f64; 2]>>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let k = KMeansConfig::default();
        ClusterSection {
            k: k.k,
            max_iter: k.max_iter,
            n_restarts: k.n_restarts,
            sweep: Vec::new(),
            centroids_deg: None,
        }
    }
}

impl ClusterSection {
    pub fn kmeans(&self, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            max_iter: self.max_iter,
            n_restarts: self.n_restarts,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub protocol: Protocol,
    /// Run the 2x2 head-pose/branching grid instead of a single configuration.
    pub ablation: bool,
    pub max_test_label_deg: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            protocol: Protocol::Loso,
            ablation: false,
            max_test_label_deg: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub head_pitch_deg: f64,
    pub head_yaw_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Main dataset: a native container, or an external directory read with `ingest_spec`.
    pub dataset: Option<PathBuf>,
    /// Reference distribution for targeting.
    pub reference: Option<PathBuf>,
    /// Pretraining set; when present, training pretrains on it and fine-tunes on `dataset`.
    pub synth_dataset: Option<PathBuf>,
    pub cluster_model: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub ingest_spec: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path.display().to_string(), source),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("run config", e))
    }

    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.targeting.validate()?;
        if self.cluster.k == 0 {
            return Err(Error::Config("cluster.k must be at least 1".into()));
        }
        if self.net.k > 1 && self.cluster.centroids_deg.is_none() && self.net.k != self.cluster.k {
            return Err(Error::Config(format!(
                "net.k = {} but cluster.k = {}",
                self.net.k, self.cluster.k
            )));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            net: self.net.clone(),
            train: self.train.clone(),
            cluster: self.cluster.kmeans(self.seed),
            max_test_label_deg: self.eval.max_test_label_deg,
        }
    }
}
