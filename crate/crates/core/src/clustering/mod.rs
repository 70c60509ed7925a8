//! Head-pose clustering: k-means on unit direction vectors under cosine distance.
//!
//! Cluster ids are 1-based everywhere they leave this module (sample index, reports,
//! parameter names), matching how clusters are numbered in tables and figures.

mod kmeans;
mod stats;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angles_to_vec, vec_to_angles, Angles, UnitVec3};

pub use kmeans::{fit_kmeans, fit_kmeans_traced, k_sweep, KMeansConfig, KMeansFit};
pub use stats::{cluster_stats, js_divergence, ClusterStats, ClusterStatsReport, GazeHistogram};

pub const CLUSTER_MODEL_VERSION: u32 = 1;

/// 1-based cluster index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ClusterId(u32);

impl ClusterId {
    pub fn new(id: u32) -> Result<Self> {
        if id == 0 {
            return Err(Error::InvalidInput("cluster ids start at 1".into()));
        }
        Ok(ClusterId(id))
    }

    pub fn from_index(index: usize) -> Self {
        ClusterId(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// 0-based position.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u32> for ClusterId {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        ClusterId::new(v)
    }
}

impl From<ClusterId> for u32 {
    fn from(c: ClusterId) -> u32 {
        c.0
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// K unit-vector centroids plus the nearest-centroid assignment rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClusterModelFile", into = "ClusterModelFile")]
pub struct ClusterModel {
    centroids: Vec<UnitVec3>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterModelFile {
    version: u32,
    k: usize,
    centroids: Vec<[f64; 3]>,
}

impl TryFrom<ClusterModelFile> for ClusterModel {
    type Error = Error;

    fn try_from(f: ClusterModelFile) -> Result<Self> {
        if f.version != CLUSTER_MODEL_VERSION {
            return Err(Error::Format(format!(
                "cluster model version {} is not supported",
                f.version
            )));
        }
        if f.k != f.centroids.len() {
            return Err(Error::Format(format!(
                "k = {} but {} centroids listed",
                f.k,
                f.centroids.len()
            )));
        }
        let centroids = f
            .centroids
            .iter()
            .map(|c| UnitVec3 {
                x: c[0],
                y: c[1],
                z: c[2],
            })
            .collect();
        ClusterModel::new(centroids)
    }
}

impl From<ClusterModel> for ClusterModelFile {
    fn from(m: ClusterModel) -> Self {
        ClusterModelFile {
            version: CLUSTER_MODEL_VERSION,
            k: m.centroids.len(),
            centroids: m.centroids.iter().map(|c| c.to_array()).collect(),
        }
    }
}

impl ClusterModel {
    /// Validates unit norm (1e-9), `K >= 1` and pairwise-distinct centroids.
    pub fn new(centroids: Vec<UnitVec3>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::InvalidInput("cluster model needs at least one centroid".into()));
        }
        for (i, c) in centroids.iter().enumerate() {
            if (c.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "centroid {} has norm {}",
                    i + 1,
                    c.norm()
                )));
            }
            if centroids[..i].contains(c) {
                return Err(Error::InvalidInput(format!("centroid {} is a duplicate", i + 1)));
            }
        }
        Ok(ClusterModel { centroids })
    }

    /// Fixed centroids given as head poses (e.g. discrete capture yaws).
    pub fn from_angles(poses: &[Angles]) -> Result<Self> {
        ClusterModel::new(poses.iter().map(|&a| angles_to_vec(a)).collect())
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[UnitVec3] {
        &self.centroids
    }

    pub fn centroid_angles(&self, id: ClusterId) -> Angles {
        vec_to_angles(self.centroids[id.index()]).expect("centroids are unit vectors")
    }

    /// Nearest centroid by cosine distance; ties go to the lowest id.
    pub fn assign(&self, pose: Angles) -> ClusterId {
        ClusterId::from_index(nearest(&self.centroids, &angles_to_vec(pose)).0)
    }

    pub fn assign_all(&self, poses: impl IntoIterator<Item = Angles>) -> Vec<ClusterId> {
        poses.into_iter().map(|p| self.assign(p)).collect()
    }

    /// Sum of cosine distances from each pose to its assigned centroid.
    pub fn objective(&self, poses: &[Angles]) -> f64 {
        poses
            .iter()
            .map(|&p| nearest(&self.centroids, &angles_to_vec(p)).1)
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("serializing cluster model", e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(format!("{}", path.display()), e))
    }
}

/// Index and cosine distance of the closest centroid (first one on ties).
pub(crate) fn nearest(centroids: &[UnitVec3], v: &UnitVec3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = 1.0 - c.dot(v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_id_is_one_based() {
        assert!(ClusterId::new(0).is_err());
        let c = ClusterId::new(3).unwrap();
        assert_eq!(c.index(), 2);
        assert_eq!(ClusterId::from_index(2), c);
        assert_eq!(serde_json::to_string(&c).unwrap(), "3");
        assert!(serde_json::from_str::<ClusterId>("0").is_err());
    }

    #[test]
    fn assign_examples() {
        let poses = [
            Angles::from_degrees(0.0, -30.0),
            Angles::from_degrees(40.0, 0.0),
            Angles::from_degrees(0.0, 30.0),
        ];
        let m = ClusterModel::from_angles(&poses).unwrap();
        for (i, &p) in poses.iter().enumerate() {
            assert_eq!(m.assign(p), ClusterId::from_index(i));
        }
        // (0, 0) is equidistant from clusters 1 and 3 (and farther from 2).
        assert_eq!(m.assign(Angles::ZERO), ClusterId::new(1).unwrap());
    }

    #[test]
    fn assign_matches_linear_scan() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(5, 0);
        let rand_pose = |rng: &mut rand_chacha::ChaCha8Rng| {
            Angles::from_degrees(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0))
        };
        let cents: Vec<Angles> = (0..5).map(|_| rand_pose(&mut rng)).collect();
        let m = ClusterModel::from_angles(&cents).unwrap();
        for _ in 0..500 {
            let p = rand_pose(&mut rng);
            let dists: Vec<f64> = cents.iter().map(|&c| crate::geometry::cosine_distance(p, c)).collect();
            let mut best = 0;
            for i in 1..dists.len() {
                if dists[i] < dists[best] {
                    best = i;
                }
            }
            assert_eq!(m.assign(p).index(), best);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = ClusterModel::from_angles(&[Angles::ZERO, Angles::from_degrees(0.0, 45.0)]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["version"], 1);
        let back: ClusterModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ClusterModel>(r#"{"version":1,"k":1,"centroids":[[0,0,-2]]}"#).is_err());
        assert!(serde_json::from_str::<ClusterModel>(r#"{"version":9,"k":1,"centroids":[[0,0,-1]]}"#).is_err());
        assert!(ClusterModel::from_angles(&[Angles::ZERO, Angles::ZERO]).is_err());
    }

    #[test]
    fn direction_only() {
        // pitch = 90 deg points straight up regardless of yaw.
        let m = ClusterModel::from_angles(&[Angles::from_degrees(0.0, -40.0), Angles::from_degrees(60.0, 40.0)]).unwrap();
        let a = Angles::from_degrees(90.0, 10.0);
        let b = Angles::from_degrees(90.0, -120.0);
        assert_eq!(m.assign(a), m.assign(b));
    }
}
