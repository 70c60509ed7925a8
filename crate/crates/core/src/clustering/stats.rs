use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClusterId, ClusterModel};
use crate::dataio::Dataset;

/// Bin width and half-range of the gaze histograms, degrees.
pub const HIST_BIN_DEG: f64 = 2.0;
pub const HIST_HALF_RANGE_DEG: f64 = 90.0;

/// Dense 2D histogram of gaze angles, rows = pitch bins, columns = yaw bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeHistogram {
    pub bin_deg: f64,
    pub min_deg: f64,
    pub bins_per_axis: usize,
    pub counts: Vec<u32>,
}

impl Default for GazeHistogram {
    fn default() -> Self {
        let n = (2.0 * HIST_HALF_RANGE_DEG / HIST_BIN_DEG).round() as usize;
        GazeHistogram {
            bin_deg: HIST_BIN_DEG,
            min_deg: -HIST_HALF_RANGE_DEG,
            bins_per_axis: n,
            counts: vec![0; n * n],
        }
    }
}

impl GazeHistogram {
    fn bin(&self, deg: f64) -> usize {
        let b = ((deg - self.min_deg) / self.bin_deg).floor();
        b.clamp(0.0, (self.bins_per_axis - 1) as f64) as usize
    }

    /// Adds one gaze sample given in degrees; values outside the range land in edge bins.
    pub fn add(&mut self, pitch_deg: f64, yaw_deg: f64) {
        let (r, c) = (self.bin(pitch_deg), self.bin(yaw_deg));
        self.counts[r * self.bins_per_axis + c] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Center of a bin, degrees.
    pub fn bin_center(&self, index: usize) -> f64 {
        self.min_deg + (index as f64 + 0.5) * self.bin_deg
    }
}

/// Jensen-Shannon divergence (natural log, in `[0, ln 2]`) between two count vectors.
pub fn js_divergence(p: &[u32], q: &[u32]) -> f64 {
    assert_eq!(p.len(), q.len(), "histograms must share binning");
    let sp: f64 = p.iter().map(|&v| v as f64).sum();
    let sq: f64 = q.iter().map(|&v| v as f64).sum();
    if sp == 0.0 || sq == 0.0 {
        return 0.0;
    }
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let pa = a as f64 / sp;
        let qb = b as f64 / sq;
        let m = 0.5 * (pa + qb);
        if pa > 0.0 {
            js += 0.5 * pa * (pa / m).ln();
        }
        if qb > 0.0 {
            js += 0.5 * qb * (qb / m).ln();
        }
    }
    js.max(0.0)
}

/// Per-cluster gaze statistics, degrees. Statistics are `None` for empty clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub cluster: ClusterId,
    pub count: usize,
    pub centroid_pitch_deg: f64,
    pub centroid_yaw_deg: f64,
    pub gaze_mean_deg: Option<[f64; 2]>,
    /// Population covariance of (pitch, yaw).
    pub gaze_cov_deg2: Option<[[f64; 2]; 2]>,
    pub gaze_yaw_circular_mean_deg: Option<f64>,
    pub gaze_yaw_range_deg: Option<[f64; 2]>,
    pub histogram: GazeHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStatsReport {
    pub k: usize,
    pub total: usize,
    pub clusters: Vec<ClusterStats>,
}

impl ClusterStatsReport {
    /// One row per cluster; empty fields for null statistics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cluster,count,centroid_pitch_deg,centroid_yaw_deg,gaze_mean_pitch_deg,gaze_mean_yaw_deg,\
             gaze_yaw_circular_mean_deg,cov_pitch_pitch,cov_pitch_yaw,cov_yaw_yaw,gaze_yaw_min_deg,gaze_yaw_max_deg\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for c in &self.clusters {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{},{},{},{},{},{}",
                c.cluster,
                c.count,
                c.centroid_pitch_deg,
                c.centroid_yaw_deg,
                opt(c.gaze_mean_deg.map(|m| m[0])),
                opt(c.gaze_mean_deg.map(|m| m[1])),
                opt(c.gaze_yaw_circular_mean_deg),
                opt(c.gaze_cov_deg2.map(|m| m[0][0])),
                opt(c.gaze_cov_deg2.map(|m| m[0][1])),
                opt(c.gaze_cov_deg2.map(|m| m[1][1])),
                opt(c.gaze_yaw_range_deg.map(|r| r[0])),
                opt(c.gaze_yaw_range_deg.map(|r| r[1])),
            );
        }
        out
    }
}

/// Groups samples by their assigned head-pose cluster and summarizes gaze per group.
pub fn cluster_stats(model: &ClusterModel, dataset: &Dataset) -> ClusterStatsReport {
    let k = model.k();
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    for s in dataset.samples() {
        let c = model.assign(s.head);
        let (p, y) = s.gaze.to_degrees();
        members[c.index()].push((p, y));
    }
    let clusters = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let id = ClusterId::from_index(i);
            let (cp, cy) = model.centroid_angles(id).to_degrees();
            let mut histogram = GazeHistogram::default();
            for &(p, y) in m {
                histogram.add(p, y);
            }
            let (mean, cov, circ, range) = if m.is_empty() {
                (None, None, None, None)
            } else {
                let n = m.len() as f64;
                let mp = m.iter().map(|v| v.0).sum::<f64>() / n;
                let my = m.iter().map(|v| v.1).sum::<f64>() / n;
                let mut cov = [[0.0; 2]; 2];
                for &(p, y) in m {
                    cov[0][0] += (p - mp) * (p - mp);
                    cov[0][1] += (p - mp) * (y - my);
                    cov[1][1] += (y - my) * (y - my);
                }
                cov[0][0] /= n;
                cov[0][1] /= n;
                cov[1][1] /= n;
                cov[1][0] = cov[0][1];
                let (s, c) = m.iter().fold((0.0, 0.0), |(s, c), v| {
                    let (sy, cy) = v.1.to_radians().sin_cos();
                    (s + sy, c + cy)
                });
                let circ = s.atan2(c).to_degrees();
                let lo = m.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
                let hi = m.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
                (Some([mp, my]), Some(cov), Some(circ), Some([lo, hi]))
            };
            ClusterStats {
                cluster: id,
                count: m.len(),
                centroid_pitch_deg: cp,
                centroid_yaw_deg: cy,
                gaze_mean_deg: mean,
                gaze_cov_deg2: cov,
                gaze_yaw_circular_mean_deg: circ,
                gaze_yaw_range_deg: range,
                histogram,
            }
        })
        .collect();
    ClusterStatsReport {
        k,
        total: dataset.len(),
        clusters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Sample;
    use crate::geometry::Angles;
    use crate::image::EyeImage;

    fn ds(rows: &[(Angles, Angles)]) -> Dataset {
        let entries = rows
            .iter()
            .enumerate()
            .map(|(i, &(h, g))| {
                (
                    Sample::new(format!("x{i:03}"), "s", h, g),
                    EyeImage::from_raw(1, 1, 1, vec![0]).unwrap(),
                )
            })
            .collect();
        Dataset::new(1, 1, 1, entries).unwrap()
    }

    #[test]
    fn single_sample_cluster() {
        let m = ClusterModel::from_angles(&[Angles::from_degrees(0.0, -40.0), Angles::from_degrees(0.0, 40.0)]).unwrap();
        let g = Angles::from_degrees(5.0, 30.0);
        let r = cluster_stats(&m, &ds(&[(Angles::from_degrees(0.0, 35.0), g)]));
        let c2 = &r.clusters[1];
        assert_eq!(c2.count, 1);
        let mean = c2.gaze_mean_deg.unwrap();
        assert!((mean[0] - 5.0).abs() < 1e-12 && (mean[1] - 30.0).abs() < 1e-12);
        assert_eq!(c2.gaze_cov_deg2.unwrap(), [[0.0; 2]; 2]);
        let c1 = &r.clusters[0];
        assert_eq!(c1.count, 0);
        assert!(c1.gaze_mean_deg.is_none() && c1.gaze_cov_deg2.is_none());
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,0,"));
    }

    #[test]
    fn all_zero_poses_fill_central_bin() {
        let m = ClusterModel::from_angles(&[Angles::ZERO, Angles::from_degrees(0.0, 50.0)]).unwrap();
        let rows = vec![(Angles::ZERO, Angles::ZERO); 10];
        let r = cluster_stats(&m, &ds(&rows));
        assert_eq!(r.clusters[0].count, 10);
        assert_eq!(r.clusters[1].count, 0);
        let h = &r.clusters[0].histogram;
        let center = 45 * h.bins_per_axis + 45;
        assert_eq!(h.counts[center], 10);
        assert_eq!(h.bin_center(45), 1.0);
    }

    #[test]
    fn js_basics() {
        assert_eq!(js_divergence(&[1, 2, 3], &[2, 4, 6]), 0.0);
        let d = js_divergence(&[1, 0], &[0, 1]);
        assert!((d - std::f64::consts::LN_2).abs() < 1e-12);
        let a = js_divergence(&[3, 1, 0], &[1, 1, 2]);
        let b = js_divergence(&[1, 1, 2], &[3, 1, 0]);
        assert!((a - b).abs() < 1e-15 && a > 0.0);
    }
}
