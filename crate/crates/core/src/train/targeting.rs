use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Bin indices `floor(angle_deg / bin_deg)` of head pitch and yaw, followed by gaze
/// pitch and yaw when binning jointly.
pub type BinKey = Vec<i32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetingSpec {
    pub bin_deg: f64,
    /// Also bin on gaze angles (joint 4D histogram).
    pub joint_gaze: bool,
    /// Keep probability of the best-matched bin.
    pub max_keep_ratio: f64,
}

impl Default for TargetingSpec {
    fn default() -> Self {
        TargetingSpec {
            bin_deg: 5.0,
            joint_gaze: false,
            max_keep_ratio: 1.0,
        }
    }
}

impl TargetingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_deg > 0.0 && self.bin_deg.is_finite()) {
            return Err(Error::Config(format!("bin_deg {} must be positive", self.bin_deg)));
        }
        if !(self.max_keep_ratio > 0.0 && self.max_keep_ratio <= 1.0) {
            return Err(Error::Config(format!("max_keep_ratio {} must lie in (0, 1]", self.max_keep_ratio)));
        }
        Ok(())
    }

    pub fn key(&self, s: &Sample) -> BinKey {
        let b = |rad: f64| (rad.to_degrees() / self.bin_deg).floor() as i32;
        let mut k = vec![b(s.head.pitch), b(s.head.yaw)];
        if self.joint_gaze {
            k.extend([b(s.gaze.pitch), b(s.gaze.yaw)]);
        }
        k
    }
}

/// Normalized histogram of a dataset over the `TargetingSpec` binning.
pub fn binned_histogram(ds: &Dataset, spec: &TargetingSpec) -> BTreeMap<BinKey, f64> {
    let mut h: BTreeMap<BinKey, f64> = BTreeMap::new();
    for s in ds.samples() {
        *h.entry(spec.key(s)).or_default() += 1.0;
    }
    let n = ds.len().max(1) as f64;
    h.values_mut().for_each(|v| *v /= n);
    h
}

/// Symmetric chi-squared distance `sum (p - q)^2 / (p + q)` between two normalized
/// histograms, in `[0, 2]`.
pub fn histogram_chi2(p: &BTreeMap<BinKey, f64>, q: &BTreeMap<BinKey, f64>) -> f64 {
    let mut d = 0.0;
    for (k, &a) in p {
        let b = q.get(k).copied().unwrap_or(0.0);
        if a + b > 0.0 {
            d += (a - b) * (a - b) / (a + b);
        }
    }
    d + q.iter().filter(|(k, _)| !p.contains_key(*k)).map(|(_, &b)| b).sum::<f64>()
}

/// Subsamples `source` so its histogram follows `reference`: a sample in bin `b` is
/// kept with probability `max_keep_ratio * r_b / max r`, with `r_b = t_b / s_b` the
/// ratio of target to source density. Each sample owns a random stream keyed by its
/// position, so the decision for one sample does not depend on the others.
pub fn target_dataset(source: &Dataset, reference: &Dataset, spec: &TargetingSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if source.is_empty() || reference.is_empty() {
        return Err(Error::InvalidInput("targeting needs a non-empty source and reference".into()));
    }
    let s = binned_histogram(source, spec);
    let t = binned_histogram(reference, spec);
    let ratio: BTreeMap<&BinKey, f64> = s
        .iter()
        .map(|(k, &sv)| (k, t.get(k).copied().unwrap_or(0.0) / sv))
        .collect();
    let max = ratio.values().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::TargetingInfeasible(
            "source and reference histograms share no occupied bin".into(),
        ));
    }
    let stream_seed = derive_seed(seed, "targeting");
    let keep: Vec<usize> = source
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, smp)| {
            let p = spec.max_keep_ratio * ratio[&spec.key(smp)] / max;
            stream_rng(stream_seed, *i as u64).random::<f64>() < p
        })
        .map(|(i, _)| i)
        .collect();
    source.subset(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Angles;
    use crate::image::EyeImage;
    use rand_distr::{Distribution, Normal};

    fn ds(poses: &[(f64, f64)]) -> Dataset {
        let entries = poses
            .iter()
            .enumerate()
            .map(|(i, &(p, y))| {
                (
                    Sample::new(format!("x{i:06}"), "s", Angles::from_degrees(p, y), Angles::ZERO),
                    EyeImage::from_raw(1, 1, 1, vec![0]).unwrap(),
                )
            })
            .collect();
        Dataset::new(1, 1, 1, entries).unwrap()
    }

    fn uniform(n: usize, half: f64, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, 0);
        let poses: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(-half..half), rng.random_range(-half..half)))
            .collect();
        ds(&poses)
    }

    #[test]
    fn self_target_keeps_shape() {
        let src = uniform(2000, 30.0, 1);
        let spec = TargetingSpec {
            max_keep_ratio: 0.5,
            ..Default::default()
        };
        let out = target_dataset(&src, &src, &spec, 3).unwrap();
        let frac = out.len() as f64 / src.len() as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
        let all = target_dataset(&src, &src, &TargetingSpec::default(), 3).unwrap();
        assert_eq!(all, src);
        assert_eq!(binned_histogram(&all, &TargetingSpec::default()), binned_histogram(&src, &TargetingSpec::default()));
    }

    #[test]
    fn zero_target_mass_is_never_kept() {
        let src = uniform(5000, 60.0, 2);
        let reference = uniform(2000, 15.0, 3);
        let out = target_dataset(&src, &reference, &TargetingSpec::default(), 4).unwrap();
        assert!(!out.is_empty());
        for s in out.samples() {
            let (p, y) = s.head.to_degrees();
            assert!(p.abs() <= 20.0 && y.abs() <= 20.0, "({p}, {y})");
        }
        // Output is a subset of the source.
        let ids: std::collections::BTreeSet<&str> = src.samples().iter().map(|s| s.id.as_str()).collect();
        assert!(out.samples().iter().all(|s| ids.contains(s.id.as_str())));
    }

    #[test]
    fn gaussian_target_reduces_chi2() {
        let src = uniform(40_000, 60.0, 5);
        let mut rng = stream_rng(6, 0);
        let normal = Normal::new(0.0, 15.0).unwrap();
        let poses: Vec<(f64, f64)> = (0..20_000)
            .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
            .filter(|(p, y): &(f64, f64)| p.abs() < 60.0 && y.abs() < 60.0)
            .collect();
        let reference = ds(&poses);
        let spec = TargetingSpec::default();
        let t = binned_histogram(&reference, &spec);
        let before = histogram_chi2(&binned_histogram(&src, &spec), &t);
        let out = target_dataset(&src, &reference, &spec, 7).unwrap();
        let after = histogram_chi2(&binned_histogram(&out, &spec), &t);
        assert!(after <= 0.2 * before, "{after} vs {before}");
    }

    #[test]
    fn disjoint_supports_are_infeasible() {
        let a = ds(&[(0.0, -40.0), (0.0, -41.0)]);
        let b = ds(&[(0.0, 40.0)]);
        assert!(matches!(
            target_dataset(&a, &b, &TargetingSpec::default(), 0),
            Err(Error::TargetingInfeasible(_))
        ));
    }

    #[test]
    fn chi2_basics() {
        let p = BTreeMap::from([(vec![0, 0], 0.5), (vec![0, 1], 0.5)]);
        let q = BTreeMap::from([(vec![5, 5], 1.0)]);
        assert_eq!(histogram_chi2(&p, &p), 0.0);
        assert!((histogram_chi2(&p, &q) - 2.0).abs() < 1e-15);
        assert_eq!(histogram_chi2(&p, &q), histogram_chi2(&q, &p));
    }
}
