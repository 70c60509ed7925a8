use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nearest, ClusterModel};
use crate::error::{Error, Result};
use crate::geometry::{angles_to_vec, Angles, UnitVec3};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 7,
            max_iter: 100,
            n_restarts: 10,
            seed: 0,
        }
    }
}

/// Best restart plus per-iteration objective traces of every restart.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub objective: f64,
    pub best_restart: usize,
    pub iterations: usize,
    /// Objective after each centroid update, one trace per restart.
    pub traces: Vec<Vec<f64>>,
}

pub fn fit_kmeans(poses: &[Angles], cfg: &KMeansConfig) -> Result<ClusterModel> {
    fit_kmeans_traced(poses, cfg).map(|f| f.model)
}

/// Spherical k-means (Lloyd iterations, cosine distance, normalized-mean centroids)
/// with k-means++ seeding and `n_restarts` independent restarts.
pub fn fit_kmeans_traced(poses: &[Angles], cfg: &KMeansConfig) -> Result<KMeansFit> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("cannot cluster an empty pose set".into()));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let points: Vec<UnitVec3> = poses.iter().map(|&a| angles_to_vec(a)).collect();
    let distinct = count_distinct(&points);
    if cfg.k > distinct {
        return Err(Error::InvalidInput(format!(
            "k = {} exceeds the {distinct} distinct pose directions",
            cfg.k
        )));
    }
    let restarts = cfg.n_restarts.max(1);
    let mut starts: Vec<Start> = (0..restarts as u64).map(Start::PlusPlus).collect();
    starts.extend(small_problem_seeds(&points, cfg.k).into_iter().map(Start::Fixed));
    let runs: Vec<Restart> = starts
        .into_par_iter()
        .map(|start| {
            let centroids = match start {
                Start::PlusPlus(r) => seed_plus_plus(&points, cfg.k, &mut stream_rng(cfg.seed, r)),
                Start::Fixed(c) => c,
            };
            run_restart(&points, cfg.max_iter, centroids)
        })
        .collect();
    // Lowest objective wins; ties go to the earliest restart.
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.objective < runs[best].objective {
            best = i;
        }
    }
    let traces = runs.iter().map(|r| r.trace.clone()).collect();
    let run = &runs[best];
    Ok(KMeansFit {
        model: ClusterModel::new(run.centroids.clone())?,
        objective: run.objective,
        best_restart: best,
        iterations: run.iterations,
        traces,
    })
}

/// Final objective for each `k` in `ks`, same seed and restart budget.
pub fn k_sweep(poses: &[Angles], ks: &[usize], cfg: &KMeansConfig) -> Result<Vec<(usize, f64)>> {
    ks.iter()
        .map(|&k| {
            let c = KMeansConfig { k, ..cfg.clone() };
            fit_kmeans_traced(poses, &c).map(|f| (k, f.objective))
        })
        .collect()
}

fn count_distinct(points: &[UnitVec3]) -> usize {
    let mut keys: Vec<[u64; 3]> = points
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

struct Restart {
    centroids: Vec<UnitVec3>,
    objective: f64,
    iterations: usize,
    trace: Vec<f64>,
}

enum Start {
    PlusPlus(u64),
    Fixed(Vec<UnitVec3>),
}

/// Largest number of k-subsets of distinct points tried as extra starts.
const SUBSET_SEED_LIMIT: usize = 256;

/// Every k-subset of the distinct points, when there are at most [`SUBSET_SEED_LIMIT`] of them.
/// Small problems have few partitions and Lloyd's local optima matter most there.
fn small_problem_seeds(points: &[UnitVec3], k: usize) -> Vec<Vec<UnitVec3>> {
    let mut distinct: Vec<UnitVec3> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| q.x == p.x && q.y == p.y && q.z == p.z) {
            distinct.push(*p);
            if distinct.len() > 64 {
                return Vec::new();
            }
        }
    }
    let n = distinct.len();
    let mut combos = 1usize;
    for i in 0..k {
        combos = combos * (n - i) / (i + 1);
        if combos > SUBSET_SEED_LIMIT {
            return Vec::new();
        }
    }
    let mut out = Vec::with_capacity(combos);
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| distinct[i]).collect());
        let Some(pos) = (0..k).rev().find(|&j| idx[j] < n - k + j) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn run_restart(points: &[UnitVec3], max_iter: usize, mut centroids: Vec<UnitVec3>) -> Restart {
    let mut assignment: Vec<usize> = vec![usize::MAX; points.len()];
    let mut dist = vec![0.0; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        lloyd(points, &mut centroids, &mut assignment, &mut dist, max_iter, &mut iterations, &mut trace);
        if assignment[0] == usize::MAX || !point_moves(points, &mut centroids, &mut assignment) {
            break;
        }
        trace.push(assigned_objective(points, &centroids, &assignment));
    }

    let objective = points.iter().map(|p| nearest(&centroids, p).1).sum();
    Restart {
        centroids,
        objective,
        iterations,
        trace,
    }
}

/// Lloyd iterations until the assignment stops changing or the iteration budget runs out.
fn lloyd(
    points: &[UnitVec3],
    centroids: &mut [UnitVec3],
    assignment: &mut [usize],
    dist: &mut [f64],
    max_iter: usize,
    iterations: &mut usize,
    trace: &mut Vec<f64>,
) {
    let k = centroids.len();
    while *iterations < max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(&centroids, p);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dist[i] = d;
        }
        if !changed {
            break;
        }
        *iterations += 1;

        // Empty clusters take the point farthest from its current centroid.
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignment[i]] -= 1;
                counts[c] = 1;
                assignment[i] = c;
                dist[i] = 0.0;
                centroids[c] = points[i];
            }
        }

        let mut sums = vec![[0.0f64; 3]; k];
        for (p, &a) in points.iter().zip(assignment.iter()) {
            sums[a][0] += p.x;
            sums[a][1] += p.y;
            sums[a][2] += p.z;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            // A zero mean (antipodal members) keeps the previous centroid.
            if let Some(u) = UnitVec3::normalize(s[0], s[1], s[2]) {
                *c = u;
            }
        }
        trace.push(assigned_objective(points, centroids, assignment));
    }

}

fn assigned_objective(points: &[UnitVec3], centroids: &[UnitVec3], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| 1.0 - centroids[a].dot(p))
        .sum()
}

/// One pass of single-point moves. With normalized-mean centroids a cluster costs
/// `n - |S|` for member sum `S`, so each move is scored exactly. Returns whether any
/// point moved; centroids are refreshed from the new partition.
fn point_moves(points: &[UnitVec3], centroids: &mut [UnitVec3], assignment: &mut [usize]) -> bool {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment.iter()) {
        sums[a][0] += p.x;
        sums[a][1] += p.y;
        sums[a][2] += p.z;
        counts[a] += 1;
    }
    let norm = |s: [f64; 3]| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    let add = |s: [f64; 3], p: &UnitVec3, sign: f64| [s[0] + sign * p.x, s[1] + sign * p.y, s[2] + sign * p.z];
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let from = assignment[i];
        if counts[from] < 2 {
            continue;
        }
        let keep = norm(sums[from]);
        let leave = norm(add(sums[from], p, -1.0));
        let mut best = (0.0, from);
        for to in (0..k).filter(|&c| c != from) {
            let delta = keep + norm(sums[to]) - leave - norm(add(sums[to], p, 1.0));
            if delta < best.0 - 1e-12 {
                best = (delta, to);
            }
        }
        if best.1 != from {
            let to = best.1;
            sums[from] = add(sums[from], p, -1.0);
            sums[to] = add(sums[to], p, 1.0);
            counts[from] -= 1;
            counts[to] += 1;
            assignment[i] = to;
            moved = true;
        }
    }
    if moved {
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if let Some(u) = UnitVec3::normalize(s[0], s[1], s[2]) {
                *c = u;
            }
        }
    }
    moved
}

/// k-means++ seeding; for unit vectors the squared chord length is `2 * cosine distance`,
/// so sampling proportional to cosine distance is the usual D^2 weighting.
fn seed_plus_plus(points: &[UnitVec3], k: usize, rng: &mut impl Rng) -> Vec<UnitVec3> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d: Vec<f64> = points.iter().map(|p| (1.0 - centroids[0].dot(p)).max(0.0)).collect();
    while centroids.len() < k {
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick.expect("positive total weight")
        } else {
            // All remaining points coincide with chosen centroids.
            rng.random_range(0..points.len())
        };
        let c = points[next];
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min((1.0 - c.dot(p)).max(0.0));
        }
        centroids.push(c);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterId;

    fn cfg(k: usize) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iter: 100,
            n_restarts: 10,
            seed: 1,
        }
    }

    #[test]
    fn k1_is_normalized_mean() {
        let poses = [
            Angles::from_degrees(10.0, 20.0),
            Angles::from_degrees(-5.0, 40.0),
            Angles::from_degrees(0.0, -10.0),
        ];
        let m = fit_kmeans(&poses, &cfg(1)).unwrap();
        let mut s = [0.0; 3];
        for &p in &poses {
            let v = angles_to_vec(p);
            s[0] += v.x;
            s[1] += v.y;
            s[2] += v.z;
        }
        let want = UnitVec3::normalize(s[0], s[1], s[2]).unwrap();
        let got = m.centroids()[0];
        assert!((got.x - want.x).abs() < 1e-12 && (got.y - want.y).abs() < 1e-12 && (got.z - want.z).abs() < 1e-12);
        assert!(poses.iter().all(|&p| m.assign(p) == ClusterId::new(1).unwrap()));
    }

    #[test]
    fn two_symmetric_groups_separate() {
        let mut poses = vec![Angles::from_degrees(0.0, -60.0); 5];
        poses.extend(vec![Angles::from_degrees(0.0, 60.0); 5]);
        let m = fit_kmeans(&poses, &cfg(2)).unwrap();
        let mut yaws: Vec<f64> = (1..=2)
            .map(|i| m.centroid_angles(ClusterId::new(i).unwrap()).yaw.to_degrees())
            .collect();
        yaws.sort_by(f64::total_cmp);
        assert!((yaws[0] + 60.0).abs() < 1e-6 && (yaws[1] - 60.0).abs() < 1e-6);
        for i in 0..5 {
            assert_eq!(m.assign(poses[i]), m.assign(poses[0]));
            assert_ne!(m.assign(poses[i + 5]), m.assign(poses[0]));
        }
    }

    #[test]
    fn errors() {
        assert!(fit_kmeans(&[], &cfg(1)).is_err());
        let poses = vec![Angles::ZERO; 4];
        assert!(fit_kmeans(&poses, &cfg(2)).is_err());
        assert!(fit_kmeans(&poses, &cfg(0)).is_err());
        assert!(fit_kmeans(&poses, &cfg(1)).is_ok());
    }

    #[test]
    fn k_equal_n_has_zero_objective_and_consistent_assign() {
        let poses: Vec<Angles> = (0..6).map(|i| Angles::from_degrees(i as f64 * 7.0 - 20.0, 50.0 - i as f64 * 17.0)).collect();
        let fit = fit_kmeans_traced(&poses, &cfg(6)).unwrap();
        assert!(fit.objective.abs() < 1e-12);
        let ids = fit.model.assign_all(poses.iter().copied());
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }

    #[test]
    fn deterministic_given_seed() {
        let poses: Vec<Angles> = (0..40)
            .map(|i| Angles::from_degrees(((i * 37) % 100) as f64 - 50.0, ((i * 53) % 110) as f64 - 55.0))
            .collect();
        let a = fit_kmeans_traced(&poses, &cfg(4)).unwrap();
        let b = fit_kmeans_traced(&poses, &cfg(4)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.traces, b.traces);
        // Re-assigning training poses after convergence is stable.
        let ids = a.model.assign_all(poses.iter().copied());
        let m2 = a.model.clone();
        assert_eq!(ids, m2.assign_all(poses.iter().copied()));
    }
}
