//! Seeded Lloyd's k-means with k-means++ initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::KeyframeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index per input point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl Clustering {
    /// Sum over points of the squared distance to their centroid.
    pub fn inertia(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &c)| sq_dist(p, &self.centroids[c]))
            .sum()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<(), KeyframeError> {
    if k < 1 {
        return Err(KeyframeError::InvalidParams("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(KeyframeError::InvalidParams(format!(
            "k = {k} exceeds the {} available points",
            points.len()
        )));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(KeyframeError::InvalidParams(format!(
                "point {i} has dimension {}, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| v.is_nan()) {
            return Err(KeyframeError::InvalidParams(format!(
                "point {i} contains NaN"
            )));
        }
    }
    Ok(())
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` a hair below `target`
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // every remaining point duplicates a chosen centre
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Moves the point farthest from its centroid into each empty cluster,
/// taking only from clusters that keep at least one member.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let owner = assignment[i];
            if sizes[owner] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[owner]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("k <= n leaves a donor cluster");
        sizes[assignment[i]] -= 1;
        assignment[i] = c;
        sizes[c] = 1;
        centroids[c] = points[i].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

/// Clusters `points` into `params.k` groups.
///
/// Identical inputs and seed give identical output. Assignment ties go to
/// the lower centroid index.
pub fn kmeans_cluster(
    points: &[Vec<f64>],
    params: KMeansParams,
) -> Result<Clustering, KeyframeError> {
    validate(points, params.k)?;
    let k = params.k;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut iterations = 0;

    for _ in 0..params.max_iters.max(1) {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        repair_empty(points, &mut assignment, &mut centroids);
        let updated = update_centroids(points, &assignment, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < params.tol {
            break;
        }
    }

    Ok(Clustering {
        assignment,
        centroids,
        iterations,
    })
}
