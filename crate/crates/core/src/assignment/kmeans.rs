//! Seeded k-means (k-means++ initialization, Lloyd iterations).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HiadError, Result};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    /// Final label of every training point (its nearest centroid).
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia measured at each assignment step, last entry is the final model.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl KMeansModel {
    pub fn centroid(&self, m: usize) -> &[f64] {
        &self.centroids[m * self.dim..(m + 1) * self.dim]
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        nearest(&self.centroids, self.dim, x).0
    }
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(&a, &b)| (a as f64 - b).powi(2)).sum()
}

/// Index and squared distance of the nearest centroid, ties to the lowest index.
pub(crate) fn nearest(centroids: &[f64], dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (m, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

fn assign(points: &[f32], dim: usize, centroids: &[f64], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for (i, x) in points.chunks_exact(dim).enumerate() {
        let (m, d) = nearest(centroids, dim, x);
        labels[i] = m;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

fn plus_plus(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![rng.gen_range(0..n)];
    let to_f64 = |i: usize| row(i).iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let mut centroids = to_f64(chosen[0]);
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids)).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total weight")
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        let c = to_f64(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend(c);
    }
    centroids
}

/// Clusters `points` (rows of `dim` values) into `k` groups.
///
/// Lloyd iterations stop when no centroid moves by `tol` or more, or after
/// `max_iters`. A cluster left empty is re-seeded to the point farthest from
/// its current centroid.
pub fn kmeans(points: &[f32], dim: usize, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeansModel> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(HiadError::Contract(format!(
            "{} values do not form {dim}-vectors",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(HiadError::Config("k-means needs at least one cluster".into()));
    }
    if k > n {
        return Err(HiadError::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(points, dim, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters {
        history.push(assign(points, dim, &centroids, &mut labels, &mut dists));
        iterations += 1;
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, x) in points.chunks_exact(dim).enumerate() {
            let m = labels[i];
            counts[m] += 1;
            for (s, &v) in sums[m * dim..(m + 1) * dim].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        let mut updated = vec![0f64; k * dim];
        for m in 0..k {
            let dst = &mut updated[m * dim..(m + 1) * dim];
            if counts[m] > 0 {
                for (d, s) in dst.iter_mut().zip(&sums[m * dim..(m + 1) * dim]) {
                    *d = s / counts[m] as f64;
                }
            } else {
                // Farthest point from its own centroid; mark it used so two
                // empty clusters do not grab the same point.
                let mut far = 0;
                for i in 1..n {
                    if dists[i] > dists[far] {
                        far = i;
                    }
                }
                dists[far] = f64::NEG_INFINITY;
                for (d, &v) in dst.iter_mut().zip(&points[far * dim..(far + 1) * dim]) {
                    *d = v as f64;
                }
            }
        }
        let shift = centroids
            .chunks_exact(dim)
            .zip(updated.chunks_exact(dim))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    let inertia = assign(points, dim, &centroids, &mut labels, &mut dists);
    history.push(inertia);
    Ok(KMeansModel {
        k,
        dim,
        centroids,
        labels,
        inertia,
        history,
        iterations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_point() {
        let m = kmeans(&[1.5, -2.0], 2, 1, 0, 100, 1e-6).unwrap();
        assert_eq!(m.centroid(0), &[1.5, -2.0]);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn too_many_clusters_is_config_error() {
        assert!(matches!(kmeans(&[0.0, 1.0], 1, 3, 0, 100, 1e-6), Err(HiadError::Config(_))));
        assert!(matches!(kmeans(&[0.0, 1.0], 1, 0, 0, 100, 1e-6), Err(HiadError::Config(_))));
    }

    #[test]
    fn distinct_points_each_own_cluster() {
        let pts = [0.0f32, 0.0, 5.0, 1.0, -3.0, 4.0, 2.0, 2.0];
        let m = kmeans(&pts, 2, 4, 9, 100, 1e-6).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut labels = m.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0f32, 0.1).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..200 {
            let c = if i % 2 == 0 { 0.0 } else { 10.0 };
            pts.push(c + noise.sample(&mut rng));
            pts.push(c + noise.sample(&mut rng));
            truth.push(i % 2);
        }
        let m = kmeans(&pts, 2, 2, 1, 100, 1e-6).unwrap();
        let flip = m.labels[0] != truth[0];
        for (l, t) in m.labels.iter().zip(&truth) {
            assert_eq!(*l == 1, (*t == 1) != flip);
        }
    }

    #[test]
    fn identical_points_collapse_to_one_group() {
        let pts = vec![0.25f32; 3 * 10];
        let m = kmeans(&pts, 3, 3, 2, 100, 1e-6).unwrap();
        assert!(m.labels.iter().all(|&l| l == 0));
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn inertia_never_increases_and_labels_are_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let n = 60;
            let pts: Vec<f32> = (0..n * 3).map(|_| rng.gen::<f32>()).collect();
            let m = kmeans(&pts, 3, 1 + trial % 6, trial as u64, 100, 1e-6).unwrap();
            for w in m.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", m.history);
            }
            for (i, x) in pts.chunks_exact(3).enumerate() {
                let brute = (0..m.k)
                    .map(|c| (c, sq_dist(x, m.centroid(c))))
                    .fold((0, f64::INFINITY), |b, (c, d)| if d < b.1 { (c, d) } else { b });
                assert_eq!(m.labels[i], brute.0);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f32> = (0..300).map(|_| rng.gen::<f32>()).collect();
        assert_eq!(kmeans(&pts, 3, 5, 11, 100, 1e-6).unwrap(), kmeans(&pts, 3, 5, 11, 100, 1e-6).unwrap());
    }
}
