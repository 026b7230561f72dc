//! Memory-bank detector: greedy k-center coreset and exact nearest-neighbor search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HiadError, Result};
use crate::fusion::CellBlock;
use crate::store::{take_f32, ArrayData, NamedArray};

pub const DEFAULT_CORESET_RATIO: f64 = 0.01;

/// Squared Euclidean distance with a fixed eight-lane summation order.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    for (k, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        let d = x - y;
        acc[k] += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Number of vectors kept for `n` candidates at `ratio`.
pub fn coreset_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Greedy farthest-point selection over `data` (rows of `dim` values).
///
/// Starts from a seeded random row and repeatedly adds the row farthest from
/// the selected set, ties going to the lowest index. Returns indices in
/// selection order.
pub fn coreset_select(data: &[f32], dim: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(HiadError::Precondition(format!(
            "coreset needs a non-empty set of {dim}-vectors, got {} values",
            data.len()
        )));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(HiadError::Config(format!("coreset ratio must lie in (0, 1], got {ratio}")));
    }
    let n = data.len() / dim;
    let k = coreset_size(n, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..n);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut selected = Vec::with_capacity(k);
    selected.push(start);
    let mut nearest: Vec<f32> = (0..n).map(|i| squared_distance(row(i), row(start))).collect();
    while selected.len() < k {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        selected.push(best);
        let b = row(best);
        for (i, d) in nearest.iter_mut().enumerate() {
            let nd = squared_distance(row(i), b);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Exact nearest-neighbor index. Bank vectors are grouped around pivots and
/// whole groups are skipped when the triangle inequality proves they cannot
/// hold a closer vector.
#[derive(Debug, Clone)]
struct PivotIndex {
    dim: usize,
    pivots: Vec<f32>,
    radii: Vec<f64>,
    group_start: Vec<usize>,
    packed: Vec<f32>,
}

impl PivotIndex {
    fn build(bank: &[f32], dim: usize) -> Self {
        let n = bank.len() / dim;
        let p = ((n as f64).sqrt().ceil() as usize).clamp(1, n);
        // Bank rows come in greedy farthest-point order, so the leading rows
        // are already well spread.
        let pivots = bank[..p * dim].to_vec();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); p];
        let mut radii = vec![0f64; p];
        for i in 0..n {
            let v = &bank[i * dim..(i + 1) * dim];
            let mut g = 0;
            let mut gd = f32::INFINITY;
            for (j, pv) in pivots.chunks_exact(dim).enumerate() {
                let d = squared_distance(v, pv);
                if d < gd {
                    gd = d;
                    g = j;
                }
            }
            members[g].push(i);
            radii[g] = radii[g].max((gd as f64).sqrt());
        }
        let mut group_start = Vec::with_capacity(p + 1);
        let mut packed = Vec::with_capacity(bank.len());
        for m in &members {
            group_start.push(packed.len() / dim);
            for &i in m {
                packed.extend_from_slice(&bank[i * dim..(i + 1) * dim]);
            }
        }
        group_start.push(n);
        PivotIndex {
            dim,
            pivots,
            radii,
            group_start,
            packed,
        }
    }

    /// Smallest squared distance from `q` to the bank.
    fn nearest(&self, q: &[f32]) -> f32 {
        let dim = self.dim;
        let mut order: Vec<(f64, usize)> = self
            .pivots
            .chunks_exact(dim)
            .enumerate()
            .map(|(j, p)| ((squared_distance(q, p) as f64).sqrt(), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = f32::INFINITY;
        for &(dp, g) in &order {
            let r = self.radii[g];
            if best.is_finite() {
                let bd = (best as f64).sqrt();
                let lower = dp - r;
                if lower > bd + 1e-5 * (dp + r + bd) + 1e-12 {
                    continue;
                }
            }
            let rows = &self.packed[self.group_start[g] * dim..self.group_start[g + 1] * dim];
            for v in rows.chunks_exact(dim) {
                let d = squared_distance(q, v);
                if d < best {
                    best = d;
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBankDetector {
    pub dim: usize,
    pub coreset_ratio: f64,
    pub seed: u64,
    bank: Vec<f32>,
    index: PivotIndex,
}

impl PartialEq for MemoryBankDetector {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.coreset_ratio == other.coreset_ratio
            && self.seed == other.seed
            && self.bank == other.bank
    }
}

impl MemoryBankDetector {
    /// Builds a bank from all cell vectors of the given blocks.
    pub fn fit(samples: &[&CellBlock], coreset_ratio: f64, seed: u64) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| HiadError::Fit("memory bank needs samples".into()))?;
        let dim = first.dim;
        if let Some(b) = samples.iter().find(|b| b.dim != dim) {
            return Err(HiadError::Contract(format!(
                "cell vectors of length {} and {dim} cannot share a bank",
                b.dim
            )));
        }
        let mut data = Vec::with_capacity(samples.iter().map(|b| b.data.len()).sum());
        for b in samples {
            data.extend_from_slice(&b.data);
        }
        Self::fit_vectors(&data, dim, coreset_ratio, seed)
    }

    pub fn fit_vectors(data: &[f32], dim: usize, coreset_ratio: f64, seed: u64) -> Result<Self> {
        let chosen = coreset_select(data, dim, coreset_ratio, seed)?;
        let mut bank = Vec::with_capacity(chosen.len() * dim);
        for &i in &chosen {
            bank.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        Ok(Self::from_bank(bank, dim, coreset_ratio, seed))
    }

    fn from_bank(bank: Vec<f32>, dim: usize, coreset_ratio: f64, seed: u64) -> Self {
        let index = PivotIndex::build(&bank, dim);
        MemoryBankDetector {
            dim,
            coreset_ratio,
            seed,
            bank,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.bank.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.bank.is_empty()
    }

    pub fn bank(&self) -> &[f32] {
        &self.bank
    }

    /// Squared Euclidean distance from `q` to its nearest bank vector.
    pub fn nearest_squared(&self, q: &[f32]) -> f32 {
        self.index.nearest(q)
    }

    /// Euclidean distance from `q` to its nearest bank vector.
    pub fn distance(&self, q: &[f32]) -> f32 {
        self.nearest_squared(q).sqrt()
    }

    pub fn score_cells(&self, block: &CellBlock) -> Result<Vec<f32>> {
        if block.dim != self.dim {
            return Err(HiadError::Contract(format!(
                "cell vectors of length {} do not match bank length {}",
                block.dim, self.dim
            )));
        }
        Ok(block.iter().map(|q| self.distance(q)).collect())
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        vec![NamedArray::new(
            "bank",
            vec![self.len(), self.dim],
            ArrayData::F32(self.bank.clone()),
        )]
    }

    pub fn from_arrays(size: usize, dim: usize, coreset_ratio: f64, seed: u64, arrays: &[NamedArray]) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(HiadError::Format("memory bank must be non-empty".into()));
        }
        let bank = take_f32(arrays, "bank", &[size, dim])?;
        Ok(Self::from_bank(bank, dim, coreset_ratio, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn brute_nearest(bank: &[f32], dim: usize, q: &[f32]) -> f64 {
        bank.chunks_exact(dim)
            .map(|v| {
                v.iter()
                    .zip(q)
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.gen::<f32>()).collect()
    }

    #[test]
    fn coreset_sizes() {
        assert_eq!(coreset_size(5, 1.0), 5);
        assert_eq!(coreset_size(1000, 0.1), 100);
        assert_eq!(coreset_size(3, 0.5), 2);
        assert_eq!(coreset_size(10, 1e-6), 1);
        let pts = random_points(5, 3, 1);
        let all = coreset_select(&pts, 3, 1.0, 7).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        let det = MemoryBankDetector::fit_vectors(&random_points(1000, 2, 2), 2, 0.1, 3).unwrap();
        assert_eq!(det.len(), 100);
    }

    #[test]
    fn farthest_point_hand_trace() {
        // Seed chosen so the first pick is index 0.
        let pts = [0.0f32, 1.0, 10.0];
        let seed = (0..1000u64)
            .find(|&s| ChaCha8Rng::seed_from_u64(s).gen_range(0..3usize) == 0)
            .unwrap();
        assert_eq!(coreset_select(&pts, 1, 2.0 / 3.0, seed).unwrap(), vec![0, 2]);
    }

    #[test]
    fn duplicates_are_not_repeated_until_forced() {
        let base = random_points(6, 2, 9);
        let mut pts = base.clone();
        pts.extend_from_slice(&base);
        let chosen = coreset_select(&pts, 2, 0.5, 4).unwrap();
        let mut seen: Vec<&[f32]> = Vec::new();
        for &i in &chosen {
            let v = &pts[i * 2..i * 2 + 2];
            assert!(!seen.contains(&v), "duplicate picked before exhausting distinct points");
            seen.push(v);
        }
        // Forced: more picks than distinct vectors.
        let chosen = coreset_select(&pts, 2, 1.0, 4).unwrap();
        assert_eq!(chosen.len(), 12);
    }

    #[test]
    fn hand_distance() {
        let det = MemoryBankDetector::fit_vectors(&[0.0, 0.0, 1.0, 0.0], 2, 1.0, 0).unwrap();
        assert!((det.distance(&[0.5, 1.0]) as f64 - 1.25f64.sqrt()).abs() < 1e-7);
        assert_eq!(det.distance(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn index_matches_exhaustive_scan() {
        let dim = 24;
        let det = MemoryBankDetector::fit_vectors(&random_points(4000, dim, 11), dim, 0.25, 5).unwrap();
        let queries = random_points(1000, dim, 12);
        for q in queries.chunks_exact(dim) {
            let got = det.distance(q) as f64;
            let want = brute_nearest(det.bank(), dim, q);
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn greedy_covering_radius_within_twice_optimal() {
        let n = 50;
        let pts = random_points(n, 2, 21);
        let k = 3;
        let ratio = k as f64 / n as f64;
        let chosen = coreset_select(&pts, 2, ratio, 8).unwrap();
        assert_eq!(chosen.len(), k);
        let d = |i: usize, j: usize| {
            let (a, b) = (&pts[i * 2..i * 2 + 2], &pts[j * 2..j * 2 + 2]);
            ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64)
        };
        let radius = |centers: &[usize]| {
            (0..n)
                .map(|i| centers.iter().map(|&c| d(i, c)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let greedy = radius(&chosen);
        let mut optimal = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    optimal = optimal.min(radius(&[a, b, c]));
                }
            }
        }
        assert!(greedy <= 2.0 * optimal + 1e-12, "{greedy} > 2 * {optimal}");
    }

    #[test]
    fn selection_is_deterministic() {
        let pts = random_points(500, 4, 3);
        assert_eq!(
            coreset_select(&pts, 4, 0.1, 77).unwrap(),
            coreset_select(&pts, 4, 0.1, 77).unwrap()
        );
        assert!(coreset_select(&pts, 4, 0.0, 1).is_err());
        assert!(coreset_select(&[], 4, 0.5, 1).is_err());
    }

    #[test]
    fn array_roundtrip() {
        let det = MemoryBankDetector::fit_vectors(&random_points(50, 3, 4), 3, 0.5, 1).unwrap();
        let back = MemoryBankDetector::from_arrays(det.len(), 3, 0.5, 1, &det.to_arrays()).unwrap();
        assert_eq!(back, det);
        assert!(MemoryBankDetector::from_arrays(det.len() + 1, 3, 0.5, 1, &det.to_arrays()).is_err());
    }

    proptest! {
        #[test]
        fn score_is_one_lipschitz(
            q1 in proptest::collection::vec(-2.0f32..2.0, 6),
            q2 in proptest::collection::vec(-2.0f32..2.0, 6),
        ) {
            let det = MemoryBankDetector::fit_vectors(&random_points(64, 6, 13), 6, 0.5, 2).unwrap();
            let gap: f64 = q1.iter().zip(&q2).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>().sqrt();
            let diff = (det.distance(&q1) as f64 - det.distance(&q2) as f64).abs();
            prop_assert!(diff <= gap + 1e-5);
        }
    }
}
