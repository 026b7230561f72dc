//! Routing of patch features to the detectors of a pool.
//!
//! * `a2o`: every patch goes to one detector.
//! * `o2o`: one detector per grid position.
//! * `na`: contiguous, near-square blocks of positions share a detector.
//! * `sca`: positions are clustered by their mean training feature.
//! * `ra`: patch features are clustered and routed to the nearest centroid,
//!   regardless of position.

mod kmeans;

pub use kmeans::{kmeans, KMeansModel, DEFAULT_MAX_ITERS, DEFAULT_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::fusion::PatchFeature;
use crate::store::{take_f64, take_u32, ArrayData, NamedArray};
use crate::tiling::PatchGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    A2o,
    O2o,
    Na,
    Sca,
    Ra,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::A2o => "a2o",
            Strategy::O2o => "o2o",
            Strategy::Na => "na",
            Strategy::Sca => "sca",
            Strategy::Ra => "ra",
        }
    }
}

/// Strategy choice as written in a run configuration. `detectors` is the
/// pool size M for the clustered and neighborhood strategies; when absent it
/// defaults by resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    #[serde(rename = "type")]
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detectors: Option<usize>,
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec {
            strategy: Strategy::Sca,
            detectors: None,
        }
    }
}

/// Default pool size: 4 up to 2K images, 8 above.
pub fn default_pool_size(image_h: usize, image_w: usize) -> usize {
    if image_h.max(image_w) > 2048 {
        8
    } else {
        4
    }
}

impl StrategySpec {
    pub fn new(strategy: Strategy, detectors: Option<usize>) -> Self {
        StrategySpec { strategy, detectors }
    }

    /// Pool size requested for `grid`. Defaults are capped by the number of
    /// positions; explicit values are not.
    pub fn pool_size(&self, grid: &PatchGrid) -> usize {
        match self.strategy {
            Strategy::A2o => 1,
            Strategy::O2o => grid.len(),
            _ => self
                .detectors
                .unwrap_or_else(|| default_pool_size(grid.image_h, grid.image_w).min(grid.len())),
        }
    }

    pub fn validate(&self, grid: &PatchGrid) -> Result<()> {
        let m = self.pool_size(grid);
        match self.strategy {
            Strategy::A2o | Strategy::O2o => {
                if self.detectors.is_some_and(|d| d != m) {
                    return Err(HiadError::Config(format!(
                        "{} always uses {m} detectors on a {}x{} grid",
                        self.strategy.name(),
                        grid.rows,
                        grid.cols
                    )));
                }
                Ok(())
            }
            Strategy::Na => na_layout(grid.rows, grid.cols, m).map(|_| ()),
            Strategy::Sca if m == 0 || m > grid.len() => Err(HiadError::Config(format!(
                "sca needs 1..={} detectors, got {m}",
                grid.len()
            ))),
            Strategy::Ra if m == 0 => Err(HiadError::Config("ra needs at least one detector".into())),
            _ => Ok(()),
        }
    }
}

/// Fitted routing function.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub strategy: Strategy,
    pub rows: usize,
    pub cols: usize,
    pub detectors: usize,
    /// Row-major position table for every strategy but `ra`.
    pub table: Vec<u32>,
    /// `detectors x dim` centroids for `ra`.
    pub centroids: Vec<f64>,
    pub dim: usize,
}

/// Serializable part of an [`Assignment`]; arrays are stored separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMeta {
    pub strategy: Strategy,
    pub rows: usize,
    pub cols: usize,
    pub detectors: usize,
    pub dim: usize,
}

impl Assignment {
    fn from_table(strategy: Strategy, grid: &PatchGrid, table: Vec<u32>) -> Self {
        let detectors = table.iter().map(|&t| t as usize + 1).max().unwrap_or(1);
        Assignment {
            strategy,
            rows: grid.rows,
            cols: grid.cols,
            detectors,
            table,
            centroids: Vec::new(),
            dim: 0,
        }
    }

    /// Detector index for the patch at `(row, col)` with feature `feature`.
    pub fn route(&self, row: usize, col: usize, feature: &[f32]) -> Result<usize> {
        if row >= self.rows || col >= self.cols {
            return Err(HiadError::Contract(format!(
                "position ({row}, {col}) outside the {}x{} grid",
                self.rows, self.cols
            )));
        }
        match self.strategy {
            Strategy::Ra => {
                if feature.len() != self.dim {
                    return Err(HiadError::Contract(format!(
                        "feature of length {} cannot be routed against {}-dim centroids",
                        feature.len(),
                        self.dim
                    )));
                }
                Ok(kmeans::nearest(&self.centroids, self.dim, feature).0)
            }
            _ => Ok(self.table[row * self.cols + col] as usize),
        }
    }

    pub fn route_patch(&self, pf: &PatchFeature) -> Result<usize> {
        self.route(pf.row, pf.col, pf.as_slice())
    }

    pub fn meta(&self) -> AssignmentMeta {
        AssignmentMeta {
            strategy: self.strategy,
            rows: self.rows,
            cols: self.cols,
            detectors: self.detectors,
            dim: self.dim,
        }
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        match self.strategy {
            Strategy::Ra => vec![NamedArray::new(
                "centroids",
                vec![self.detectors, self.dim],
                ArrayData::F64(self.centroids.clone()),
            )],
            _ => vec![NamedArray::new(
                "table",
                vec![self.rows, self.cols],
                ArrayData::U32(self.table.clone()),
            )],
        }
    }

    pub fn from_parts(meta: &AssignmentMeta, arrays: &[NamedArray]) -> Result<Self> {
        let mut a = Assignment {
            strategy: meta.strategy,
            rows: meta.rows,
            cols: meta.cols,
            detectors: meta.detectors,
            table: Vec::new(),
            centroids: Vec::new(),
            dim: meta.dim,
        };
        match meta.strategy {
            Strategy::Ra => a.centroids = take_f64(arrays, "centroids", &[meta.detectors, meta.dim])?,
            _ => {
                a.table = take_u32(arrays, "table", &[meta.rows, meta.cols])?;
                if let Some(bad) = a.table.iter().find(|&&t| t as usize >= meta.detectors) {
                    return Err(HiadError::Format(format!(
                        "position table routes to detector {bad} of {}",
                        meta.detectors
                    )));
                }
            }
        }
        Ok(a)
    }

    /// Row-major detector index per position; `ra` has no fixed table.
    pub fn position_table(&self) -> Option<&[u32]> {
        (self.strategy != Strategy::Ra).then_some(self.table.as_slice())
    }
}

pub fn assign_a2o(grid: &PatchGrid) -> Assignment {
    Assignment::from_table(Strategy::A2o, grid, vec![0; grid.len()])
}

pub fn assign_o2o(grid: &PatchGrid) -> Assignment {
    Assignment::from_table(Strategy::O2o, grid, (0..grid.len() as u32).collect())
}

/// Block layout for `m` neighborhoods: number of block rows and blocks per
/// block row (the last row takes the remainder).
fn na_layout(rows: usize, cols: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > rows * cols {
        return Err(HiadError::Config(format!(
            "na needs 1..={} detectors on a {rows}x{cols} grid, got {m}",
            rows * cols
        )));
    }
    let ideal = (m as f64 * rows as f64 / cols as f64).sqrt().round() as usize;
    let mut r = ideal.clamp(1, rows.min(m));
    let mut c = m.div_ceil(r);
    while r > 1 && c * (r - 1) >= m {
        r -= 1;
        c = m.div_ceil(r);
    }
    let last = m - c * (r - 1);
    if c > cols {
        return Err(HiadError::Config(format!(
            "na cannot split a {rows}x{cols} grid into {m} rectangular blocks ({r} block rows of {c})"
        )));
    }
    let mut per_row = vec![c; r];
    per_row[r - 1] = last;
    Ok(per_row)
}

pub fn assign_na(grid: &PatchGrid, m: usize) -> Result<Assignment> {
    let per_row = na_layout(grid.rows, grid.cols, m)?;
    let r = per_row.len();
    let mut table = vec![0u32; grid.len()];
    let mut first_id = 0u32;
    for (band, &n) in per_row.iter().enumerate() {
        let (y0, y1) = (band * grid.rows / r, (band + 1) * grid.rows / r);
        for b in 0..n {
            let (x0, x1) = (b * grid.cols / n, (b + 1) * grid.cols / n);
            for y in y0..y1 {
                for x in x0..x1 {
                    table[y * grid.cols + x] = first_id + b as u32;
                }
            }
        }
        first_id += n as u32;
    }
    Ok(Assignment::from_table(Strategy::Na, grid, table))
}

/// Renumbers labels so the used ones become `0..count` in ascending order.
fn compact(labels: &[usize]) -> Vec<u32> {
    let mut used: Vec<usize> = labels.to_vec();
    used.sort_unstable();
    used.dedup();
    labels
        .iter()
        .map(|l| used.binary_search(l).expect("label present") as u32)
        .collect()
}

/// Clusters grid positions by their mean feature over the training images.
/// `features[n]` holds the patch features of image `n` in row-major order.
pub fn assign_sca(grid: &PatchGrid, features: &[Vec<PatchFeature>], m: usize, seed: u64) -> Result<Assignment> {
    if m == 0 || m > grid.len() {
        return Err(HiadError::Config(format!(
            "sca needs 1..={} detectors, got {m}",
            grid.len()
        )));
    }
    if features.is_empty() {
        return Err(HiadError::Fit("sca needs at least one training image".into()));
    }
    let dim = features[0][0].data.len();
    let mut means = vec![0f64; grid.len() * dim];
    for per_image in features {
        if per_image.len() != grid.len() {
            return Err(HiadError::Contract(format!(
                "expected {} patch features per image, got {}",
                grid.len(),
                per_image.len()
            )));
        }
        for (p, pf) in per_image.iter().enumerate() {
            if pf.data.len() != dim {
                return Err(HiadError::Contract(format!(
                    "patch feature of length {} differs from {dim}",
                    pf.data.len()
                )));
            }
            for (s, &v) in means[p * dim..(p + 1) * dim].iter_mut().zip(&pf.data) {
                *s += v as f64;
            }
        }
    }
    let n = features.len() as f64;
    let points: Vec<f32> = means.iter().map(|&s| (s / n) as f32).collect();
    let model = kmeans(&points, dim, m, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    Ok(Assignment::from_table(Strategy::Sca, grid, compact(&model.labels)))
}

/// Clusters all training patch features; clusters that end up without
/// members (including exact centroid duplicates, which lose every tie) are
/// dropped, so the remaining centroids are pairwise distinct.
pub fn assign_ra(grid: &PatchGrid, features: &[&PatchFeature], m: usize, seed: u64) -> Result<Assignment> {
    let first = features
        .first()
        .ok_or_else(|| HiadError::Fit("ra needs at least one training feature".into()))?;
    let dim = first.data.len();
    let mut points = Vec::with_capacity(features.len() * dim);
    for pf in features {
        if pf.data.len() != dim {
            return Err(HiadError::Contract(format!(
                "patch feature of length {} differs from {dim}",
                pf.data.len()
            )));
        }
        points.extend_from_slice(&pf.data);
    }
    let model = kmeans(&points, dim, m, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let mut used = vec![false; m];
    for &l in &model.labels {
        used[l] = true;
    }
    let mut centroids = Vec::new();
    for (c, _) in used.iter().enumerate().filter(|(_, &u)| u) {
        centroids.extend_from_slice(model.centroid(c));
    }
    Ok(Assignment {
        strategy: Strategy::Ra,
        rows: grid.rows,
        cols: grid.cols,
        detectors: centroids.len() / dim,
        table: Vec::new(),
        centroids,
        dim,
    })
}

/// Fits the strategy of `spec`. `features[n]` holds image `n`'s patch
/// features in row-major grid order.
pub fn fit_assignment(
    spec: &StrategySpec,
    grid: &PatchGrid,
    features: &[Vec<PatchFeature>],
    seed: u64,
) -> Result<Assignment> {
    spec.validate(grid)?;
    let m = spec.pool_size(grid);
    match spec.strategy {
        Strategy::A2o => Ok(assign_a2o(grid)),
        Strategy::O2o => Ok(assign_o2o(grid)),
        Strategy::Na => assign_na(grid, m),
        Strategy::Sca => assign_sca(grid, features, m, seed),
        Strategy::Ra => {
            let all: Vec<&PatchFeature> = features.iter().flatten().collect();
            assign_ra(grid, &all, m, seed)
        }
    }
}
