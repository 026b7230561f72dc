//! Multi-resolution feature fusion.
//!
//! The image is downsampled into a dyadic pyramid, every level is tiled with
//! the same patch grid geometry, per-patch features are aggregated back into
//! full-level feature maps, and each layer is fused as
//! `sum_k w_k * Up(x_k, 2^k)` with bilinear upsampling. Fused maps are then
//! cut into per-position patch features.

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::features::{FeatureExtractor, FeatureLayer, FeatureMap, PatchContext, PatchSource};
use crate::imagery::{build_pyramid, resize_plane, ImageTensor, Planar};
use crate::parallel::Workers;
use crate::tiling::{aggregate, crop, PatchGrid};

/// Fusion weights; entry `k` weighs the level downsampled by `2^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub weights: Vec<f64>,
}

impl FusionSpec {
    /// Equal weights over rates `0..=max_rate`.
    pub fn equal(max_rate: usize) -> Self {
        let n = max_rate + 1;
        FusionSpec {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Rate-0 only: no fusion.
    pub fn identity() -> Self {
        FusionSpec { weights: vec![1.0] }
    }

    /// Default rates for an image: keep halving until the level reaches 1024
    /// pixels on its longer side.
    pub fn for_resolution(height: usize, width: usize) -> Self {
        let mut side = height.max(width);
        let mut k = 0;
        while side > 1024 && side % 2 == 0 {
            side /= 2;
            k += 1;
        }
        FusionSpec::equal(k)
    }

    pub fn max_rate(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(HiadError::Config("fusion needs at least one rate".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(HiadError::Config(format!("fusion weight {w} outside [0, 1]")));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(HiadError::Config(format!("fusion weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Rates with a non-zero weight; zero-weight levels are never computed.
    pub fn active_rates(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().copied().enumerate().filter(|&(_, w)| w != 0.0)
    }

    fn deepest_active(&self) -> usize {
        self.active_rates().map(|(k, _)| k).max().unwrap_or(0)
    }
}

fn fuse_active(items: &[(usize, f64, &FeatureLayer)], out_h: usize, out_w: usize) -> Result<FeatureLayer> {
    let (_, _, first) = items[0];
    let channels = first.channels;
    for &(k, _, layer) in items {
        let f = 1usize << k;
        if layer.channels != channels {
            return Err(HiadError::Geometry(format!(
                "rate {k} has {} channels, expected {channels}",
                layer.channels
            )));
        }
        if layer.height * f != out_h || layer.width * f != out_w {
            return Err(HiadError::Geometry(format!(
                "rate {k} layer is {}x{}, expected {}x{}",
                layer.height,
                layer.width,
                out_h / f,
                out_w / f
            )));
        }
    }
    let n = out_h * out_w;
    let mut acc = vec![0f64; channels * n];
    for &(_, w, layer) in items {
        for c in 0..channels {
            let plane = layer.plane(c);
            let up;
            let src: &[f32] = if layer.height == out_h && layer.width == out_w {
                plane
            } else {
                up = resize_plane(plane, layer.height, layer.width, out_h, out_w);
                &up
            };
            for (a, &v) in acc[c * n..(c + 1) * n].iter_mut().zip(src) {
                *a += w * v as f64;
            }
        }
    }
    FeatureLayer::new(
        channels,
        out_h,
        out_w,
        first.stride,
        acc.into_iter().map(|v| v as f32).collect(),
    )
}

/// Fuses one layer given its map at every rate (index `k` = rate `k`).
pub fn fuse_layer(per_rate: &[FeatureLayer], spec: &FusionSpec) -> Result<FeatureLayer> {
    spec.validate()?;
    if per_rate.len() != spec.weights.len() {
        return Err(HiadError::Geometry(format!(
            "{} rate maps for {} fusion weights",
            per_rate.len(),
            spec.weights.len()
        )));
    }
    let base = &per_rate[0];
    let items: Vec<_> = spec.active_rates().map(|(k, w)| (k, w, &per_rate[k])).collect();
    fuse_active(&items, base.height, base.width)
}

/// Extracts features patch by patch at every active pyramid level,
/// aggregates them per level and fuses the levels layer by layer.
pub fn build_fused_features(
    img: &ImageTensor,
    image_id: &str,
    extractor: &dyn FeatureExtractor,
    grid: &PatchGrid,
    spec: &FusionSpec,
    workers: &Workers,
) -> Result<FeatureMap> {
    spec.validate()?;
    let ex_spec = extractor.spec();
    if img.height() != grid.image_h || img.width() != grid.image_w {
        return Err(HiadError::Geometry(format!(
            "image is {}x{} but the grid expects {}x{}",
            img.height(),
            img.width(),
            grid.image_h,
            grid.image_w
        )));
    }
    let pyramid = build_pyramid(img, spec.deepest_active()).map_err(|e| {
        HiadError::Geometry(format!("image cannot be downsampled for fusion rates: {e}"))
    })?;

    let mut per_rate: Vec<(usize, f64, FeatureMap)> = Vec::new();
    for (k, w) in spec.active_rates() {
        let level = &pyramid[k];
        let level_grid = PatchGrid::new(
            level.height(),
            level.width(),
            grid.patch_h,
            grid.patch_w,
            grid.stride_h,
            grid.stride_w,
        )
        .map_err(|e| HiadError::Geometry(format!("pyramid level {k}: {e}")))?;
        let map = extract_and_aggregate(level, image_id, k, extractor, &level_grid, workers)?;
        per_rate.push((k, w, map));
    }

    let n_layers = ex_spec.strides.len();
    let mut fused = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let s = ex_spec.strides[l];
        let items: Vec<_> = per_rate.iter().map(|(k, w, m)| (*k, *w, &m.layers[l])).collect();
        fused.push(fuse_active(&items, grid.image_h / s, grid.image_w / s)?);
    }
    FeatureMap::new(fused)
}

/// Per-patch extraction on one pyramid level followed by per-layer aggregation.
pub fn extract_and_aggregate(
    level: &ImageTensor,
    image_id: &str,
    rate: usize,
    extractor: &dyn FeatureExtractor,
    grid: &PatchGrid,
    workers: &Workers,
) -> Result<FeatureMap> {
    let ex_spec = extractor.spec();
    ex_spec.check_patch_dims(grid.patch_h, grid.patch_w)?;
    let per_patch: Vec<FeatureMap> = workers.try_map(grid.len(), |idx| {
        let (i, j) = grid.position(idx);
        let (y0, x0) = grid.origin(i, j);
        let patch = crop(level, y0, x0, grid.patch_h, grid.patch_w);
        let ctx = PatchContext {
            image_id,
            source: PatchSource::Pyramid { rate, row: i, col: j },
        };
        extractor.extract(&ctx, &patch)
    })?;
    let mut layers = Vec::with_capacity(ex_spec.strides.len());
    for (l, &s) in ex_spec.strides.iter().enumerate() {
        let cell_grid = grid.scaled_down(s)?;
        let parts: Vec<FeatureLayer> = per_patch.iter().map(|m| m.layers[l].clone()).collect();
        layers.push(aggregate(&parts, &cell_grid)?);
    }
    FeatureMap::new(layers)
}

/// Concatenated multi-layer features of the patch at one grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeature {
    pub row: usize,
    pub col: usize,
    /// Per layer `(channels, height, width, stride)` of the cell block.
    pub dims: Vec<(usize, usize, usize, usize)>,
    /// Start of each layer block inside `data`.
    pub offsets: Vec<usize>,
    pub data: Vec<f32>,
}

impl PatchFeature {
    pub fn from_map(row: usize, col: usize, map: &FeatureMap) -> Self {
        let mut dims = Vec::with_capacity(map.layers.len());
        let mut offsets = Vec::with_capacity(map.layers.len());
        let mut data = Vec::with_capacity(map.total_len());
        for l in &map.layers {
            offsets.push(data.len());
            dims.push((l.channels, l.height, l.width, l.stride));
            data.extend_from_slice(&l.data);
        }
        PatchFeature {
            row,
            col,
            dims,
            offsets,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn layer(&self, l: usize) -> FeatureLayer {
        let (c, h, w, s) = self.dims[l];
        let start = self.offsets[l];
        FeatureLayer {
            channels: c,
            height: h,
            width: w,
            stride: s,
            data: self.data[start..start + c * h * w].to_vec(),
        }
    }

    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            layers: (0..self.dims.len()).map(|l| self.layer(l)).collect(),
        }
    }

    /// Per-cell vectors on the finest layer's grid. Coarser layers contribute
    /// the value of the cell that contains the fine cell.
    pub fn cells(&self) -> CellBlock {
        let (_, rows, cols, s0) = self.dims[0];
        let dim: usize = self.dims.iter().map(|d| d.0).sum();
        let mut data = Vec::with_capacity(rows * cols * dim);
        for y in 0..rows {
            for x in 0..cols {
                for (l, &(c, h, w, s)) in self.dims.iter().enumerate() {
                    let (ly, lx) = (y * s0 / s, x * s0 / s);
                    let base = self.offsets[l];
                    for ch in 0..c {
                        data.push(self.data[base + (ch * h + ly) * w + lx]);
                    }
                }
            }
        }
        CellBlock { rows, cols, dim, data }
    }
}

/// `rows x cols` cell vectors of length `dim`, stored cell after cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBlock {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl CellBlock {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(HiadError::Contract(format!(
                "cell block {rows}x{cols}x{dim} cannot hold {} values",
                data.len()
            )));
        }
        Ok(CellBlock { rows, cols, dim, data })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, k: usize) -> &[f32] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }
}

/// Cuts fused full-image features into one [`PatchFeature`] per grid position.
pub fn patchify_features(fused: &FeatureMap, grid: &PatchGrid) -> Result<Vec<PatchFeature>> {
    let cell_grids = fused
        .layers
        .iter()
        .map(|l| {
            if grid.patch_h % l.stride != 0 || grid.patch_w % l.stride != 0 {
                return Err(HiadError::Geometry(format!(
                    "patch {}x{} is not divisible by layer stride {}",
                    grid.patch_h, grid.patch_w, l.stride
                )));
            }
            let g = grid.scaled_down(l.stride)?;
            if g.image_h != l.height || g.image_w != l.width {
                return Err(HiadError::Geometry(format!(
                    "layer is {}x{} cells, grid implies {}x{}",
                    l.height, l.width, g.image_h, g.image_w
                )));
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let layers = fused
                .layers
                .iter()
                .zip(&cell_grids)
                .map(|(l, g)| {
                    let (y0, x0) = g.origin(i, j);
                    crop(l, y0, x0, g.patch_h, g.patch_w)
                })
                .collect();
            out.push(PatchFeature::from_map(i, j, &FeatureMap { layers }));
        }
    }
    Ok(out)
}
