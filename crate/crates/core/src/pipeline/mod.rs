//! Fit and inference of the two-branch tiled detector.
//!
//! The high-resolution branch routes every patch of the fused feature map to
//! one detector of the pool, normalizes each patch score map with that
//! detector's validation statistics and stitches the patches back together.
//! The low-resolution branch scores a downsampled copy of the whole image with
//! its own detector. The final map is the pointwise maximum of both.

mod bundle;
mod config;
mod pseudo;

pub use bundle::{load_bundle, save_bundle, BUNDLE_FORMAT, BUNDLE_VERSION};
pub use config::{
    PipelineConfig, Resolved, Seeds, CONFIG_VERSION, DEFAULT_LOW_RES, DEFAULT_PATCH, DEFAULT_VALIDATION_FRACTION,
};
pub use pseudo::{make_pseudo_anomaly, split_validation, Rect};

use serde::{Deserialize, Serialize};

use crate::assignment::{fit_assignment, Assignment};
use crate::detectors::Detector;
use crate::error::{HiadError, Result};
use crate::features::{FeatureExtractor, PatchContext, PatchSource};
use crate::fusion::{build_fused_features, patchify_features, CellBlock, FusionSpec, PatchFeature};
use crate::imagery::{downsample_to, resize_bilinear, ImageTensor, ScalarMap};
use crate::parallel::Workers;
use crate::tiling::{aggregate, PatchGrid};

/// Smallest scale a detector's statistics may have.
pub const STD_FLOOR: f64 = 1e-12;

/// An image together with the identifier used to look up precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedImage {
    pub id: String,
    pub image: ImageTensor,
}

impl NamedImage {
    pub fn new(id: impl Into<String>, image: ImageTensor) -> Self {
        NamedImage { id: id.into(), image }
    }
}

/// Location and scale of one detector's scores on clean validation pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    /// Validation pixels the statistics come from; 0 marks pooled fallback stats.
    pub pixels: u64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean: 0.0,
        std: 1.0,
        pixels: 0,
    };

    pub fn apply(&self, map: &ScalarMap) -> ScalarMap {
        normalize(map, self)
    }
}

/// `(s - mean) / std` per pixel.
pub fn normalize(map: &ScalarMap, stats: &NormStats) -> ScalarMap {
    let inv = 1.0 / stats.std.max(STD_FLOOR);
    let data = map
        .values()
        .iter()
        .map(|&s| ((s as f64 - stats.mean) * inv) as f32)
        .collect();
    ScalarMap::new(map.height(), map.width(), data).expect("same dims")
}

/// Mean and population variance from sums shifted by the first value seen,
/// which keeps the sums small when scores share a large offset.
#[derive(Debug, Clone, Default)]
struct Moments {
    shift: Option<f64>,
    n: u64,
    s1: f64,
    s2: f64,
}

impl Moments {
    fn add(&mut self, values: &[f32]) {
        let Some(&first) = values.first() else { return };
        let k = *self.shift.get_or_insert(first as f64);
        for &v in values {
            let d = v as f64 - k;
            self.s1 += d;
            self.s2 += d * d;
        }
        self.n += values.len() as u64;
    }

    fn stats(&self) -> Option<NormStats> {
        let k = self.shift?;
        let n = self.n as f64;
        let m = self.s1 / n;
        let var = (self.s2 / n - m * m).max(0.0);
        Some(NormStats {
            mean: k + m,
            std: var.sqrt().max(STD_FLOOR),
            pixels: self.n,
        })
    }
}

/// Whole-image detector on the downsampled image.
#[derive(Debug, Clone, PartialEq)]
pub struct LowResBranch {
    pub height: usize,
    pub width: usize,
    pub detector: Detector,
    pub stats: NormStats,
}

/// What happened during fit, kept in the bundle for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub fit_images: Vec<String>,
    pub validation_images: Vec<String>,
    /// Training patches routed to each detector.
    pub group_patches: Vec<usize>,
    /// Mean fused score outside and inside the pseudo anomalies; also the
    /// default rendering range for heatmaps.
    pub gate_outside: f64,
    pub gate_inside: f64,
}

/// Everything needed to score new images.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub image_h: usize,
    pub image_w: usize,
    pub grid: PatchGrid,
    pub fusion: FusionSpec,
    pub assignment: Assignment,
    pub detectors: Vec<Detector>,
    pub stats: Vec<NormStats>,
    pub low: Option<LowResBranch>,
    pub summary: FitSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    /// Pointwise maximum of both branches.
    pub map: ScalarMap,
    /// Maximum of `map`.
    pub score: f32,
    pub high: Option<ScalarMap>,
    pub low: Option<ScalarMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferOptions {
    /// Use the low-resolution branch when the bundle has one.
    pub low_res: bool,
    /// Return the per-branch maps as well.
    pub keep_branches: bool,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            low_res: true,
            keep_branches: false,
        }
    }
}

/// Pointwise maximum of the branch maps.
pub fn combine_branches(high: &ScalarMap, low: Option<&ScalarMap>) -> Result<ScalarMap> {
    match low {
        Some(l) => high.pointwise_max(l),
        None => Ok(high.clone()),
    }
}

fn high_features(
    img: &NamedImage,
    extractor: &dyn FeatureExtractor,
    grid: &PatchGrid,
    fusion: &FusionSpec,
    workers: &Workers,
) -> Result<Vec<PatchFeature>> {
    let fused = build_fused_features(&img.image, &img.id, extractor, grid, fusion, workers)?;
    patchify_features(&fused, grid)
}

fn low_features(img: &NamedImage, extractor: &dyn FeatureExtractor, h: usize, w: usize) -> Result<PatchFeature> {
    let small = downsample_to(&img.image, h, w)?;
    let ctx = PatchContext {
        image_id: &img.id,
        source: PatchSource::LowRes,
    };
    Ok(PatchFeature::from_map(0, 0, &extractor.extract(&ctx, &small)?))
}

/// Raw per-patch pixel scores and the detector each patch was routed to.
fn raw_patch_scores(
    patches: &[PatchFeature],
    grid: &PatchGrid,
    assignment: &Assignment,
    detectors: &[Detector],
    workers: &Workers,
) -> Result<Vec<(usize, ScalarMap)>> {
    workers.try_map(patches.len(), |k| {
        let pf = &patches[k];
        let d = assignment.route_patch(pf)?;
        let sp = detectors[d].score_patch(pf, grid.patch_h, grid.patch_w)?;
        Ok((d, sp.pixels))
    })
}

fn check_dims(images: &[NamedImage]) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| HiadError::Fit("no training images".into()))?;
    let dims = (first.image.height(), first.image.width());
    for im in images {
        if (im.image.height(), im.image.width()) != dims {
            return Err(HiadError::Contract(format!(
                "training image {:?} is {}x{}, expected {}x{} like {:?}",
                im.id,
                im.image.height(),
                im.image.width(),
                dims.0,
                dims.1,
                first.id
            )));
        }
    }
    Ok(dims)
}

fn pseudo_seed(base: u64, k: usize) -> u64 {
    base ^ ((k as u64 + 1) << 32)
}

/// Fits both branches on normal images.
pub fn fit(images: &[NamedImage], config: &PipelineConfig, workers: &Workers) -> Result<ModelBundle> {
    let (h, w) = check_dims(images)?;
    let resolved = config.resolve(h, w)?;
    let extractor = config.extractor.build()?;
    let ex = extractor.as_ref();
    let seeds = config.seeds;
    let (fit_idx, val_idx) = split_validation(images.len(), config.validation_fraction, seeds.split)?;
    let grid = resolved.grid;

    let features: Vec<Vec<PatchFeature>> = fit_idx
        .iter()
        .map(|&i| high_features(&images[i], ex, &grid, &resolved.fusion, workers))
        .collect::<Result<_>>()?;
    let assignment = fit_assignment(&config.strategy, &grid, &features, seeds.clustering)?;

    let mut groups: Vec<Vec<CellBlock>> = vec![Vec::new(); assignment.detectors];
    for pf in features.iter().flatten() {
        groups[assignment.route_patch(pf)?].push(pf.cells());
    }
    drop(features);
    if let Some(d) = groups.iter().position(Vec::is_empty) {
        return Err(HiadError::Fit(format!(
            "detector {d} of {} received no training patches",
            groups.len()
        )));
    }
    let group_patches: Vec<usize> = groups.iter().map(Vec::len).collect();
    let detectors = workers.try_map(groups.len(), |d| {
        let refs: Vec<&CellBlock> = groups[d].iter().collect();
        config.detector.fit(&refs, seeds.coreset.wrapping_add(d as u64))
    })?;
    drop(groups);

    let low_fit = match resolved.low_res {
        None => None,
        Some((lh, lw)) => {
            let blocks: Vec<CellBlock> = workers
                .try_map(fit_idx.len(), |k| low_features(&images[fit_idx[k]], ex, lh, lw))?
                .iter()
                .map(PatchFeature::cells)
                .collect();
            let refs: Vec<&CellBlock> = blocks.iter().collect();
            let seed = seeds.coreset.wrapping_add(detectors.len() as u64);
            Some((lh, lw, config.detector.fit(&refs, seed)?))
        }
    };

    // Normalization statistics from clean validation images.
    let mut moments = vec![Moments::default(); detectors.len()];
    let mut pooled = Moments::default();
    let mut low_moments = Moments::default();
    for &i in &val_idx {
        let patches = high_features(&images[i], ex, &grid, &resolved.fusion, workers)?;
        for (d, map) in raw_patch_scores(&patches, &grid, &assignment, &detectors, workers)? {
            moments[d].add(map.values());
            pooled.add(map.values());
        }
        if let Some((lh, lw, det)) = &low_fit {
            let pf = low_features(&images[i], ex, *lh, *lw)?;
            low_moments.add(det.score_patch(&pf, *lh, *lw)?.pixels.values());
        }
    }
    let pooled_stats = pooled
        .stats()
        .ok_or_else(|| HiadError::Fit("validation images produced no scores".into()))?;
    let stats: Vec<NormStats> = moments
        .iter()
        .map(|m| m.stats().unwrap_or(NormStats { pixels: 0, ..pooled_stats }))
        .collect();
    let low = low_fit.map(|(height, width, detector)| LowResBranch {
        height,
        width,
        detector,
        stats: low_moments.stats().expect("validation set is non-empty"),
    });

    let mut bundle = ModelBundle {
        config: config.clone(),
        image_h: h,
        image_w: w,
        grid,
        fusion: resolved.fusion,
        assignment,
        detectors,
        stats,
        low,
        summary: FitSummary {
            fit_images: fit_idx.iter().map(|&i| images[i].id.clone()).collect(),
            validation_images: val_idx.iter().map(|&i| images[i].id.clone()).collect(),
            group_patches,
            gate_outside: 0.0,
            gate_inside: 0.0,
        },
    };

    // Sanity gate: pasted rectangles must score above their surroundings.
    let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0f64, 0u64, 0f64, 0u64);
    for (k, &i) in val_idx.iter().enumerate() {
        let (img, mask, _) = make_pseudo_anomaly(&images[i].image, grid.patch_h, grid.patch_w, pseudo_seed(seeds.pseudo, k));
        let res = bundle.infer(&NamedImage::new(images[i].id.clone(), img), workers)?;
        for (&s, &m) in res.map.values().iter().zip(mask.values()) {
            if m > 0.5 {
                sum_in += s as f64;
                n_in += 1;
            } else {
                sum_out += s as f64;
                n_out += 1;
            }
        }
    }
    let inside = sum_in / n_in.max(1) as f64;
    let outside = sum_out / n_out.max(1) as f64;
    if !(inside > outside) {
        return Err(HiadError::Calibration(format!(
            "pseudo anomalies score {inside:.4} on average, not above the {outside:.4} of their surroundings"
        )));
    }
    bundle.summary.gate_inside = inside;
    bundle.summary.gate_outside = outside;
    Ok(bundle)
}

impl ModelBundle {
    fn check_image(&self, img: &ImageTensor) -> Result<()> {
        if (img.height(), img.width()) != (self.image_h, self.image_w) {
            return Err(HiadError::Contract(format!(
                "image is {}x{} but the model was fitted on {}x{}",
                img.height(),
                img.width(),
                self.image_h,
                self.image_w
            )));
        }
        Ok(())
    }

    pub fn extractor(&self) -> Result<Box<dyn FeatureExtractor>> {
        self.config.extractor.build()
    }

    /// Default rendering range for heatmaps.
    pub fn render_range(&self) -> [f32; 2] {
        [self.summary.gate_outside as f32, self.summary.gate_inside as f32]
    }

    /// Normalized, stitched high-resolution map and the detector of each patch.
    pub fn high_map(&self, img: &NamedImage, workers: &Workers) -> Result<(ScalarMap, Vec<usize>)> {
        self.check_image(&img.image)?;
        let extractor = self.extractor()?;
        let patches = high_features(img, extractor.as_ref(), &self.grid, &self.fusion, workers)?;
        let raw = raw_patch_scores(&patches, &self.grid, &self.assignment, &self.detectors, workers)?;
        let routes: Vec<usize> = raw.iter().map(|(d, _)| *d).collect();
        let maps: Vec<ScalarMap> = raw.iter().map(|(d, m)| normalize(m, &self.stats[*d])).collect();
        Ok((aggregate(&maps, &self.grid)?, routes))
    }

    /// Normalized low-resolution map upsampled to the image size.
    pub fn low_map(&self, img: &NamedImage) -> Result<Option<ScalarMap>> {
        self.check_image(&img.image)?;
        let Some(low) = &self.low else { return Ok(None) };
        let extractor = self.extractor()?;
        let pf = low_features(img, extractor.as_ref(), low.height, low.width)?;
        let raw = low.detector.score_patch(&pf, low.height, low.width)?.pixels;
        let normalized = normalize(&raw, &low.stats);
        Ok(Some(resize_bilinear(&normalized, self.image_h, self.image_w)?))
    }

    pub fn infer(&self, img: &NamedImage, workers: &Workers) -> Result<AnomalyResult> {
        self.infer_with(img, workers, InferOptions::default())
    }

    pub fn infer_with(&self, img: &NamedImage, workers: &Workers, opts: InferOptions) -> Result<AnomalyResult> {
        let (high, _) = self.high_map(img, workers)?;
        let low = if opts.low_res { self.low_map(img)? } else { None };
        let map = combine_branches(&high, low.as_ref())?;
        if let Some(i) = map.values().iter().position(|v| !v.is_finite()) {
            return Err(HiadError::Numeric(format!("anomaly map value {i} is not finite")));
        }
        let score = map.max();
        Ok(AnomalyResult {
            map,
            score,
            high: opts.keep_branches.then_some(high),
            low: if opts.keep_branches { low } else { None },
        })
    }
}
