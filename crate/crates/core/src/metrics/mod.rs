//! Image- and pixel-level evaluation.
//!
//! Pixel metrics are computed after resizing every map (bilinear) and mask
//! (area threshold) to a common square evaluation size. P-AUC, P-AP and P-F1
//! pool the pixels of all images; PRO is computed per image and averaged over
//! images that contain at least one defect region.

mod components;
mod pro;
mod ranking;

pub use components::{connected_components, Components, Connectivity};
pub use pro::{pro, pro_curve, DEFAULT_FPR_LIMIT, DEFAULT_THRESHOLDS};
pub use ranking::{auroc, average_precision, f1_max, ranking_metrics, RankingMetrics};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::imagery::{resize_bilinear, resize_mask, ScalarMap};
use crate::parallel::Workers;

pub const DEFAULT_EVAL_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub p_auc: f64,
    pub p_ap: f64,
    pub p_f1: f64,
    pub pro: f64,
}

/// Dataset-level evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub i_auc: f64,
    pub p_auc: f64,
    pub p_ap: f64,
    pub p_f1: f64,
    pub pro: f64,
    pub eval_size: usize,
    pub images: usize,
    pub anomalous_images: usize,
    pub positive_pixels: usize,
}

impl EvalReport {
    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("I-AUC", format!("{:.4}", self.i_auc)),
            ("P-AUC", format!("{:.4}", self.p_auc)),
            ("P-AP", format!("{:.4}", self.p_ap)),
            ("P-F1", format!("{:.4}", self.p_f1)),
            ("PRO", format!("{:.4}", self.pro)),
            ("eval size", format!("{0}x{0}", self.eval_size)),
            ("images", self.images.to_string()),
            ("anomalous", self.anomalous_images.to_string()),
            ("positive px", self.positive_pixels.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<12} {v:>12}\n"));
        }
        out
    }
}

fn to_size(map: &ScalarMap, mask: &ScalarMap, size: usize) -> Result<(ScalarMap, ScalarMap)> {
    if (map.height(), map.width()) != (mask.height(), mask.width()) {
        return Err(HiadError::Contract(format!(
            "map {}x{} and mask {}x{} differ",
            map.height(),
            map.width(),
            mask.height(),
            mask.width()
        )));
    }
    if (map.height(), map.width()) == (size, size) {
        if !mask.is_binary() {
            return Err(HiadError::Precondition("mask values must be 0 or 1".into()));
        }
        return Ok((map.clone(), mask.clone()));
    }
    Ok((resize_bilinear(map, size, size)?, resize_mask(mask, size, size)?))
}

/// Pixel metrics over a set of maps and their ground-truth masks.
pub fn evaluate_pixels(maps: &[ScalarMap], masks: &[ScalarMap], eval_size: usize, workers: &Workers) -> Result<PixelMetrics> {
    if maps.len() != masks.len() || maps.is_empty() {
        return Err(HiadError::Contract(format!(
            "need matching non-empty map and mask lists, got {} and {}",
            maps.len(),
            masks.len()
        )));
    }
    if eval_size == 0 {
        return Err(HiadError::Config("evaluation size must be positive".into()));
    }
    let resized = workers.try_map(maps.len(), |i| to_size(&maps[i], &masks[i], eval_size))?;
    let n = eval_size * eval_size;
    let mut scores = Vec::with_capacity(n * maps.len());
    let mut labels = Vec::with_capacity(n * maps.len());
    for (m, g) in &resized {
        scores.extend_from_slice(m.values());
        labels.extend(g.values().iter().map(|&v| v > 0.5));
    }
    let ranking = ranking_metrics(&scores, &labels)?;
    drop(scores);
    drop(labels);
    let per_image = workers.map(resized.len(), |i| {
        let (m, g) = &resized[i];
        let mask: Vec<bool> = g.values().iter().map(|&v| v > 0.5).collect();
        if !mask.iter().any(|&b| b) {
            return None;
        }
        Some(pro(m.values(), &mask, eval_size, eval_size, DEFAULT_FPR_LIMIT, DEFAULT_THRESHOLDS))
    });
    let pros: Vec<f64> = per_image.into_iter().flatten().collect::<Result<_>>()?;
    if pros.is_empty() {
        return Err(HiadError::UndefinedMetric("no image has a defect region at the evaluation size".into()));
    }
    Ok(PixelMetrics {
        p_auc: ranking.auroc,
        p_ap: ranking.average_precision,
        p_f1: ranking.f1_max,
        pro: pros.iter().sum::<f64>() / pros.len() as f64,
    })
}

/// Image-level AUROC.
pub fn evaluate_images(scores: &[f32], labels: &[bool]) -> Result<f64> {
    auroc(scores, labels)
}

/// Full report: image AUROC from `image_scores`, pixel metrics from the maps.
pub fn evaluate(
    maps: &[ScalarMap],
    masks: &[ScalarMap],
    image_scores: &[f32],
    image_labels: &[bool],
    eval_size: usize,
    workers: &Workers,
) -> Result<EvalReport> {
    let i_auc = evaluate_images(image_scores, image_labels)?;
    let px = evaluate_pixels(maps, masks, eval_size, workers)?;
    Ok(EvalReport {
        i_auc,
        p_auc: px.p_auc,
        p_ap: px.p_ap,
        p_f1: px.p_f1,
        pro: px.pro,
        eval_size,
        images: maps.len(),
        anomalous_images: image_labels.iter().filter(|&&l| l).count(),
        positive_pixels: masks.iter().map(|m| m.count_nonzero()).sum(),
    })
}

/// Fraction of mask pixels that are foreground.
pub fn relative_defect_area(mask: &ScalarMap) -> f64 {
    mask.count_nonzero() as f64 / (mask.height() * mask.width()) as f64
}

/// Map of independent uniform `[0, 1)` scores, the chance-level control.
pub fn random_map(height: usize, width: usize, seed: u64) -> Result<ScalarMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarMap::new(height, width, (0..height * width).map(|_| rng.gen::<f32>()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with_block(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> ScalarMap {
        ScalarMap::from_fn(h, w, |y, x| if y >= y0 && y < y0 + s && x >= x0 && x < x0 + s { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn relative_area_examples() {
        assert_eq!(relative_defect_area(&ScalarMap::filled(4, 4, 0.0).unwrap()), 0.0);
        assert_eq!(relative_defect_area(&ScalarMap::filled(4, 4, 1.0).unwrap()), 1.0);
        let big = mask_with_block(2048, 2048, 100, 100, 16);
        assert_eq!(relative_defect_area(&big), 256.0 / 4_194_304.0);
    }

    #[test]
    fn same_size_is_direct_computation() {
        let mask = mask_with_block(32, 32, 4, 4, 8);
        let map = random_map(32, 32, 1).unwrap();
        let px = evaluate_pixels(&[map.clone()], &[mask.clone()], 32, &Workers::single()).unwrap();
        let labels: Vec<bool> = mask.values().iter().map(|&v| v > 0.5).collect();
        assert_eq!(px.p_auc, auroc(map.values(), &labels).unwrap());
        assert_eq!(px.p_ap, average_precision(map.values(), &labels).unwrap());
        assert_eq!(px.pro, pro(map.values(), &labels, 32, 32, 0.3, 512).unwrap());
    }

    #[test]
    fn random_maps_are_chance_level() {
        let masks: Vec<ScalarMap> = (0..8).map(|i| mask_with_block(128, 128, 10 + i * 5, 20, 40)).collect();
        let maps: Vec<ScalarMap> = (0..8).map(|i| random_map(128, 128, i as u64).unwrap()).collect();
        let px = evaluate_pixels(&maps, &masks, 128, &Workers::single()).unwrap();
        assert!((px.p_auc - 0.5).abs() < 0.02, "{}", px.p_auc);
    }

    #[test]
    fn report_table_and_json() {
        let masks = vec![mask_with_block(16, 16, 2, 2, 4), ScalarMap::filled(16, 16, 0.0).unwrap()];
        let maps = vec![masks[0].clone(), ScalarMap::filled(16, 16, 0.1).unwrap()];
        let r = evaluate(&maps, &masks, &[1.0, 0.1], &[true, false], 16, &Workers::single()).unwrap();
        assert_eq!((r.i_auc, r.p_auc, r.pro), (1.0, 1.0, 1.0));
        assert!(r.to_table().contains("PRO"));
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
