//! Per-region overlap integrated over a false-positive-rate window.

use crate::error::{HiadError, Result};
use crate::metrics::components::{connected_components, Connectivity};

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_THRESHOLDS: usize = 512;

/// Thresholds in descending order: every distinct value when there are at
/// most `cap`, otherwise `cap` quantiles of the sorted values (deduplicated).
/// The minimum is always included so the curve reaches FPR 1.
fn threshold_ladder(sorted_desc: &[f32], cap: usize) -> Vec<f32> {
    let mut distinct: Vec<f32> = sorted_desc.to_vec();
    distinct.dedup();
    if distinct.len() <= cap {
        return distinct;
    }
    let n = sorted_desc.len();
    let mut out: Vec<f32> = (0..cap)
        .map(|i| sorted_desc[((i as f64 * (n - 1) as f64) / (cap - 1) as f64).round() as usize])
        .collect();
    out.dedup();
    out
}

/// Trapezoid area under `(fpr, pro)` points (ascending fpr, starting at the
/// origin) up to `limit`, divided by `limit`.
pub(crate) fn integrate(curve: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y) / 2.0;
            break;
        }
    }
    area / limit
}

/// PRO curve of one image: `(fpr, mean region overlap)` per threshold,
/// preceded by the origin.
pub fn pro_curve(scores: &[f32], mask: &[bool], height: usize, width: usize, thresholds: usize) -> Result<Vec<(f64, f64)>> {
    if scores.len() != height * width || mask.len() != scores.len() {
        return Err(HiadError::Contract(format!(
            "map of {} and mask of {} values for a {height}x{width} image",
            scores.len(),
            mask.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(HiadError::Precondition(format!("score {i} is not finite")));
    }
    let comps = connected_components(mask, height, width, Connectivity::Eight);
    if comps.count == 0 {
        return Err(HiadError::UndefinedMetric("PRO needs at least one ground-truth region".into()));
    }
    let negatives = mask.iter().filter(|&&m| !m).count();
    if negatives == 0 {
        return Err(HiadError::UndefinedMetric("PRO needs background pixels".into()));
    }
    let sizes = comps.sizes();
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]));
    let sorted: Vec<f32> = order.iter().map(|&i| scores[i as usize]).collect();
    let ladder = threshold_ladder(&sorted, thresholds.max(2));

    let mut hits = vec![0usize; comps.count];
    let mut fp = 0usize;
    let mut next = 0usize;
    let mut curve = Vec::with_capacity(ladder.len() + 1);
    curve.push((0.0, 0.0));
    for &t in &ladder {
        while next < order.len() && sorted[next] >= t {
            let p = order[next] as usize;
            match comps.labels[p] {
                0 => fp += 1,
                l => hits[l as usize - 1] += 1,
            }
            next += 1;
        }
        let overlap = hits.iter().zip(&sizes).map(|(&h, &s)| h as f64 / s as f64).sum::<f64>() / comps.count as f64;
        curve.push((fp as f64 / negatives as f64, overlap));
    }
    Ok(curve)
}

/// Normalized area under the PRO curve for FPR in `[0, fpr_limit]`.
pub fn pro(scores: &[f32], mask: &[bool], height: usize, width: usize, fpr_limit: f64, thresholds: usize) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(HiadError::Config(format!("FPR limit must lie in (0, 1], got {fpr_limit}")));
    }
    let curve = pro_curve(scores, mask, height, width, thresholds)?;
    Ok(integrate(&curve, fpr_limit))
}
