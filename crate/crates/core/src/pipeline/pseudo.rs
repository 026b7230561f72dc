//! Validation split and synthetic rectangle anomalies.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HiadError, Result};
use crate::imagery::{ImageTensor, Planar, ScalarMap};

/// Splits `0..n` into sorted `(fit, validation)` index lists after a seeded
/// shuffle. The validation part holds `max(1, round(fraction * n))` items.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HiadError::Config(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    if n < 2 {
        return Err(HiadError::Fit(format!(
            "need at least 2 training images to hold out a validation set, got {n}"
        )));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut fit = order[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    Ok((fit, val))
}

/// `[y0, x0, y1, x1)` rectangle.
pub type Rect = [usize; 4];

/// Paints 1 to 3 randomly colored rectangles. Each side is drawn uniformly
/// from 5% to 15% of the corresponding patch side.
pub fn make_pseudo_anomaly(
    img: &ImageTensor,
    patch_h: usize,
    patch_w: usize,
    seed: u64,
) -> (ImageTensor, ScalarMap, Vec<Rect>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (img.height(), img.width());
    let side = |rng: &mut ChaCha8Rng, p: usize, limit: usize| {
        let lo = (0.05 * p as f64).max(1.0);
        let hi = (0.15 * p as f64).max(lo);
        (rng.gen_range(lo..=hi).round() as usize).clamp(1, limit)
    };
    let count = rng.gen_range(1..=3);
    let mut out = img.clone();
    let mut mask = vec![0f32; h * w];
    let mut rects = Vec::with_capacity(count);
    for _ in 0..count {
        let rh = side(&mut rng, patch_h, h);
        let rw = side(&mut rng, patch_w, w);
        let y0 = rng.gen_range(0..=h - rh);
        let x0 = rng.gen_range(0..=w - rw);
        let color: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                for (c, &v) in color.iter().enumerate().take(img.channels()) {
                    out.set(c, y, x, v);
                }
                mask[y * w + x] = 1.0;
            }
        }
        rects.push([y0, x0, y0 + rh, x0 + rw]);
    }
    let mask = ScalarMap::new(h, w, mask).expect("mask dims match the image");
    (out, mask, rects)
}
