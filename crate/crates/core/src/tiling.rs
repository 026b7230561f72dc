//! Patch-grid geometry, patch division and the overlap-averaging aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::imagery::Planar;

/// Exact tiling of an `image_h x image_w` raster by `patch_h x patch_w`
/// windows placed every `stride_h`/`stride_w` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub rows: usize,
    pub cols: usize,
}

fn axis_count(axis: &str, image: usize, patch: usize, stride: usize) -> Result<usize> {
    if image == 0 || patch == 0 || stride == 0 {
        return Err(HiadError::Geometry(format!(
            "{axis}: image ({image}), patch ({patch}) and stride ({stride}) must be positive"
        )));
    }
    if patch > image {
        return Err(HiadError::Geometry(format!(
            "{axis}: patch size {patch} exceeds image size {image}"
        )));
    }
    let rem = (image - patch) % stride;
    if rem != 0 {
        return Err(HiadError::Geometry(format!(
            "{axis}: (image {image} - patch {patch}) is not a multiple of stride {stride} (remainder {rem})"
        )));
    }
    Ok((image - patch) / stride + 1)
}

impl PatchGrid {
    pub fn new(
        image_h: usize,
        image_w: usize,
        patch_h: usize,
        patch_w: usize,
        stride_h: usize,
        stride_w: usize,
    ) -> Result<Self> {
        let rows = axis_count("height", image_h, patch_h, stride_h)?;
        let cols = axis_count("width", image_w, patch_w, stride_w)?;
        // with stride > patch some pixels would never be covered
        if stride_h > patch_h && rows > 1 || stride_w > patch_w && cols > 1 {
            return Err(HiadError::Geometry(format!(
                "stride {stride_h}x{stride_w} larger than patch {patch_h}x{patch_w} leaves uncovered pixels"
            )));
        }
        Ok(PatchGrid {
            image_h,
            image_w,
            patch_h,
            patch_w,
            stride_h,
            stride_w,
            rows,
            cols,
        })
    }

    /// Non-overlapping grid (stride equal to the patch size).
    pub fn non_overlapping(image_h: usize, image_w: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        Self::new(image_h, image_w, patch_h, patch_w, patch_h, patch_w)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index of position `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn origin(&self, i: usize, j: usize) -> (usize, usize) {
        (i * self.stride_h, j * self.stride_w)
    }

    /// Same layout expressed at `1/factor` resolution (feature cells).
    pub fn scaled_down(&self, factor: usize) -> Result<PatchGrid> {
        let fields = [
            self.image_h,
            self.image_w,
            self.patch_h,
            self.patch_w,
            self.stride_h,
            self.stride_w,
        ];
        if factor == 0 || fields.iter().any(|v| v % factor != 0) {
            return Err(HiadError::Geometry(format!(
                "grid {}x{} patch {}x{} stride {}x{} is not divisible by {factor}",
                self.image_h, self.image_w, self.patch_h, self.patch_w, self.stride_h, self.stride_w
            )));
        }
        PatchGrid::new(
            self.image_h / factor,
            self.image_w / factor,
            self.patch_h / factor,
            self.patch_w / factor,
            self.stride_h / factor,
            self.stride_w / factor,
        )
    }

    /// Number of patches covering pixel `(y, x)`, in closed form.
    pub fn coverage(&self, y: usize, x: usize) -> usize {
        axis_cover(y, self.patch_h, self.stride_h, self.rows) * axis_cover(x, self.patch_w, self.stride_w, self.cols)
    }
}

fn axis_cover(p: usize, patch: usize, stride: usize, count: usize) -> usize {
    // patches k with k*stride <= p < k*stride + patch
    let hi = (p / stride).min(count - 1);
    let lo = if p + 1 > patch { (p + 1 - patch).div_ceil(stride) } else { 0 };
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

/// The `I x J` patches of one raster, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<R> {
    pub grid: PatchGrid,
    pub patches: Vec<R>,
}

impl<R> PatchSet<R> {
    pub fn get(&self, i: usize, j: usize) -> &R {
        &self.patches[self.grid.index(i, j)]
    }
}

/// Copies the `ph x pw` window at `(y0, x0)` out of every plane.
pub fn crop<R: Planar>(r: &R, y0: usize, x0: usize, ph: usize, pw: usize) -> R {
    let (h, w) = (r.height(), r.width());
    debug_assert!(y0 + ph <= h && x0 + pw <= w);
    let mut data = Vec::with_capacity(r.channels() * ph * pw);
    for c in 0..r.channels() {
        let plane = r.plane(c);
        for y in y0..y0 + ph {
            data.extend_from_slice(&plane[y * w + x0..y * w + x0 + pw]);
        }
    }
    r.like(ph, pw, data)
}

fn check_dims<R: Planar>(r: &R, grid: &PatchGrid) -> Result<()> {
    if r.height() != grid.image_h || r.width() != grid.image_w {
        return Err(HiadError::Geometry(format!(
            "raster is {}x{} but the grid expects {}x{}",
            r.height(),
            r.width(),
            grid.image_h,
            grid.image_w
        )));
    }
    Ok(())
}

/// Cuts a raster into the patches of `grid`.
pub fn divide<R: Planar>(r: &R, grid: &PatchGrid) -> Result<PatchSet<R>> {
    check_dims(r, grid)?;
    let mut patches = Vec::with_capacity(grid.len());
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let (y0, x0) = grid.origin(i, j);
            patches.push(crop(r, y0, x0, grid.patch_h, grid.patch_w));
        }
    }
    Ok(PatchSet { grid: *grid, patches })
}

/// Reassembles patches into a full raster, averaging overlapping pixels.
///
/// The reduction walks patches in row-major order with an `f64` accumulator
/// and an integer coverage count, so results do not depend on how the patches
/// were produced. Non-overlapping grids reproduce their input bit for bit.
pub fn aggregate<R: Planar>(patches: &[R], grid: &PatchGrid) -> Result<R> {
    if patches.len() != grid.len() {
        return Err(HiadError::Geometry(format!(
            "expected {} patches for a {}x{} grid, got {}",
            grid.len(),
            grid.rows,
            grid.cols,
            patches.len()
        )));
    }
    let first = &patches[0];
    let channels = first.channels();
    for (k, p) in patches.iter().enumerate() {
        if p.height() != grid.patch_h || p.width() != grid.patch_w || p.channels() != channels {
            return Err(HiadError::Geometry(format!(
                "patch {k} is {}x{}x{} but the grid expects {}x{}x{channels}",
                p.channels(),
                p.height(),
                p.width(),
                grid.patch_h,
                grid.patch_w
            )));
        }
    }
    let (h, w) = (grid.image_h, grid.image_w);
    let exact = grid.stride_h >= grid.patch_h && grid.stride_w >= grid.patch_w;
    let mut out = vec![0f32; channels * h * w];
    if exact {
        for (k, p) in patches.iter().enumerate() {
            let (y0, x0) = grid.origin(k / grid.cols, k % grid.cols);
            for c in 0..channels {
                let src = p.plane(c);
                let dst = &mut out[c * h * w..(c + 1) * h * w];
                for y in 0..grid.patch_h {
                    let row = &src[y * grid.patch_w..(y + 1) * grid.patch_w];
                    dst[(y0 + y) * w + x0..(y0 + y) * w + x0 + grid.patch_w].copy_from_slice(row);
                }
            }
        }
        return Ok(first.like(h, w, out));
    }

    let mut acc = vec![0f64; h * w];
    let mut count = vec![0u32; h * w];
    for k in 0..patches.len() {
        let (y0, x0) = grid.origin(k / grid.cols, k % grid.cols);
        for y in 0..grid.patch_h {
            for x in 0..grid.patch_w {
                count[(y0 + y) * w + x0 + x] += 1;
            }
        }
    }
    for c in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (k, p) in patches.iter().enumerate() {
            let (y0, x0) = grid.origin(k / grid.cols, k % grid.cols);
            let src = p.plane(c);
            for y in 0..grid.patch_h {
                let row = &src[y * grid.patch_w..(y + 1) * grid.patch_w];
                let dst = &mut acc[(y0 + y) * w + x0..(y0 + y) * w + x0 + grid.patch_w];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d += s as f64;
                }
            }
        }
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ((o, &a), &n) in plane.iter_mut().zip(&acc).zip(&count) {
            *o = (a / n as f64) as f32;
        }
    }
    Ok(first.like(h, w, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{ImageTensor, ScalarMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_counts() {
        let g = PatchGrid::new(2048, 2048, 512, 512, 512, 512).unwrap();
        assert_eq!((g.rows, g.cols), (4, 4));
        let g = PatchGrid::new(512, 512, 512, 512, 512, 512).unwrap();
        assert_eq!((g.rows, g.cols), (1, 1));
        let g = PatchGrid::new(1024, 1024, 512, 512, 256, 256).unwrap();
        assert_eq!((g.rows, g.cols), (3, 3));
    }

    #[test]
    fn inexact_tiling_names_axis_and_remainder() {
        let err = PatchGrid::new(1000, 1024, 512, 512, 256, 256).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("height") && msg.contains("remainder 232"), "{msg}");
        assert!(PatchGrid::new(512, 512, 600, 512, 1, 1).is_err());
        assert!(PatchGrid::new(0, 512, 1, 1, 1, 1).is_err());
    }

    #[test]
    fn divide_quadrants_and_single_patch() {
        let img = ImageTensor::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f32 / 16.0).unwrap();
        let g = PatchGrid::non_overlapping(4, 4, 2, 2).unwrap();
        let set = divide(&img, &g).unwrap();
        assert_eq!(set.patches.len(), 4);
        assert_eq!(set.get(1, 0).data(), &[8.0 / 16.0, 9.0 / 16.0, 12.0 / 16.0, 13.0 / 16.0]);

        let g1 = PatchGrid::non_overlapping(4, 4, 4, 4).unwrap();
        assert_eq!(divide(&img, &g1).unwrap().patches[0], img);

        let g = PatchGrid::new(4, 4, 2, 2, 1, 1).unwrap();
        let set = divide(&img, &g).unwrap();
        assert_eq!(set.patches.len(), 9);
        let expect = crop(&img, 1, 1, 2, 2);
        assert_eq!(set.get(1, 1), &expect);
        assert_eq!(expect.data(), &[5.0 / 16.0, 6.0 / 16.0, 9.0 / 16.0, 10.0 / 16.0]);

        let wrong = PatchGrid::non_overlapping(8, 8, 2, 2).unwrap();
        assert!(matches!(divide(&img, &wrong), Err(HiadError::Geometry(_))));
    }

    #[test]
    fn aggregate_overlap_average() {
        let g = PatchGrid::new(1, 3, 1, 2, 1, 1).unwrap();
        let p = vec![
            ScalarMap::new(1, 2, vec![1.0, 2.0]).unwrap(),
            ScalarMap::new(1, 2, vec![4.0, 8.0]).unwrap(),
        ];
        assert_eq!(aggregate(&p, &g).unwrap().values(), &[1.0, 3.0, 8.0]);
    }

    #[test]
    fn aggregate_matches_accumulate_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = ScalarMap::from_fn(64, 64, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let g = PatchGrid::new(64, 64, 32, 32, 16, 16).unwrap();
        // perturb patches so overlapping contributions differ
        let mut set = divide(&map, &g).unwrap();
        for p in &mut set.patches {
            for v in p.values_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let agg = aggregate(&set.patches, &g).unwrap();
        let mut sum = vec![0f64; 64 * 64];
        let mut cnt = vec![0f64; 64 * 64];
        for i in 0..g.rows {
            for j in 0..g.cols {
                let p = set.get(i, j);
                for y in 0..32 {
                    for x in 0..32 {
                        let idx = (i * 16 + y) * 64 + j * 16 + x;
                        sum[idx] += p.get(y, x) as f64;
                        cnt[idx] += 1.0;
                    }
                }
            }
        }
        for k in 0..64 * 64 {
            assert!((agg.values()[k] as f64 - sum[k] / cnt[k]).abs() < 1e-6);
            assert_eq!(cnt[k] as usize, g.coverage(k / 64, k % 64));
        }
    }

    #[test]
    fn aggregate_rejects_bad_patches() {
        let g = PatchGrid::non_overlapping(4, 4, 2, 2).unwrap();
        let p = vec![ScalarMap::filled(2, 2, 0.0).unwrap(); 3];
        assert!(aggregate(&p, &g).is_err());
        let p = vec![ScalarMap::filled(2, 3, 0.0).unwrap(); 4];
        assert!(aggregate(&p, &g).is_err());
    }

    proptest::proptest! {
        #[test]
        fn roundtrip_identity_for_non_overlapping(seed in 0u64..500, ph in 1usize..6, pw in 1usize..6, rows in 1usize..5, cols in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = ScalarMap::from_fn(ph * rows, pw * cols, |_, _| rng.gen_range(-5.0..5.0)).unwrap();
            let g = PatchGrid::non_overlapping(ph * rows, pw * cols, ph, pw).unwrap();
            let back = aggregate(&divide(&map, &g).unwrap().patches, &g).unwrap();
            proptest::prop_assert_eq!(back, map);
        }

        #[test]
        fn constant_patches_aggregate_to_constant(v in -3.0f32..3.0, sh in 1usize..4, sw in 1usize..4, extra in 0usize..3) {
            let (ph, pw) = (4usize, 4usize);
            let (h, w) = (ph + sh * extra, pw + sw * extra);
            let g = PatchGrid::new(h, w, ph, pw, sh, sw).unwrap();
            let patches = vec![ScalarMap::filled(ph, pw, v).unwrap(); g.len()];
            let out = aggregate(&patches, &g).unwrap();
            for y in 0..h {
                for x in 0..w {
                    proptest::prop_assert!(g.coverage(y, x) >= 1);
                }
            }
            proptest::prop_assert!(out.values().iter().all(|&x| (x - v).abs() <= 1e-6 * v.abs().max(1.0)));
        }
    }
}
