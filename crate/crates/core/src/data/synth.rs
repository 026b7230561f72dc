//! Procedural textures with inserted low-contrast defects.
//!
//! A pixel is `base + mottling + texture`. Inside a defect the texture term
//! is scaled by `1 - suppression` and the value is shifted by `contrast`
//! (random sign), so defects can be pure intensity shifts, smooth spots in a
//! fine texture, or regions where a periodic pattern is missing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::imagery::{quantize_u8, resize_plane, ImageTensor, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    /// Periodic dark lines in both directions.
    Grid,
    /// Warped stripes.
    WoodLike,
    /// Band-pass filtered noise.
    Speckle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Background color in `[0, 1]`.
    #[serde(default = "default_base")]
    pub base: [f32; 3],
    /// Texture strength; for speckle the standard deviation of the band.
    pub amplitude: f32,
    /// Characteristic period in pixels.
    pub period: f32,
    /// Line width in pixels (grid only).
    #[serde(default = "default_line_width")]
    pub line_width: f32,
    /// Amplitude of smooth large-scale intensity variation.
    #[serde(default)]
    pub mottling: f32,
    /// Spatial scale of the mottling in pixels.
    #[serde(default = "default_mottling_scale")]
    pub mottling_scale: f32,
}

fn default_base() -> [f32; 3] {
    [0.5, 0.45, 0.4]
}

fn default_line_width() -> f32 {
    2.0
}

fn default_mottling_scale() -> f32 {
    256.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    Rectangle,
    Blob,
    Scratch,
}

impl DefectKind {
    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Rectangle => "rectangle",
            DefectKind::Blob => "blob",
            DefectKind::Scratch => "scratch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    pub kinds: Vec<DefectKind>,
    /// Inclusive range of defects per anomalous image.
    #[serde(default = "default_count")]
    pub count: [usize; 2],
    /// Range of the requested area of each defect relative to the image.
    pub relative_area: [f64; 2],
    /// Intensity shift inside the defect.
    pub contrast: f32,
    /// Fraction of the texture removed inside the defect.
    #[serde(default)]
    pub suppression: f32,
}

fn default_count() -> [usize; 2] {
    [1, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub category: String,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub train: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
    pub texture: TextureSpec,
    pub defects: DefectSpec,
}

/// Smallest side of a defect bounding box in pixels.
pub const MIN_DEFECT_SIDE: usize = 16;
/// Largest allowed relative defect area.
pub const MAX_RELATIVE_AREA: f64 = 0.05;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HiadError::Config(msg));
        if self.category.is_empty() || self.category.contains(['/', '\\']) {
            return bad(format!("invalid category name {:?}", self.category));
        }
        if self.height < 64 || self.width < 64 || self.height % 16 != 0 || self.width % 16 != 0 {
            return bad(format!(
                "synthetic images must be at least 64x64 with sides divisible by 16, got {}x{}",
                self.height, self.width
            ));
        }
        if self.train == 0 {
            return bad("at least one training image is required".into());
        }
        let t = &self.texture;
        if !(t.amplitude >= 0.0 && t.period >= 2.0 && t.line_width > 0.0 && t.mottling >= 0.0 && t.mottling_scale >= 8.0) {
            return bad("texture needs amplitude >= 0, period >= 2, line width > 0, mottling >= 0, mottling scale >= 8".into());
        }
        if t.base.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad("texture base color must lie in [0, 1]".into());
        }
        let d = &self.defects;
        if d.kinds.is_empty() {
            return bad("at least one defect kind is required".into());
        }
        if d.count[0] == 0 || d.count[0] > d.count[1] {
            return bad(format!("defect count range {:?} is invalid", d.count));
        }
        let [lo, hi] = d.relative_area;
        if !(lo > 0.0 && lo <= hi && hi <= MAX_RELATIVE_AREA) {
            return bad(format!("relative defect area range {:?} must lie in (0, {MAX_RELATIVE_AREA}]", d.relative_area));
        }
        if !(0.0..=1.0).contains(&d.suppression) || !(d.contrast >= 0.0) {
            return bad("suppression must lie in [0, 1] and contrast must be non-negative".into());
        }
        let area = hi * (self.height * self.width) as f64;
        let extent = d
            .kinds
            .iter()
            .map(|k| match k {
                // Longest half-diagonal of an aspect <= 2 rectangle or a wobbly ellipse.
                DefectKind::Rectangle | DefectKind::Blob => 2.6 * (area * 2.0 / PI).sqrt().max(MIN_DEFECT_SIDE as f64),
                DefectKind::Scratch => {
                    let width = (area / 20.0).sqrt().max(3.0);
                    (area / width).max(3.0 * MIN_DEFECT_SIDE as f64) * 0.9 + width + 6.0
                }
            })
            .fold(0.0, f64::max);
        if extent + 6.0 >= self.height.min(self.width) as f64 {
            return bad(format!(
                "defects of relative area {hi} do not fit a {}x{} image",
                self.height, self.width
            ));
        }
        Ok(())
    }
}

/// Which generated sample; determines the random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    Train,
    TestNormal,
    TestAnomalous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub kind: DefectKind,
    /// `[y0, x0, y1, x1)` bounding box of the defect pixels.
    pub bbox: [usize; 4],
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub kind: SampleKind,
    pub index: usize,
    pub image: ImageTensor,
    /// Ground truth; all zero for normal samples.
    pub mask: ScalarMap,
    pub defects: Vec<DefectRecord>,
}

impl SynthSample {
    pub fn defect_type(&self) -> &'static str {
        self.defects.first().map_or("good", |d| d.kind.name())
    }
}

/// Box blur with edge replication, radius `r`, along both axes.
fn box_blur(src: &[f32], h: usize, w: usize, r: usize) -> Vec<f32> {
    let norm = 1.0 / (2 * r + 1) as f64;
    let mut tmp = vec![0f32; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let at = |x: isize| row[x.clamp(0, w as isize - 1) as usize] as f64;
        let mut acc: f64 = (-(r as isize)..=r as isize).map(at).sum();
        for x in 0..w {
            tmp[y * w + x] = (acc * norm) as f32;
            acc += at(x as isize + r as isize + 1) - at(x as isize - r as isize);
        }
    }
    let mut out = vec![0f32; src.len()];
    for x in 0..w {
        let at = |y: isize| tmp[y.clamp(0, h as isize - 1) as usize * w + x] as f64;
        let mut acc: f64 = (-(r as isize)..=r as isize).map(at).sum();
        for y in 0..h {
            out[y * w + x] = (acc * norm) as f32;
            acc += at(y as isize + r as isize + 1) - at(y as isize - r as isize);
        }
    }
    out
}

/// Three box passes approximate a Gaussian.
fn smooth(src: &[f32], h: usize, w: usize, r: usize) -> Vec<f32> {
    let a = box_blur(src, h, w, r);
    let b = box_blur(&a, h, w, r);
    box_blur(&b, h, w, r)
}

fn normalize_std(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let s = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    v.iter_mut().for_each(|x| *x = ((*x as f64 - mean) * s) as f32);
}

fn gaussian_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n)
        .map(|_| {
            // Sum of uniforms: cheap, bounded and close enough to normal.
            let s: f32 = (0..4).map(|_| rng.gen::<f32>()).sum();
            (s - 2.0) * 1.732
        })
        .collect()
}

/// Smooth unit-variance field with features of roughly `scale` pixels.
fn low_frequency(h: usize, w: usize, scale: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let step = (scale / 4.0).max(2.0) as usize;
    let (lh, lw) = (h.div_ceil(step) + 1, w.div_ceil(step) + 1);
    let noise = gaussian_noise(lh * lw, rng);
    let mut coarse = smooth(&noise, lh, lw, 2);
    normalize_std(&mut coarse);
    resize_plane(&coarse, lh, lw, h, w)
}

fn texture_field(spec: &TextureSpec, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let amp = spec.amplitude;
    match spec.kind {
        TextureKind::Speckle => {
            let noise = gaussian_noise(h * w, rng);
            let r1 = ((spec.period / 8.0).round() as usize).max(1);
            let fine = smooth(&noise, h, w, r1);
            let coarse = smooth(&noise, h, w, 3 * r1);
            let mut band: Vec<f32> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
            normalize_std(&mut band);
            band.iter_mut().for_each(|v| *v *= amp);
            band
        }
        TextureKind::Grid => {
            let p = spec.period as f64;
            let (py, px) = (rng.gen::<f64>() * p, rng.gen::<f64>() * p);
            let lw = spec.line_width as f64;
            let on = |i: usize, phase: f64| (i as f64 + phase).rem_euclid(p) < lw;
            let rows: Vec<bool> = (0..h).map(|y| on(y, py)).collect();
            let cols: Vec<bool> = (0..w).map(|x| on(x, px)).collect();
            let mut out = vec![0f32; h * w];
            for y in 0..h {
                for x in 0..w {
                    if rows[y] || cols[x] {
                        out[y * w + x] = -amp;
                    }
                }
            }
            out
        }
        TextureKind::WoodLike => {
            let warp = low_frequency(h, w, spec.period * 8.0, rng);
            let phase = rng.gen::<f64>() * 2.0 * PI;
            let p = spec.period as f64;
            let mut out = vec![0f32; h * w];
            for y in 0..h {
                for x in 0..w {
                    let t = (x as f64 + warp[y * w + x] as f64 * p * 1.5) / p * 2.0 * PI + phase;
                    out[y * w + x] = amp * t.sin() as f32;
                }
            }
            out
        }
    }
}

/// Rasterizes one defect shape of about `area` pixels centered in the image
/// region it is placed in; returns the covered pixel indices.
fn defect_shape(kind: DefectKind, area: f64, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let min = MIN_DEFECT_SIDE as f64;
    // Local geometry: a predicate on offsets from the center and half extents.
    let (half_h, half_w, inside): (f64, f64, Box<dyn Fn(f64, f64) -> bool>) = match kind {
        DefectKind::Rectangle => {
            let aspect = rng.gen_range(0.5..2.0);
            let bw = (area * aspect).sqrt().max(min);
            let bh = (area / bw).max(min);
            (bh / 2.0, bw / 2.0, Box::new(move |dy: f64, dx: f64| dy.abs() < bh / 2.0 && dx.abs() < bw / 2.0))
        }
        DefectKind::Blob => {
            let aspect: f64 = rng.gen_range(0.6..1.6);
            // The outline wobbles by up to 18%, so keep the semi-axes long enough.
            let floor = (min / 2.0 + 1.0) / 0.82;
            let a = (area * aspect / PI).sqrt().max(floor);
            let b = (area / (PI * a)).max(floor);
            let (p1, p2): (f64, f64) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
            let wobble = move |t: f64| 1.0 + 0.12 * (3.0 * t + p1).sin() + 0.06 * (5.0 * t + p2).sin();
            (
                b * 1.2,
                a * 1.2,
                Box::new(move |dy: f64, dx: f64| {
                    let (u, v) = (dx / a, dy / b);
                    (u * u + v * v).sqrt() < wobble(v.atan2(u))
                }),
            )
        }
        DefectKind::Scratch => {
            // Long and thin: aspect about 20, at least 3 px wide.
            let width = (area / 20.0).sqrt().max(3.0);
            let len = (area / width).max(3.0 * min);
            let angle: f64 = rng.gen_range(0.45..1.1) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let (dirx, diry) = (angle.cos(), angle.sin());
            (
                (len / 2.0) * diry.abs() + width,
                (len / 2.0) * dirx.abs() + width,
                Box::new(move |dy: f64, dx: f64| {
                    let t = (dx * dirx + dy * diry).clamp(-len / 2.0, len / 2.0);
                    let (ex, ey) = (dx - t * dirx, dy - t * diry);
                    (ex * ex + ey * ey).sqrt() <= width / 2.0
                }),
            )
        }
    };
    let margin_y = half_h.ceil() as usize + 2;
    let margin_x = half_w.ceil() as usize + 2;
    let cy = rng.gen_range(margin_y..h - margin_y) as f64;
    let cx = rng.gen_range(margin_x..w - margin_x) as f64;
    let mut pixels = Vec::new();
    for y in cy as usize - margin_y..cy as usize + margin_y {
        for x in cx as usize - margin_x..cx as usize + margin_x {
            if inside(y as f64 + 0.5 - cy, x as f64 + 0.5 - cx) {
                pixels.push(y * w + x);
            }
        }
    }
    pixels
}

/// Deterministic sample generator for one [`SynthSpec`].
pub struct Synth {
    spec: SynthSpec,
}

impl Synth {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Synth { spec })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    fn rng(&self, kind: SampleKind, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let stream = match kind {
            SampleKind::Train => 0u64,
            SampleKind::TestNormal => 1,
            SampleKind::TestAnomalous => 2,
        };
        rng.set_stream((stream << 40) | index as u64);
        rng
    }

    pub fn count(&self, kind: SampleKind) -> usize {
        match kind {
            SampleKind::Train => self.spec.train,
            SampleKind::TestNormal => self.spec.test_normal,
            SampleKind::TestAnomalous => self.spec.test_anomalous,
        }
    }

    pub fn sample(&self, kind: SampleKind, index: usize) -> Result<SynthSample> {
        let (h, w) = (self.spec.height, self.spec.width);
        let t = &self.spec.texture;
        let mut rng = self.rng(kind, index);
        let texture = texture_field(t, h, w, &mut rng);
        let mottle = if t.mottling > 0.0 {
            low_frequency(h, w, t.mottling_scale, &mut rng)
        } else {
            vec![0.0; h * w]
        };
        let mut shift = vec![0f32; h * w];
        let mut keep = vec![1f32; h * w];
        let mut mask = vec![0f32; h * w];
        let mut defects = Vec::new();
        if kind == SampleKind::TestAnomalous {
            let d = &self.spec.defects;
            let n = rng.gen_range(d.count[0]..=d.count[1]);
            let shape_kind = d.kinds[index % d.kinds.len()];
            for _ in 0..n {
                let rel = if d.relative_area[0] < d.relative_area[1] {
                    rng.gen_range(d.relative_area[0]..d.relative_area[1])
                } else {
                    d.relative_area[0]
                };
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let pixels = defect_shape(shape_kind, rel * (h * w) as f64, h, w, &mut rng);
                let mut bbox = [usize::MAX, usize::MAX, 0, 0];
                for &p in &pixels {
                    let (y, x) = (p / w, p % w);
                    bbox = [bbox[0].min(y), bbox[1].min(x), bbox[2].max(y + 1), bbox[3].max(x + 1)];
                    shift[p] = sign * d.contrast;
                    keep[p] = 1.0 - d.suppression;
                    mask[p] = 1.0;
                }
                defects.push(DefectRecord {
                    kind: shape_kind,
                    bbox,
                    pixels: pixels.len(),
                });
            }
        }
        let image = ImageTensor::from_fn(3, h, w, |c, y, x| {
            let i = y * w + x;
            let v = t.base[c] + t.mottling * mottle[i] + texture[i] * keep[i] + shift[i];
            // Quantize like an 8-bit PNG so in-memory and on-disk data agree.
            quantize_u8(v.clamp(0.0, 1.0) as f64) as f32 / 255.0
        })?;
        Ok(SynthSample {
            kind,
            index,
            image,
            mask: ScalarMap::new(h, w, mask)?,
            defects,
        })
    }

    pub fn samples(&self, kind: SampleKind) -> Result<Vec<SynthSample>> {
        (0..self.count(kind)).map(|i| self.sample(kind, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Planar;

    pub(crate) fn spec(kind: TextureKind, defect: DefectKind, area: [f64; 2]) -> SynthSpec {
        SynthSpec {
            category: "tiles".into(),
            height: 256,
            width: 256,
            seed: 3,
            train: 2,
            test_normal: 1,
            test_anomalous: 3,
            texture: TextureSpec {
                kind,
                base: default_base(),
                amplitude: 0.1,
                period: 16.0,
                line_width: 2.0,
                mottling: 0.03,
                mottling_scale: 64.0,
            },
            defects: DefectSpec {
                kinds: vec![defect],
                count: [1, 2],
                relative_area: area,
                contrast: 0.05,
                suppression: 0.5,
            },
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let s = Synth::new(spec(TextureKind::Speckle, DefectKind::Blob, [0.001, 0.002])).unwrap();
        assert_eq!(s.sample(SampleKind::Train, 0).unwrap(), s.sample(SampleKind::Train, 0).unwrap());
        assert_ne!(s.sample(SampleKind::Train, 0).unwrap().image, s.sample(SampleKind::Train, 1).unwrap().image);
    }

    #[test]
    fn masks_and_boxes() {
        for kind in [DefectKind::Rectangle, DefectKind::Blob, DefectKind::Scratch] {
            for tex in [TextureKind::Grid, TextureKind::WoodLike, TextureKind::Speckle] {
                let s = Synth::new(spec(tex, kind, [0.004, 0.01])).unwrap();
                for i in 0..3 {
                    let a = s.sample(SampleKind::TestAnomalous, i).unwrap();
                    assert!(a.mask.count_nonzero() > 0);
                    for d in &a.defects {
                        assert!(d.bbox[2] - d.bbox[0] >= MIN_DEFECT_SIDE, "{kind:?} {:?}", d.bbox);
                        assert!(d.bbox[3] - d.bbox[1] >= MIN_DEFECT_SIDE, "{kind:?} {:?}", d.bbox);
                        assert!(d.bbox[2] <= 256 && d.bbox[3] <= 256);
                    }
                    assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
                }
                let n = s.sample(SampleKind::TestNormal, 0).unwrap();
                assert_eq!(n.mask.count_nonzero(), 0);
                assert_eq!(n.defect_type(), "good");
            }
        }
    }

    #[test]
    fn requested_area_is_respected_at_2k() {
        for kind in [DefectKind::Rectangle, DefectKind::Blob, DefectKind::Scratch] {
            let mut sp = spec(TextureKind::Speckle, kind, [1e-4, 1e-4]);
            sp.height = 2048;
            sp.width = 2048;
            sp.defects.count = [1, 1];
            let s = Synth::new(sp).unwrap();
            let a = s.sample(SampleKind::TestAnomalous, 0).unwrap();
            let px = a.defects[0].pixels as f64;
            assert!((0.5 * 419.4..=2.0 * 419.4).contains(&px), "{kind:?}: {px}");
        }
    }

    #[test]
    fn normal_images_share_band_energy() {
        let s = Synth::new(spec(TextureKind::Speckle, DefectKind::Blob, [0.001, 0.002])).unwrap();
        let energy = |img: &ImageTensor| {
            let g = img.gray();
            let (h, w) = (img.height(), img.width());
            let mut e = 0.0f64;
            for y in 0..h {
                for x in 1..w {
                    e += (g[y * w + x] as f64 - g[y * w + x - 1] as f64).powi(2);
                }
            }
            e
        };
        let base = energy(&s.sample(SampleKind::Train, 0).unwrap().image);
        for i in 1..2 {
            let e = energy(&s.sample(SampleKind::Train, i).unwrap().image);
            assert!((e / base - 1.0).abs() < 0.1, "{e} vs {base}");
        }
        let e = energy(&s.sample(SampleKind::TestNormal, 0).unwrap().image);
        assert!((e / base - 1.0).abs() < 0.1);
    }

    #[test]
    fn validation() {
        let mut sp = spec(TextureKind::Grid, DefectKind::Blob, [0.001, 0.06]);
        assert!(Synth::new(sp.clone()).is_err());
        sp.defects.relative_area = [0.001, 0.002];
        sp.height = 250;
        assert!(Synth::new(sp.clone()).is_err());
        sp.height = 256;
        sp.defects.kinds.clear();
        assert!(Synth::new(sp).is_err());
    }
}
