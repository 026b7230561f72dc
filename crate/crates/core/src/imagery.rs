//! Raster primitives: images, scalar maps, PNG I/O, resampling and pyramids.
//!
//! All rasters are planar (channel-major, then row-major) `f32` buffers.
//! Resampling conventions are fixed:
//!
//! * bilinear interpolation samples at half-pixel centers with edge clamping,
//! * dyadic downsampling is 2x2 mean pooling and rejects odd dimensions,
//! * mask resizing is an exact area average followed by a strict `> 0.5`
//!   threshold.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{HiadError, Result};

/// Common view over planar `f32` rasters so tiling code can work on images,
/// score maps and feature layers alike.
pub trait Planar: Sized {
    fn channels(&self) -> usize;
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn data(&self) -> &[f32];
    /// Builds a raster of the same kind (and metadata) with new dimensions.
    fn like(&self, height: usize, width: usize, data: Vec<f32>) -> Self;

    fn plane(&self, c: usize) -> &[f32] {
        let n = self.height() * self.width();
        &self.data()[c * n..(c + 1) * n]
    }
}

/// Decoded image with 1 or 3 channels and values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(HiadError::Precondition(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(HiadError::Precondition(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(HiadError::Precondition(format!(
                "image buffer holds {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(HiadError::Precondition(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image from `f(channel, y, x)`; values are clamped to `[0, 1]`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Returns a three-channel copy; grayscale planes are replicated.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        ImageTensor {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Channel mean (luminance proxy with equal weights).
    pub fn gray(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let n = self.height * self.width;
        (0..n)
            .map(|i| {
                let s = self.data[i] as f64 + self.data[n + i] as f64 + self.data[2 * n + i] as f64;
                (s / 3.0) as f32
            })
            .collect()
    }
}

impl Planar for ImageTensor {
    fn channels(&self) -> usize {
        self.channels
    }
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn data(&self) -> &[f32] {
        &self.data
    }
    fn like(&self, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.channels * height * width);
        ImageTensor {
            channels: self.channels,
            height,
            width,
            data,
        }
    }
}

/// Single-channel map of finite scores (anomaly maps, masks).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScalarMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(HiadError::Precondition(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(HiadError::Precondition(format!(
                "map buffer holds {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(HiadError::Numeric("map contains non-finite values".into()));
        }
        Ok(ScalarMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f32> {
        self.data
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Pixelwise maximum of two equally sized maps.
    pub fn pointwise_max(&self, other: &ScalarMap) -> Result<ScalarMap> {
        if self.height != other.height || self.width != other.width {
            return Err(HiadError::Contract(format!(
                "cannot combine {}x{} with {}x{} map",
                self.height, self.width, other.height, other.width
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| if b > a { b } else { a })
            .collect();
        Ok(ScalarMap {
            height: self.height,
            width: self.width,
            data,
        })
    }
}

impl Planar for ScalarMap {
    fn channels(&self) -> usize {
        1
    }
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn data(&self) -> &[f32] {
        &self.data
    }
    fn like(&self, height: usize, width: usize, data: Vec<f32>) -> Self {
        ScalarMap {
            height,
            width,
            data,
        }
    }
}

// ---------------------------------------------------------------------------
// PNG I/O

/// Decodes an 8- or 16-bit grayscale/RGB PNG, dropping any alpha channel.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| HiadError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| HiadError::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| HiadError::Format(format!("{}: {e}", path.display())))?;
    let (height, width) = (info.height as usize, info.width as usize);
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => {
            return Err(HiadError::Format(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )))
        }
    };
    let (bytes_per_sample, max) = match info.bit_depth {
        png::BitDepth::Eight => (1, 255.0f32),
        png::BitDepth::Sixteen => (2, 65535.0f32),
        other => {
            return Err(HiadError::Format(format!(
                "{}: unsupported bit depth {other:?}",
                path.display()
            )))
        }
    };
    let n = height * width;
    let mut data = vec![0f32; keep * n];
    let row_bytes = info.line_size;
    for y in 0..height {
        let row = &buf[y * row_bytes..(y + 1) * row_bytes];
        for x in 0..width {
            for c in 0..keep {
                let off = (x * src_channels + c) * bytes_per_sample;
                let raw = if bytes_per_sample == 1 {
                    row[off] as f32
                } else {
                    u16::from_be_bytes([row[off], row[off + 1]]) as f32
                };
                data[c * n + y * width + x] = raw / max;
            }
        }
    }
    ImageTensor::new(keep, height, width, data)
}

/// Loads a ground-truth mask; any non-zero pixel counts as foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<ScalarMap> {
    let img = load_png(path)?;
    let gray = img.gray();
    let data = gray.into_iter().map(|v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    ScalarMap::new(img.height(), img.width(), data)
}

/// Round-half-up quantization of a unit-interval value to 8 bits.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| HiadError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| HiadError::io(path, std::io::Error::other(e)))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| HiadError::io(path, std::io::Error::other(e)))?;
    writer
        .finish()
        .map_err(|e| HiadError::io(path, std::io::Error::other(e)))
}

/// Writes an image as an 8-bit grayscale or RGB PNG.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w, c) = (img.height, img.width, img.channels);
    let n = h * w;
    let mut bytes = vec![0u8; c * n];
    for i in 0..n {
        for ch in 0..c {
            bytes[i * c + ch] = quantize_u8(img.data[ch * n + i] as f64);
        }
    }
    let color = if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    write_png(path.as_ref(), w, h, color, &bytes)
}

fn normalize_to_unit(v: f32, lo: f32, hi: f32) -> f64 {
    let span = hi as f64 - lo as f64;
    if span <= 0.0 {
        return if (v as f64) >= hi as f64 { 1.0 } else { 0.0 };
    }
    ((v as f64 - lo as f64) / span).clamp(0.0, 1.0)
}

/// Writes a scalar map as 8-bit grayscale, mapping `[lo, hi]` to `[0, 255]`.
pub fn save_map_gray(map: &ScalarMap, lo: f32, hi: f32, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = map
        .data
        .iter()
        .map(|&v| quantize_u8(normalize_to_unit(v, lo, hi)))
        .collect();
    write_png(path.as_ref(), map.width, map.height, png::ColorType::Grayscale, &bytes)
}

// Anchor colors of the heatmap ramp (dark violet -> blue -> teal -> yellow).
const RAMP: [[f64; 3]; 5] = [
    [0.050, 0.030, 0.130],
    [0.230, 0.180, 0.550],
    [0.130, 0.560, 0.550],
    [0.480, 0.820, 0.320],
    [0.990, 0.910, 0.150],
];

/// Maps a unit-interval value onto the fixed heatmap ramp.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = quantize_u8(RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f);
    }
    out
}

/// Renders a scalar map as interleaved RGB8 bytes through the heatmap ramp.
pub fn heatmap_rgb(map: &ScalarMap, lo: f32, hi: f32) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(map.data.len() * 3);
    for &v in &map.data {
        bytes.extend_from_slice(&ramp_color(normalize_to_unit(v, lo, hi)));
    }
    bytes
}

/// Writes a scalar map as an 8-bit RGB heatmap PNG.
pub fn save_heatmap(map: &ScalarMap, lo: f32, hi: f32, path: impl AsRef<Path>) -> Result<()> {
    let bytes = heatmap_rgb(map, lo, hi);
    write_png(path.as_ref(), map.width, map.height, png::ColorType::Rgb, &bytes)
}

/// Writes interleaved RGB8 bytes as a PNG.
pub fn save_rgb8(width: usize, height: usize, bytes: &[u8], path: impl AsRef<Path>) -> Result<()> {
    write_png(path.as_ref(), width, height, png::ColorType::Rgb, bytes)
}

// ---------------------------------------------------------------------------
// Resampling

/// Halves both dimensions by averaging each 2x2 block.
pub fn downsample_by2<R: Planar>(img: &R) -> Result<R> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(HiadError::Precondition(format!(
            "downsample_by2 needs even dimensions, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = img.plane(ch);
        for y in 0..oh {
            let r0 = &p[2 * y * w..(2 * y + 1) * w];
            let r1 = &p[(2 * y + 1) * w..(2 * y + 2) * w];
            for x in 0..ow {
                let s = r0[2 * x] as f64 + r0[2 * x + 1] as f64 + r1[2 * x] as f64 + r1[2 * x + 1] as f64;
                out.push((s * 0.25) as f32);
            }
        }
    }
    Ok(img.like(oh, ow, out))
}

/// Source sampling table for one axis of a half-pixel bilinear resize.
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn axis_taps(n_in: usize, n_out: usize) -> AxisTaps {
    let scale = n_in as f64 / n_out as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(n_out),
        hi: Vec::with_capacity(n_out),
        frac: Vec::with_capacity(n_out),
    };
    let last = (n_in - 1) as f64;
    for i in 0..n_out {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
        let lo = s.floor() as usize;
        taps.lo.push(lo);
        taps.hi.push((lo + 1).min(n_in - 1));
        taps.frac.push(s - lo as f64);
    }
    taps
}

/// Bilinear resize of one plane (half-pixel centers, clamped edges).
pub fn resize_plane(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), h * w);
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let r0 = &src[ty.lo[i] * w..(ty.lo[i] + 1) * w];
        let r1 = &src[ty.hi[i] * w..(ty.hi[i] + 1) * w];
        let fy = ty.frac[i];
        for j in 0..out_w {
            let fx = tx.frac[j];
            let (a, b) = (r0[tx.lo[j]] as f64, r0[tx.hi[j]] as f64);
            let (c, d) = (r1[tx.lo[j]] as f64, r1[tx.hi[j]] as f64);
            let top = a * (1.0 - fx) + b * fx;
            let bottom = c * (1.0 - fx) + d * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Bilinear resize of every plane of a raster.
pub fn resize_planar<R: Planar>(r: &R, out_h: usize, out_w: usize) -> Result<R> {
    if out_h == 0 || out_w == 0 {
        return Err(HiadError::Precondition(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let mut data = Vec::with_capacity(r.channels() * out_h * out_w);
    for c in 0..r.channels() {
        data.extend(resize_plane(r.plane(c), r.height(), r.width(), out_h, out_w));
    }
    Ok(r.like(out_h, out_w, data))
}

pub fn resize_bilinear(map: &ScalarMap, out_h: usize, out_w: usize) -> Result<ScalarMap> {
    resize_planar(map, out_h, out_w)
}

/// Area overlaps of output cells with input cells along one axis, in units
/// where an input cell has length `n_out` and an output cell length `n_in`.
fn area_overlaps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, u64)>> {
    (0..n_out)
        .map(|i| {
            let (a, b) = ((i * n_in) as u64, ((i + 1) * n_in) as u64);
            let first = (a / n_out as u64) as usize;
            let last = (((b + n_out as u64 - 1) / n_out as u64) as usize).min(n_in);
            (first..last)
                .filter_map(|r| {
                    let (ra, rb) = ((r * n_out) as u64, ((r + 1) * n_out) as u64);
                    let ov = rb.min(b).saturating_sub(ra.max(a));
                    (ov > 0).then_some((r, ov))
                })
                .collect()
        })
        .collect()
}

/// Resizes a binary mask: exact area coverage per output pixel, kept when
/// strictly more than half covered.
pub fn resize_mask(mask: &ScalarMap, out_h: usize, out_w: usize) -> Result<ScalarMap> {
    if out_h == 0 || out_w == 0 {
        return Err(HiadError::Precondition(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if !mask.is_binary() {
        return Err(HiadError::Precondition("resize_mask expects a binary mask".into()));
    }
    if out_h == mask.height && out_w == mask.width {
        return Ok(mask.clone());
    }
    let (h, w) = (mask.height, mask.width);
    let rows = area_overlaps(h, out_h);
    let cols = area_overlaps(w, out_w);
    let denom = (h as u128) * (w as u128);
    let mut out = Vec::with_capacity(out_h * out_w);
    for row in &rows {
        for col in &cols {
            let mut covered: u128 = 0;
            for &(r, wr) in row {
                for &(c, wc) in col {
                    if mask.data[r * w + c] != 0.0 {
                        covered += (wr as u128) * (wc as u128);
                    }
                }
            }
            out.push(if 2 * covered > denom { 1.0 } else { 0.0 });
        }
    }
    ScalarMap::new(out_h, out_w, out)
}

/// Progressive dyadic pyramid `[X, X/2, ..., X/2^levels]`.
pub fn build_pyramid<R: Planar + Clone>(img: &R, levels: usize) -> Result<Vec<R>> {
    let factor = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| HiadError::Precondition(format!("pyramid depth {levels} too large")))?;
    if img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(HiadError::Precondition(format!(
            "{}x{} is not divisible by 2^{levels}",
            img.height(),
            img.width()
        )));
    }
    let mut out = Vec::with_capacity(levels + 1);
    out.push(img.clone());
    for k in 0..levels {
        let next = downsample_by2(&out[k])?;
        out.push(next);
    }
    Ok(out)
}

/// Downsamples by a power-of-two factor through repeated halving.
pub fn downsample_to<R: Planar + Clone>(img: &R, out_h: usize, out_w: usize) -> Result<R> {
    let (h, w) = (img.height(), img.width());
    if out_h == 0 || out_w == 0 || h % out_h != 0 || w % out_w != 0 || h / out_h != w / out_w {
        return Err(HiadError::Geometry(format!(
            "cannot downsample {h}x{w} to {out_h}x{out_w}: ratio must be a common power of two"
        )));
    }
    let ratio = h / out_h;
    if !ratio.is_power_of_two() {
        return Err(HiadError::Geometry(format!(
            "downsampling ratio {ratio} ({h} -> {out_h}) is not a power of two"
        )));
    }
    let mut cur = img.clone();
    let mut r = ratio;
    while r > 1 {
        cur = downsample_by2(&cur)?;
        r /= 2;
    }
    Ok(cur)
}

/// Reflect-pads an image on the bottom/right edges up to the requested size.
pub fn pad_reflect(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    let (h, w) = (img.height, img.width);
    if out_h < h || out_w < w || out_h > 2 * h || out_w > 2 * w {
        return Err(HiadError::Precondition(format!(
            "cannot reflect-pad {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let reflect = |i: usize, n: usize| if i < n { i } else { (2 * n).saturating_sub(i + 2).min(n - 1) };
    let mut data = Vec::with_capacity(img.channels * out_h * out_w);
    for c in 0..img.channels {
        for y in 0..out_h {
            for x in 0..out_w {
                data.push(img.get(c, reflect(y, h), reflect(x, w)));
            }
        }
    }
    ImageTensor::new(img.channels, out_h, out_w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn png_scaling_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 3, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[255, 0, 51]).unwrap();
        let img = load_png(&path).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(0, 0, 1), 0.0);
        assert!((img.get(0, 0, 2) - 0.2).abs() < 1e-7);
    }

    #[test]
    fn png_16bit_rgba_drops_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Sixteen);
        let px: Vec<u8> = [65535u16, 0, 32768, 1234]
            .iter()
            .flat_map(|v| v.to_be_bytes())
            .collect();
        enc.write_header().unwrap().write_image_data(&px).unwrap();
        let img = load_png(&path).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 0), 0.0);
        assert!((img.get(2, 0, 0) - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn png_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_png(dir.path().join("missing.png")), Err(HiadError::Io { .. })));
        let bogus = dir.path().join("bogus.png");
        std::fs::write(&bogus, b"not a png").unwrap();
        assert!(matches!(load_png(&bogus), Err(HiadError::Format(_))));
        let img = ImageTensor::filled(1, 2, 2, 0.5).unwrap();
        assert!(save_png(&img, dir.path().join("no/such/dir/x.png")).is_err());
    }

    #[test]
    fn save_quantizes_half_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.png");
        save_png(&ImageTensor::filled(1, 2, 3, 0.5).unwrap(), &path).unwrap();
        let back = load_png(&path).unwrap();
        assert!(back.data().iter().all(|&v| v == 128.0 / 255.0));

        let map = ScalarMap::new(1, 3, vec![-2.0, 0.0, 6.0]).unwrap();
        let mpath = dir.path().join("map.png");
        save_map_gray(&map, -2.0, 6.0, &mpath).unwrap();
        let back = load_png(&mpath).unwrap();
        assert_eq!(back.get(0, 0, 0), 0.0);
        assert_eq!(back.get(0, 0, 1), 64.0 / 255.0);
        assert_eq!(back.get(0, 0, 2), 1.0);
    }

    #[test]
    fn save_load_roundtrip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img =
            ImageTensor::from_fn(3, 5, 7, |_, _, _| rng.gen_range(0..=255u8) as f32 / 255.0).unwrap();
        save_png(&img, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), img);
    }

    #[test]
    fn heatmap_ramp_endpoints() {
        assert_eq!(ramp_color(0.0), [13, 8, 33]);
        assert_eq!(ramp_color(1.0), [252, 232, 38]);
        let map = ScalarMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let bytes = heatmap_rgb(&map, 0.0, 1.0);
        assert_eq!(&bytes[..3], &ramp_color(0.0));
    }

    #[test]
    fn downsample_examples() {
        let c = ImageTensor::filled(3, 4, 6, 0.37).unwrap();
        let d = downsample_by2(&c).unwrap();
        assert_eq!((d.height(), d.width()), (2, 3));
        assert!(d.data().iter().all(|&v| v == 0.37));

        let block = ImageTensor::new(1, 2, 2, vec![0.0, 0.2, 0.4, 0.6]).unwrap();
        assert!((downsample_by2(&block).unwrap().get(0, 0, 0) - 0.3).abs() < 1e-7);

        let odd = ImageTensor::filled(1, 3, 4, 0.0).unwrap();
        assert!(matches!(downsample_by2(&odd), Err(HiadError::Precondition(_))));
    }

    #[test]
    fn downsample_matches_block_mean_oracle() {
        let img = random_image(7, 3, 8, 8);
        let d = downsample_by2(&img).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let mut s = 0.0f64;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += img.get(c, 2 * y + dy, 2 * x + dx) as f64;
                        }
                    }
                    assert!((d.get(c, y, x) as f64 - s / 4.0).abs() < 1e-7);
                }
            }
        }
        let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        assert!((mean(img.data()) - mean(d.data())).abs() < 1e-7);
    }

    #[test]
    fn bilinear_examples() {
        let map = ScalarMap::new(2, 3, vec![0.1, 0.7, -3.0, 2.0, 5.5, 0.0]).unwrap();
        assert_eq!(resize_bilinear(&map, 2, 3).unwrap(), map);

        let one = ScalarMap::filled(1, 1, 4.25).unwrap();
        let big = resize_bilinear(&one, 5, 7).unwrap();
        assert!(big.values().iter().all(|&v| v == 4.25));

        let ramp = ScalarMap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = resize_bilinear(&ramp, 4, 4).unwrap();
        // direct formula: x_src = (j + 0.5) * 2 / 4 - 0.5, clamped to [0, 1]
        for i in 0..4 {
            for j in 0..4 {
                let xs = ((j as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                assert!((up.get(i, j) as f64 - xs).abs() < 1e-7);
            }
        }
        assert_eq!(&up.values()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert!(resize_bilinear(&ramp, 0, 3).is_err());
    }

    #[test]
    fn mask_resize_examples() {
        let ones = ScalarMap::filled(5, 7, 1.0).unwrap();
        assert!(resize_mask(&ones, 3, 11).unwrap().values().iter().all(|&v| v == 1.0));
        let zeros = ScalarMap::filled(5, 7, 0.0).unwrap();
        assert!(resize_mask(&zeros, 3, 11).unwrap().values().iter().all(|&v| v == 0.0));

        let mut m = ScalarMap::filled(4, 4, 0.0).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                m.set(y, x, 1.0);
            }
        }
        let r = resize_mask(&m, 2, 2).unwrap();
        assert_eq!(r.values(), &[1.0, 0.0, 0.0, 0.0]);

        // exactly half covered stays background
        let mut half = ScalarMap::filled(2, 2, 0.0).unwrap();
        half.set(0, 0, 1.0);
        half.set(0, 1, 1.0);
        assert_eq!(resize_mask(&half, 1, 1).unwrap().values(), &[0.0]);

        let nonbin = ScalarMap::new(1, 2, vec![0.0, 0.5]).unwrap();
        assert!(matches!(resize_mask(&nonbin, 1, 1), Err(HiadError::Precondition(_))));
    }

    #[test]
    fn mask_resize_non_integer_ratio_matches_coverage_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = ScalarMap::from_fn(7, 9, |_, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).unwrap();
        let (oh, ow) = (3, 4);
        let r = resize_mask(&m, oh, ow).unwrap();
        // fine-grid oracle: supersample every source pixel into oh*ow sub-cells
        let (fh, fw) = (7 * oh, 9 * ow);
        for i in 0..oh {
            for j in 0..ow {
                let mut cov = 0usize;
                let (ys, xs) = (i * fh / oh, j * fw / ow);
                for fy in ys..ys + fh / oh {
                    for fx in xs..xs + fw / ow {
                        if m.get(fy / oh, fx / ow) == 1.0 {
                            cov += 1;
                        }
                    }
                }
                let expect = if 2 * cov > (fh / oh) * (fw / ow) { 1.0 } else { 0.0 };
                assert_eq!(r.get(i, j), expect, "pixel ({i},{j})");
            }
        }
    }

    #[test]
    fn pyramid_levels() {
        let img = random_image(3, 3, 16, 8);
        let p = build_pyramid(&img, 0).unwrap();
        assert_eq!(p, vec![img.clone()]);
        let p = build_pyramid(&img, 2).unwrap();
        let dims: Vec<_> = p.iter().map(|l| (l.height(), l.width())).collect();
        assert_eq!(dims, vec![(16, 8), (8, 4), (4, 2)]);
        let twice = downsample_by2(&downsample_by2(&img).unwrap()).unwrap();
        assert_eq!(p[2], twice);
        assert!(build_pyramid(&img, 4).is_err());

        let flat = ImageTensor::filled(1, 2048, 2048, 0.25).unwrap();
        let p = build_pyramid(&flat, 2).unwrap();
        let dims: Vec<_> = p.iter().map(|l| l.height()).collect();
        assert_eq!(dims, vec![2048, 1024, 512]);
        assert!(p.iter().all(|l| l.data().iter().all(|&v| v == 0.25)));
    }

    #[test]
    fn downsample_to_power_of_two_only() {
        let img = random_image(1, 1, 16, 16);
        assert_eq!(downsample_to(&img, 4, 4).unwrap().height(), 4);
        assert!(downsample_to(&img, 16, 16).unwrap() == img);
        assert!(matches!(downsample_to(&img, 8, 4), Err(HiadError::Geometry(_))));
    }

    #[test]
    fn reflect_padding() {
        let img = ImageTensor::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let p = pad_reflect(&img, 2, 4).unwrap();
        assert_eq!(p.data(), &[0.1, 0.2, 0.3, 0.2, 0.1, 0.2, 0.3, 0.2]);
    }

    proptest::proptest! {
        #[test]
        fn bilinear_preserves_constants(v in -10.0f32..10.0, h in 1usize..6, w in 1usize..6, oh in 1usize..20, ow in 1usize..20) {
            let m = ScalarMap::filled(h, w, v).unwrap();
            let r = resize_bilinear(&m, oh, ow).unwrap();
            proptest::prop_assert!(r.values().iter().all(|&x| x == v));
        }

        #[test]
        fn mask_resize_is_binary_and_monotone(seed in 0u64..1000, oh in 1usize..12, ow in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = ScalarMap::from_fn(9, 10, |_, _| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).unwrap();
            let mut b = a.clone();
            for v in b.values_mut() {
                if rng.gen_bool(0.3) { *v = 1.0; }
            }
            let ra = resize_mask(&a, oh, ow).unwrap();
            let rb = resize_mask(&b, oh, ow).unwrap();
            proptest::prop_assert!(ra.is_binary() && rb.is_binary());
            for (x, y) in ra.values().iter().zip(rb.values()) {
                proptest::prop_assert!(x <= y);
            }
        }
    }
}
