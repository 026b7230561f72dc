//! Patch feature extraction.
//!
//! Two sources of features share the [`FeatureExtractor`] trait:
//!
//! * [`FilterBank`], a fixed, versioned ("fb-v1") bank of 3x3 stencils that
//!   needs no learned weights. Layer `l` is computed on the patch downsampled
//!   by `2^l` and pooled over cells of `stride_l / 2^l` pixels, so deeper
//!   layers see a wider context, like the intermediate layers of a CNN. Each
//!   layer has 12 channels: three color means, three color standard
//!   deviations, four oriented gradient energies (0, 45, 90 and 135 degrees),
//!   a Laplacian energy and a center-surround energy. Stencil responses use
//!   replicate padding and an absolute-value nonlinearity before pooling.
//! * [`Precomputed`], which reads `HIADFEAT` files written by an external
//!   backbone exporter.
//!
//! `HIADFEAT` layout (little endian): magic `HIADFEAT`, `u16` version (1),
//! `u16` layer count, per layer `u32` channels, height, width, stride, then a
//! `u32` id length and the UTF-8 image id, then per layer the raw `f32` values
//! (channel-major, then row-major).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::imagery::{downsample_by2, ImageTensor, Planar};

pub const FILTER_BANK_VERSION: &str = "fb-v1";
pub const FILTER_BANK_CHANNELS: usize = 12;

/// One intermediate layer: `channels x height x width` cells of `stride` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayer {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub data: Vec<f32>,
}

impl FeatureLayer {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || stride == 0 {
            return Err(HiadError::Precondition(format!(
                "feature layer dims must be positive, got C={channels} h={height} w={width} s={stride}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(HiadError::Precondition(format!(
                "feature layer holds {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(FeatureLayer {
            channels,
            height,
            width,
            stride,
            data,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

impl Planar for FeatureLayer {
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
        FeatureLayer {
            channels: self.channels,
            height,
            width,
            stride: self.stride,
            data,
        }
    }
}

/// Multi-layer features of one raster (a patch or a whole image).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layers: Vec<FeatureLayer>,
}

impl FeatureMap {
    pub fn new(layers: Vec<FeatureLayer>) -> Result<Self> {
        let map = FeatureMap { layers };
        map.validate()?;
        Ok(map)
    }

    /// Pixel extent covered by the layers (`h_l * s_l`, `w_l * s_l`).
    pub fn input_dims(&self) -> (usize, usize) {
        let l = &self.layers[0];
        (l.height * l.stride, l.width * l.stride)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(HiadError::Precondition("feature map needs at least one layer".into()));
        }
        let dims = self.input_dims();
        for (k, l) in self.layers.iter().enumerate() {
            if (l.height * l.stride, l.width * l.stride) != dims {
                return Err(HiadError::Geometry(format!(
                    "layer {k} covers {}x{} pixels but layer 0 covers {}x{}",
                    l.height * l.stride,
                    l.width * l.stride,
                    dims.0,
                    dims.1
                )));
            }
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(|l| l.data.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ExtractorKind {
    FilterBank,
    /// Features read from `<dir>/<image id>/r<rate>_<row>_<col>.hiadfeat`
    /// (pyramid patches) and `<dir>/<image id>/low.hiadfeat` (low-resolution
    /// branch).
    Precomputed { dir: PathBuf },
}

/// Layer configuration of a feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub strides: Vec<usize>,
    pub channels: Vec<usize>,
    pub version: String,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::filter_bank(vec![8, 16])
    }
}

impl ExtractorSpec {
    pub fn filter_bank(strides: Vec<usize>) -> Self {
        let channels = vec![FILTER_BANK_CHANNELS; strides.len()];
        ExtractorSpec {
            kind: ExtractorKind::FilterBank,
            strides,
            channels,
            version: FILTER_BANK_VERSION.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() {
            return Err(HiadError::Config("extractor needs at least one layer".into()));
        }
        if self.channels.len() != self.strides.len() {
            return Err(HiadError::Config(format!(
                "{} layer strides but {} channel counts",
                self.strides.len(),
                self.channels.len()
            )));
        }
        for (k, &s) in self.strides.iter().enumerate() {
            if !s.is_power_of_two() {
                return Err(HiadError::Config(format!("layer {k} stride {s} is not a power of two")));
            }
            if k > 0 && s <= self.strides[k - 1] {
                return Err(HiadError::Config("layer strides must be strictly increasing".into()));
            }
        }
        if let ExtractorKind::FilterBank = self.kind {
            if self.version != FILTER_BANK_VERSION {
                return Err(HiadError::Config(format!(
                    "unknown filter bank version {:?}",
                    self.version
                )));
            }
            if self.channels.iter().any(|&c| c != FILTER_BANK_CHANNELS) {
                return Err(HiadError::Config(format!(
                    "filter bank layers have {FILTER_BANK_CHANNELS} channels"
                )));
            }
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        *self.strides.last().expect("validated spec has layers")
    }

    pub fn min_stride(&self) -> usize {
        self.strides[0]
    }

    /// Dimension of a concatenated per-cell vector.
    pub fn cell_dim(&self) -> usize {
        self.channels.iter().sum()
    }

    pub fn check_patch_dims(&self, h: usize, w: usize) -> Result<()> {
        let s = self.max_stride();
        if h % s != 0 || w % s != 0 {
            return Err(HiadError::Geometry(format!(
                "patch {h}x{w} is not divisible by the largest layer stride {s}"
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn FeatureExtractor>> {
        self.validate()?;
        Ok(match &self.kind {
            ExtractorKind::FilterBank => Box::new(FilterBank::new(self.clone())?),
            ExtractorKind::Precomputed { dir } => Box::new(Precomputed::new(self.clone(), dir.clone())),
        })
    }
}

/// Where a patch comes from; precomputed features are looked up by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchSource {
    Pyramid { rate: usize, row: usize, col: usize },
    LowRes,
}

#[derive(Debug, Clone, Copy)]
pub struct PatchContext<'a> {
    pub image_id: &'a str,
    pub source: PatchSource,
}

pub trait FeatureExtractor: Send + Sync {
    fn spec(&self) -> &ExtractorSpec;
    fn extract(&self, ctx: &PatchContext<'_>, patch: &ImageTensor) -> Result<FeatureMap>;
}

// ---------------------------------------------------------------------------
// Filter bank

/// 3x3 integer stencils and their exact scale factors.
const STENCILS: [([i8; 9], f32); 6] = [
    ([-1, 0, 1, -2, 0, 2, -1, 0, 1], 0.125),
    ([0, 1, 2, -1, 0, 1, -2, -1, 0], 0.125),
    ([-1, -2, -1, 0, 0, 0, 1, 2, 1], 0.125),
    ([-2, -1, 0, -1, 0, 1, 0, 1, 2], 0.125),
    ([0, 1, 0, 1, -4, 1, 0, 1, 0], 0.25),
    ([-1, -1, -1, -1, 8, -1, -1, -1, -1], 0.125),
];

#[derive(Debug, Clone)]
pub struct FilterBank {
    spec: ExtractorSpec,
}

impl FilterBank {
    pub fn new(spec: ExtractorSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind != ExtractorKind::FilterBank {
            return Err(HiadError::Config("FilterBank needs a filter-bank spec".into()));
        }
        Ok(FilterBank { spec })
    }
}

impl FeatureExtractor for FilterBank {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn extract(&self, _ctx: &PatchContext<'_>, patch: &ImageTensor) -> Result<FeatureMap> {
        extract(&self.spec, patch)
    }
}

/// Runs the built-in filter bank on one patch.
pub fn extract(spec: &ExtractorSpec, patch: &ImageTensor) -> Result<FeatureMap> {
    spec.validate()?;
    spec.check_patch_dims(patch.height(), patch.width())?;
    let mut level = patch.to_rgb();
    let mut layers = Vec::with_capacity(spec.strides.len());
    for (l, &stride) in spec.strides.iter().enumerate() {
        if l > 0 {
            level = downsample_by2(&level)?;
        }
        let cell = stride >> l;
        layers.push(filter_bank_layer(&level, cell, stride));
    }
    FeatureMap::new(layers)
}

fn filter_bank_layer(img: &ImageTensor, cell: usize, stride: usize) -> FeatureLayer {
    let (h, w) = (img.height(), img.width());
    let (ch, cw) = (h / cell, w / cell);
    let n = h * w;
    let cells = ch * cw;
    let mut data = vec![0f32; FILTER_BANK_CHANNELS * cells];
    let inv = 1.0 / (cell * cell) as f64;

    for c in 0..3 {
        let plane = img.plane(c);
        for cy in 0..ch {
            for cx in 0..cw {
                let mut sum = 0f64;
                for y in cy * cell..(cy + 1) * cell {
                    for &v in &plane[y * w + cx * cell..y * w + (cx + 1) * cell] {
                        sum += v as f64;
                    }
                }
                let mean = sum * inv;
                let mut var = 0f64;
                for y in cy * cell..(cy + 1) * cell {
                    for &v in &plane[y * w + cx * cell..y * w + (cx + 1) * cell] {
                        let d = v as f64 - mean;
                        var += d * d;
                    }
                }
                data[c * cells + cy * cw + cx] = mean as f32;
                data[(3 + c) * cells + cy * cw + cx] = (var * inv).sqrt() as f32;
            }
        }
    }

    // Stencils have zero coefficient sum; accumulating row sums in f64 makes
    // flat regions and mirror-symmetric structures cancel exactly.
    let gray: Vec<f64> = img.gray().into_iter().map(f64::from).collect();
    debug_assert_eq!(gray.len(), n);
    let mut response = vec![0f64; n];
    for (k, (stencil, scale)) in STENCILS.iter().enumerate() {
        let scale = *scale as f64;
        for y in 0..h {
            let rows = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
            for x in 0..w {
                let cols = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
                let mut acc = 0f64;
                for (dy, &ry) in rows.iter().enumerate() {
                    let mut row = 0f64;
                    for (dx, &rx) in cols.iter().enumerate() {
                        let coef = stencil[dy * 3 + dx];
                        if coef != 0 {
                            row += coef as f64 * gray[ry * w + rx];
                        }
                    }
                    acc += row;
                }
                response[y * w + x] = (acc * scale).abs();
            }
        }
        let channel = 6 + k;
        for cy in 0..ch {
            for cx in 0..cw {
                let mut sum = 0f64;
                for y in cy * cell..(cy + 1) * cell {
                    for &v in &response[y * w + cx * cell..y * w + (cx + 1) * cell] {
                        sum += v;
                    }
                }
                data[channel * cells + cy * cw + cx] = (sum * inv) as f32;
            }
        }
    }
    FeatureLayer {
        channels: FILTER_BANK_CHANNELS,
        height: ch,
        width: cw,
        stride,
        data,
    }
}

// ---------------------------------------------------------------------------
// HIADFEAT files

const MAGIC: &[u8; 8] = b"HIADFEAT";
const FORMAT_VERSION: u16 = 1;

pub fn encode_features(image_id: &str, map: &FeatureMap) -> Result<Vec<u8>> {
    if map.layers.iter().any(|l| l.data.iter().any(|v| !v.is_finite())) {
        return Err(HiadError::Numeric("feature map contains non-finite values".into()));
    }
    let mut out = Vec::with_capacity(16 + image_id.len() + 16 * map.layers.len() + 4 * map.total_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(map.layers.len() as u16).to_le_bytes());
    for l in &map.layers {
        for v in [l.channels, l.height, l.width, l.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(image_id.len() as u32).to_le_bytes());
    out.extend_from_slice(image_id.as_bytes());
    for l in &map.layers {
        for v in &l.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(HiadError::Format(format!(
                "truncated feature file: need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<(String, FeatureMap)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(HiadError::Format("bad magic at offset 0".into()));
    }
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(HiadError::Format(format!("unsupported version {version} at offset 8")));
    }
    let count = cur.u16("layer count")? as usize;
    if count == 0 {
        return Err(HiadError::Format("zero layers declared at offset 10".into()));
    }
    let mut dims = Vec::with_capacity(count);
    for k in 0..count {
        let at = cur.pos;
        let d = [
            cur.u32("channels")? as usize,
            cur.u32("height")? as usize,
            cur.u32("width")? as usize,
            cur.u32("stride")? as usize,
        ];
        if d.iter().any(|&v| v == 0) {
            return Err(HiadError::Format(format!("layer {k} has a zero dimension at offset {at}")));
        }
        dims.push((d, at));
    }
    let (first, _) = dims[0];
    for (k, (d, at)) in dims.iter().enumerate() {
        if d[1] * d[3] != first[1] * first[3] || d[2] * d[3] != first[2] * first[3] {
            return Err(HiadError::Format(format!(
                "layer {k} at offset {at} covers {}x{} pixels, layer 0 covers {}x{}",
                d[1] * d[3],
                d[2] * d[3],
                first[1] * first[3],
                first[2] * first[3]
            )));
        }
    }
    let id_len = cur.u32("id length")? as usize;
    let id_at = cur.pos;
    let id = std::str::from_utf8(cur.take(id_len, "image id")?)
        .map_err(|_| HiadError::Format(format!("image id at offset {id_at} is not UTF-8")))?
        .to_string();
    let mut layers = Vec::with_capacity(count);
    for (k, ([c, h, w, s], _)) in dims.into_iter().enumerate() {
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| HiadError::Format(format!("layer {k} size overflows")))?;
        let at = cur.pos;
        let raw = cur.take(n * 4, "layer data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(HiadError::Format(format!(
                "non-finite value in layer {k} at offset {}",
                at + 4 * i
            )));
        }
        layers.push(FeatureLayer {
            channels: c,
            height: h,
            width: w,
            stride: s,
            data,
        });
    }
    if cur.pos != bytes.len() {
        return Err(HiadError::Format(format!(
            "{} trailing bytes after offset {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    Ok((id, FeatureMap { layers }))
}

pub fn write_features(path: impl AsRef<Path>, image_id: &str, map: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(image_id, map)?;
    std::fs::write(path, bytes).map_err(|e| HiadError::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<(String, FeatureMap)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HiadError::io(path, e))?;
    decode_features(&bytes).map_err(|e| match e {
        HiadError::Format(m) => HiadError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Precomputed features

#[derive(Debug, Clone)]
pub struct Precomputed {
    spec: ExtractorSpec,
    dir: PathBuf,
}

impl Precomputed {
    pub fn new(spec: ExtractorSpec, dir: PathBuf) -> Self {
        Precomputed { spec, dir }
    }

    pub fn path_for(dir: &Path, ctx: &PatchContext<'_>) -> PathBuf {
        let name = match ctx.source {
            PatchSource::Pyramid { rate, row, col } => format!("r{rate}_{row}_{col}.hiadfeat"),
            PatchSource::LowRes => "low.hiadfeat".to_string(),
        };
        dir.join(ctx.image_id).join(name)
    }
}

impl FeatureExtractor for Precomputed {
    fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn extract(&self, ctx: &PatchContext<'_>, patch: &ImageTensor) -> Result<FeatureMap> {
        let path = Self::path_for(&self.dir, ctx);
        let (_, map) = read_features(&path)?;
        if map.layers.len() != self.spec.strides.len() {
            return Err(HiadError::Format(format!(
                "{}: {} layers, extractor spec declares {}",
                path.display(),
                map.layers.len(),
                self.spec.strides.len()
            )));
        }
        for (k, l) in map.layers.iter().enumerate() {
            if l.stride != self.spec.strides[k] || l.channels != self.spec.channels[k] {
                return Err(HiadError::Format(format!(
                    "{}: layer {k} is C={} s={}, expected C={} s={}",
                    path.display(),
                    l.channels,
                    l.stride,
                    self.spec.channels[k],
                    self.spec.strides[k]
                )));
            }
        }
        if map.input_dims() != (patch.height(), patch.width()) {
            return Err(HiadError::Format(format!(
                "{}: features cover {:?}, patch is {}x{}",
                path.display(),
                map.input_dims(),
                patch.height(),
                patch.width()
            )));
        }
        Ok(map)
    }
}
