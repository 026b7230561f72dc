//! Browser bindings: generate a synthetic category, fit a small model and
//! look at heatmaps and detector routing.

use wasm_bindgen::prelude::*;

use hiad_core::assignment::{Strategy, StrategySpec};
use hiad_core::data::{DefectKind, DefectSpec, SampleKind, Synth, SynthSpec, TextureKind, TextureSpec};
use hiad_core::detectors::DetectorSpec;
use hiad_core::fusion::FusionSpec;
use hiad_core::imagery::{heatmap_rgb, ImageTensor};
use hiad_core::parallel::Workers;
use hiad_core::pipeline::{fit, InferOptions, ModelBundle, NamedImage, PipelineConfig};

const SIDE: usize = 256;
const PATCH: usize = 64;
const TRAIN: usize = 4;
const TESTS: usize = 4;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn texture(name: &str) -> Result<TextureSpec, JsError> {
    let (kind, amplitude, period) = match name {
        "grid" => (TextureKind::Grid, 0.15, 16.0),
        "wood" => (TextureKind::WoodLike, 0.08, 12.0),
        "speckle" => (TextureKind::Speckle, 0.05, 16.0),
        _ => return Err(JsError::new(&format!("unknown texture {name:?}"))),
    };
    Ok(TextureSpec {
        kind,
        base: [0.5, 0.45, 0.4],
        amplitude,
        period,
        line_width: 2.0,
        mottling: 0.0,
        mottling_scale: 256.0,
    })
}

fn rgba(img: &ImageTensor) -> Vec<u8> {
    let rgb = img.to_rgb();
    let mut out = Vec::with_capacity(SIDE * SIDE * 4);
    for y in 0..rgb.height() {
        for x in 0..rgb.width() {
            for c in 0..3 {
                out.push((rgb.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

/// A synthetic category and, once fitted, a model for it.
#[wasm_bindgen]
pub struct Demo {
    train: Vec<NamedImage>,
    test: Vec<NamedImage>,
    bundle: Option<ModelBundle>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates 256x256 training images and defective test images.
    #[wasm_bindgen(constructor)]
    pub fn new(texture_name: &str, contrast: f32, seed: u64) -> Result<Demo, JsError> {
        let synth = Synth::new(SynthSpec {
            category: "demo".into(),
            height: SIDE,
            width: SIDE,
            seed,
            train: TRAIN,
            test_normal: 0,
            test_anomalous: TESTS,
            texture: texture(texture_name)?,
            defects: DefectSpec {
                kinds: vec![DefectKind::Rectangle, DefectKind::Blob, DefectKind::Scratch],
                count: [1, 2],
                relative_area: [0.005, 0.02],
                contrast,
                suppression: 1.0,
            },
        })
        .map_err(js)?;
        let named = |kind: SampleKind, prefix: &str| -> Result<Vec<NamedImage>, JsError> {
            Ok(synth
                .samples(kind)
                .map_err(js)?
                .into_iter()
                .map(|s| NamedImage::new(format!("{prefix}/{}", s.index), s.image))
                .collect())
        };
        Ok(Demo {
            train: named(SampleKind::Train, "train")?,
            test: named(SampleKind::TestAnomalous, "test")?,
            bundle: None,
        })
    }

    pub fn side(&self) -> usize {
        SIDE
    }

    pub fn test_count(&self) -> usize {
        self.test.len()
    }

    /// RGBA pixels of a test image.
    pub fn image_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        let img = self.test.get(index).ok_or_else(|| JsError::new("no such test image"))?;
        Ok(rgba(&img.image))
    }

    /// Fits a model with the given routing strategy, pool size and fusion
    /// weights for rates 0 and 1 (rescaled to sum to one). Returns a one-line
    /// summary.
    pub fn fit(&mut self, strategy: &str, detectors: usize, w0: f64, w1: f64) -> Result<String, JsError> {
        let strategy = match strategy {
            "a2o" => Strategy::A2o,
            "o2o" => Strategy::O2o,
            "na" => Strategy::Na,
            "sca" => Strategy::Sca,
            "ra" => Strategy::Ra,
            _ => return Err(JsError::new(&format!("unknown strategy {strategy:?}"))),
        };
        let total = w0 + w1;
        if !(total > 0.0) || w0 < 0.0 || w1 < 0.0 {
            return Err(JsError::new("fusion weights must be non-negative and not both zero"));
        }
        let weights = if w1 == 0.0 { vec![1.0] } else { vec![w0 / total, w1 / total] };
        let config = PipelineConfig {
            patch: [PATCH, PATCH],
            fusion: Some(FusionSpec { weights }),
            strategy: StrategySpec::new(strategy, Some(detectors)),
            detector: DetectorSpec::MemoryBank { coreset_ratio: 0.25 },
            low_res: Some([64, 64]),
            ..PipelineConfig::default()
        };
        self.bundle = None;
        let bundle = fit(&self.train, &config, &Workers::single()).map_err(js)?;
        let summary = format!(
            "{} detectors, training patches per detector {:?}",
            bundle.detectors.len(),
            bundle.summary.group_patches
        );
        self.bundle = Some(bundle);
        Ok(summary)
    }

    fn bundle(&self) -> Result<&ModelBundle, JsError> {
        self.bundle.as_ref().ok_or_else(|| JsError::new("fit a model first"))
    }

    fn image(&self, index: usize) -> Result<&NamedImage, JsError> {
        self.test.get(index).ok_or_else(|| JsError::new("no such test image"))
    }

    /// RGBA heatmap of a test image, optionally without the whole-image branch.
    pub fn heatmap_rgba(&self, index: usize, low_res: bool) -> Result<Vec<u8>, JsError> {
        let bundle = self.bundle()?;
        let opts = InferOptions {
            low_res,
            keep_branches: false,
        };
        let result = bundle.infer_with(self.image(index)?, &Workers::single(), opts).map_err(js)?;
        let [lo, hi] = bundle.render_range();
        let rgb = heatmap_rgb(&result.map, lo, hi);
        Ok(rgb.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect())
    }

    /// Test image blended with the color of the detector handling each patch.
    pub fn assignment_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        let bundle = self.bundle()?;
        let img = self.image(index)?;
        let (_, routes) = bundle.high_map(img, &Workers::single()).map_err(js)?;
        let mut out = rgba(&img.image);
        let grid = &bundle.grid;
        for (idx, &d) in routes.iter().enumerate() {
            let (row, col) = grid.position(idx);
            let (y0, x0) = grid.origin(row, col);
            let color = PALETTE[d % PALETTE.len()];
            for y in y0..y0 + PATCH {
                for x in x0..x0 + PATCH {
                    let p = (y * SIDE + x) * 4;
                    let edge = y == y0 || x == x0;
                    for c in 0..3 {
                        out[p + c] = if edge { 255 } else { ((out[p + c] as u16 + color[c] as u16) / 2) as u8 };
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_colors_follow_the_neighborhood_table() {
        let mut demo = Demo::new("grid", 0.3, 1).unwrap();
        demo.fit("na", 4, 0.5, 0.5).unwrap();
        let px = demo.assignment_rgba(0).unwrap();
        assert_eq!(px.len(), SIDE * SIDE * 4);
        let table = &demo.bundle.as_ref().unwrap().assignment.table;
        // interior pixel of the first patch carries half the palette color
        let p = (10 * SIDE + 10) * 4;
        let color = PALETTE[table[0] as usize];
        assert!(px[p..p + 3].iter().zip(color).all(|(&v, c)| v >= c / 2));
        let heat = demo.heatmap_rgba(0, true).unwrap();
        assert_eq!(heat.len(), SIDE * SIDE * 4);
    }
}
