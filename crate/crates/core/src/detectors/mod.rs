//! Patch-level detectors.

mod bank;
mod gaussian;

pub use bank::{coreset_select, coreset_size, squared_distance, MemoryBankDetector, DEFAULT_CORESET_RATIO};
pub use gaussian::{GaussianDetector, DEFAULT_EPSILON};

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::fusion::{CellBlock, PatchFeature};
use crate::imagery::{resize_bilinear, ScalarMap};
use crate::store::NamedArray;

/// Detector family and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DetectorSpec {
    Gaussian {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    MemoryBank {
        #[serde(default = "default_coreset_ratio")]
        coreset_ratio: f64,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_coreset_ratio() -> f64 {
    DEFAULT_CORESET_RATIO
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::MemoryBank {
            coreset_ratio: DEFAULT_CORESET_RATIO,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DetectorSpec::Gaussian { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => Err(
                HiadError::Config(format!("gaussian epsilon must be positive, got {epsilon}")),
            ),
            DetectorSpec::MemoryBank { coreset_ratio } if !(coreset_ratio > 0.0 && coreset_ratio <= 1.0) => Err(
                HiadError::Config(format!("coreset ratio must lie in (0, 1], got {coreset_ratio}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn fit(&self, samples: &[&CellBlock], seed: u64) -> Result<Detector> {
        self.validate()?;
        Ok(match *self {
            DetectorSpec::Gaussian { epsilon } => Detector::Gaussian(GaussianDetector::fit(samples, epsilon)?),
            DetectorSpec::MemoryBank { coreset_ratio } => {
                Detector::MemoryBank(MemoryBankDetector::fit(samples, coreset_ratio, seed)?)
            }
        })
    }
}

/// Score of one patch at cell and at pixel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePatch {
    pub row: usize,
    pub col: usize,
    pub cells: ScalarMap,
    pub pixels: ScalarMap,
}

/// Everything needed to rebuild a detector besides its arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DetectorMeta {
    Gaussian {
        rows: usize,
        cols: usize,
        dim: usize,
        epsilon: f64,
    },
    MemoryBank {
        size: usize,
        dim: usize,
        coreset_ratio: f64,
        seed: u64,
    },
    Constant {
        value: f32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Gaussian(GaussianDetector),
    MemoryBank(MemoryBankDetector),
    /// Scores every cell with the same value.
    Constant(f32),
}

impl Detector {
    pub fn score_cells(&self, block: &CellBlock) -> Result<Vec<f32>> {
        match self {
            Detector::Gaussian(g) => g.score_cells(block),
            Detector::MemoryBank(b) => b.score_cells(block),
            Detector::Constant(v) => Ok(vec![*v; block.len()]),
        }
    }

    /// Scores a patch feature and upsamples the cell scores to `patch_h x patch_w`.
    pub fn score_patch(&self, feature: &PatchFeature, patch_h: usize, patch_w: usize) -> Result<ScorePatch> {
        let block = feature.cells();
        let scores = self.score_cells(&block)?;
        let cells = ScalarMap::new(block.rows, block.cols, scores)?;
        let pixels = resize_bilinear(&cells, patch_h, patch_w)?;
        Ok(ScorePatch {
            row: feature.row,
            col: feature.col,
            cells,
            pixels,
        })
    }

    pub fn meta(&self) -> DetectorMeta {
        match self {
            Detector::Gaussian(g) => DetectorMeta::Gaussian {
                rows: g.rows,
                cols: g.cols,
                dim: g.dim,
                epsilon: g.epsilon,
            },
            Detector::MemoryBank(b) => DetectorMeta::MemoryBank {
                size: b.len(),
                dim: b.dim,
                coreset_ratio: b.coreset_ratio,
                seed: b.seed,
            },
            Detector::Constant(v) => DetectorMeta::Constant { value: *v },
        }
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        match self {
            Detector::Gaussian(g) => g.to_arrays(),
            Detector::MemoryBank(b) => b.to_arrays(),
            Detector::Constant(_) => Vec::new(),
        }
    }

    pub fn from_parts(meta: &DetectorMeta, arrays: &[NamedArray]) -> Result<Self> {
        Ok(match *meta {
            DetectorMeta::Gaussian {
                rows,
                cols,
                dim,
                epsilon,
            } => Detector::Gaussian(GaussianDetector::from_arrays(rows, cols, dim, epsilon, arrays)?),
            DetectorMeta::MemoryBank {
                size,
                dim,
                coreset_ratio,
                seed,
            } => Detector::MemoryBank(MemoryBankDetector::from_arrays(size, dim, coreset_ratio, seed, arrays)?),
            DetectorMeta::Constant { value } => Detector::Constant(value),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureLayer, FeatureMap};

    fn feature(values: Vec<f32>) -> PatchFeature {
        let layer = FeatureLayer::new(1, 2, 2, 4, values).unwrap();
        PatchFeature::from_map(0, 0, &FeatureMap::new(vec![layer]).unwrap())
    }

    #[test]
    fn score_patch_upsamples_cells() {
        let det = DetectorSpec::MemoryBank { coreset_ratio: 1.0 }
            .fit(&[&feature(vec![0.0; 4]).cells()], 0)
            .unwrap();
        let sp = det.score_patch(&feature(vec![0.0, 1.0, 0.0, 1.0]), 8, 8).unwrap();
        assert_eq!(sp.cells.values(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!((sp.pixels.height(), sp.pixels.width()), (8, 8));
        assert_eq!(sp.pixels.get(0, 0), 0.0);
        assert_eq!(sp.pixels.get(7, 7), 1.0);
    }

    #[test]
    fn spec_validation_and_serde() {
        assert!(DetectorSpec::Gaussian { epsilon: 0.0 }.validate().is_err());
        assert!(DetectorSpec::MemoryBank { coreset_ratio: 1.5 }.validate().is_err());
        let spec: DetectorSpec = serde_json::from_str(r#"{"type":"gaussian"}"#).unwrap();
        assert_eq!(spec, DetectorSpec::Gaussian { epsilon: 0.01 });
        let spec: DetectorSpec = serde_json::from_str(r#"{"type":"memory-bank","coreset_ratio":0.1}"#).unwrap();
        assert_eq!(spec, DetectorSpec::MemoryBank { coreset_ratio: 0.1 });
        assert!(serde_json::from_str::<DetectorSpec>(r#"{"type":"flow"}"#).is_err());
    }

    #[test]
    fn parts_roundtrip() {
        let blocks = [feature(vec![0.0, 1.0, 2.0, 3.0]), feature(vec![1.0, 1.0, 2.5, 2.0])];
        let refs: Vec<&CellBlock> = Vec::new();
        assert!(DetectorSpec::default().fit(&refs, 0).is_err());
        let cells: Vec<CellBlock> = blocks.iter().map(|b| b.cells()).collect();
        let refs: Vec<&CellBlock> = cells.iter().collect();
        for spec in [DetectorSpec::Gaussian { epsilon: 0.01 }, DetectorSpec::MemoryBank { coreset_ratio: 0.5 }] {
            let det = spec.fit(&refs, 3).unwrap();
            let back = Detector::from_parts(&det.meta(), &det.to_arrays()).unwrap();
            assert_eq!(back, det);
        }
        let c = Detector::Constant(-1.0);
        assert_eq!(Detector::from_parts(&c.meta(), &[]).unwrap(), c);
    }
}
