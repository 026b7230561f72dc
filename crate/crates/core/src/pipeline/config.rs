//! Run configuration and its geometry checks.

use serde::{Deserialize, Serialize};

use crate::assignment::StrategySpec;
use crate::detectors::DetectorSpec;
use crate::error::{HiadError, Result};
use crate::features::ExtractorSpec;
use crate::fusion::FusionSpec;
use crate::tiling::PatchGrid;

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_PATCH: usize = 512;
pub const DEFAULT_LOW_RES: usize = 512;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

/// Seeds of the stochastic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub pseudo: u64,
    pub clustering: u64,
    pub coreset: u64,
}

impl Seeds {
    /// Derives every stage seed from one master seed.
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            split: seed,
            pseudo: seed.wrapping_add(1),
            clustering: seed.wrapping_add(2),
            coreset: seed.wrapping_add(3),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_master(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Patch `[height, width]`.
    pub patch: [usize; 2],
    /// Defaults to the patch size.
    pub stride: Option<[usize; 2]>,
    /// Defaults to equal weights over the rates chosen by resolution.
    pub fusion: Option<FusionSpec>,
    pub extractor: ExtractorSpec,
    pub strategy: StrategySpec,
    pub detector: DetectorSpec,
    /// Size of the whole-image branch; `null` disables it.
    pub low_res: Option<[usize; 2]>,
    pub validation_fraction: f64,
    pub seeds: Seeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            patch: [DEFAULT_PATCH; 2],
            stride: None,
            fusion: None,
            extractor: ExtractorSpec::default(),
            strategy: StrategySpec::default(),
            detector: DetectorSpec::default(),
            low_res: Some([DEFAULT_LOW_RES; 2]),
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            seeds: Seeds::default(),
        }
    }
}

/// Geometry of a configuration applied to one image size.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub grid: PatchGrid,
    pub fusion: FusionSpec,
    pub low_res: Option<(usize, usize)>,
    pub pool_size: usize,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| HiadError::Config(format!("invalid configuration: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(HiadError::Config(format!(
                "configuration version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Sets all stage seeds from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::from_master(seed);
        self
    }

    pub fn stride_dims(&self) -> [usize; 2] {
        self.stride.unwrap_or(self.patch)
    }

    /// Checks every geometric and numeric precondition for `height x width`
    /// images without touching any data.
    pub fn resolve(&self, height: usize, width: usize) -> Result<Resolved> {
        if self.version != CONFIG_VERSION {
            return Err(HiadError::Config(format!("configuration version {} is not supported", self.version)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(HiadError::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        self.extractor.validate()?;
        self.detector.validate()?;
        let [ph, pw] = self.patch;
        let [sh, sw] = self.stride_dims();
        self.extractor.check_patch_dims(ph, pw)?;
        let s = self.extractor.max_stride();
        if sh % s != 0 || sw % s != 0 {
            return Err(HiadError::Geometry(format!(
                "stride {sh}x{sw} is not divisible by the largest layer stride {s}"
            )));
        }
        let grid = PatchGrid::new(height, width, ph, pw, sh, sw)?;
        let fusion = self.fusion.clone().unwrap_or_else(|| FusionSpec::for_resolution(height, width));
        fusion.validate()?;
        for (k, _) in fusion.active_rates() {
            let f = 1usize << k;
            if height % f != 0 || width % f != 0 {
                return Err(HiadError::Geometry(format!(
                    "image {height}x{width} cannot be halved {k} times for fusion rate {k}"
                )));
            }
            PatchGrid::new(height / f, width / f, ph, pw, sh, sw)
                .map_err(|e| HiadError::Geometry(format!("fusion rate {k}: {e}")))?;
        }
        let low_res = match self.low_res {
            None => None,
            Some([lh, lw]) => {
                if lh == 0 || lw == 0 || height % lh != 0 || width % lw != 0 || height / lh != width / lw {
                    return Err(HiadError::Geometry(format!(
                        "low-resolution size {lh}x{lw} is not a common integer downscale of {height}x{width}"
                    )));
                }
                if !(height / lh).is_power_of_two() {
                    return Err(HiadError::Geometry(format!(
                        "low-resolution ratio {} is not a power of two",
                        height / lh
                    )));
                }
                self.extractor
                    .check_patch_dims(lh, lw)
                    .map_err(|e| HiadError::Geometry(format!("low-resolution branch: {e}")))?;
                Some((lh, lw))
            }
        };
        self.strategy.validate(&grid)?;
        Ok(Resolved {
            grid,
            fusion,
            low_res,
            pool_size: self.strategy.pool_size(&grid),
        })
    }
}
