//! Bundle directory: `manifest.json` plus one raw little-endian file per array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, AssignmentMeta};
use crate::detectors::{Detector, DetectorMeta};
use crate::error::{HiadError, Result};
use crate::fusion::FusionSpec;
use crate::pipeline::{FitSummary, LowResBranch, ModelBundle, NormStats, PipelineConfig};
use crate::store::{read_array, write_array, ArrayEntry, NamedArray};
use crate::tiling::PatchGrid;

pub const BUNDLE_FORMAT: &str = "hiad-bundle";
pub const BUNDLE_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LowResMeta {
    size: [usize; 2],
    detector: DetectorMeta,
    normalization: NormStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: PipelineConfig,
    image: [usize; 2],
    grid: PatchGrid,
    fusion: FusionSpec,
    assignment: AssignmentMeta,
    detectors: Vec<DetectorMeta>,
    normalization: Vec<NormStats>,
    low_res: Option<LowResMeta>,
    summary: FitSummary,
    arrays: Vec<ArrayEntry>,
}

fn prefixed(prefix: &str, arrays: Vec<NamedArray>) -> Vec<NamedArray> {
    arrays
        .into_iter()
        .map(|mut a| {
            a.name = format!("{prefix}.{}", a.name);
            a
        })
        .collect()
}

fn unprefixed(prefix: &str, arrays: &[NamedArray]) -> Vec<NamedArray> {
    let p = format!("{prefix}.");
    arrays
        .iter()
        .filter_map(|a| {
            a.name.strip_prefix(&p).map(|n| NamedArray {
                name: n.to_string(),
                dims: a.dims.clone(),
                data: a.data.clone(),
            })
        })
        .collect()
}

/// Writes `bundle` into `dir`, creating it if needed.
pub fn save_bundle(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HiadError::io(dir, e))?;
    let mut arrays = prefixed("assignment", bundle.assignment.to_arrays());
    for (d, det) in bundle.detectors.iter().enumerate() {
        arrays.extend(prefixed(&format!("detector{d}"), det.to_arrays()));
    }
    if let Some(low) = &bundle.low {
        arrays.extend(prefixed("low", low.detector.to_arrays()));
    }
    let entries = arrays
        .iter()
        .map(|a| write_array(dir, &format!("{}.bin", a.name), a))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        config: bundle.config.clone(),
        image: [bundle.image_h, bundle.image_w],
        grid: bundle.grid,
        fusion: bundle.fusion.clone(),
        assignment: bundle.assignment.meta(),
        detectors: bundle.detectors.iter().map(Detector::meta).collect(),
        normalization: bundle.stats.clone(),
        low_res: bundle.low.as_ref().map(|l| LowResMeta {
            size: [l.height, l.width],
            detector: l.detector.meta(),
            normalization: l.stats,
        }),
        summary: bundle.summary.clone(),
        arrays: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HiadError::Format(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text + "\n").map_err(|e| HiadError::io(&path, e))
}

pub fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| HiadError::io(&path, e))?;
    let head: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| HiadError::Format(format!("{}: {e}", path.display())))?;
    if head.get("format").and_then(|v| v.as_str()) != Some(BUNDLE_FORMAT) {
        return Err(HiadError::Format(format!("{} is not a model bundle manifest", path.display())));
    }
    let version = head.get("version").and_then(|v| v.as_u64());
    if version != Some(BUNDLE_VERSION as u64) {
        return Err(HiadError::Format(format!(
            "{}: bundle version {version:?} is not supported (expected {BUNDLE_VERSION})",
            path.display()
        )));
    }
    let m: Manifest = serde_json::from_value(head).map_err(|e| HiadError::Format(format!("{}: {e}", path.display())))?;
    let arrays = m
        .arrays
        .iter()
        .map(|e| read_array(dir, e))
        .collect::<Result<Vec<_>>>()?;
    let ctx = |what: &str, e: HiadError| match e {
        HiadError::Format(msg) => HiadError::Format(format!("{}: {what}: {msg}", path.display())),
        other => other,
    };

    let assignment =
        Assignment::from_parts(&m.assignment, &unprefixed("assignment", &arrays)).map_err(|e| ctx("assignment", e))?;
    if assignment.rows != m.grid.rows || assignment.cols != m.grid.cols {
        return Err(HiadError::Format(format!(
            "{}: assignment covers {}x{} positions, grid has {}x{}",
            path.display(),
            assignment.rows,
            assignment.cols,
            m.grid.rows,
            m.grid.cols
        )));
    }
    if m.detectors.len() != assignment.detectors || m.normalization.len() != m.detectors.len() {
        return Err(HiadError::Format(format!(
            "{}: {} detectors, {} normalization entries, assignment expects {}",
            path.display(),
            m.detectors.len(),
            m.normalization.len(),
            assignment.detectors
        )));
    }
    let detectors = m
        .detectors
        .iter()
        .enumerate()
        .map(|(d, meta)| {
            let name = format!("detector{d}");
            Detector::from_parts(meta, &unprefixed(&name, &arrays)).map_err(|e| ctx(&name, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let low = match &m.low_res {
        None => None,
        Some(l) => Some(LowResBranch {
            height: l.size[0],
            width: l.size[1],
            detector: Detector::from_parts(&l.detector, &unprefixed("low", &arrays)).map_err(|e| ctx("low", e))?,
            stats: l.normalization,
        }),
    };
    Ok(ModelBundle {
        config: m.config,
        image_h: m.image[0],
        image_w: m.image[1],
        grid: m.grid,
        fusion: m.fusion,
        assignment,
        detectors,
        stats: m.normalization,
        low,
        summary: m.summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{Strategy, StrategySpec};
    use crate::detectors::DetectorSpec;
    use crate::features::ExtractorSpec;
    use crate::imagery::ImageTensor;
    use crate::parallel::Workers;
    use crate::pipeline::{fit, NamedImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn images() -> Vec<NamedImage> {
        (0..4)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(i);
                let img = ImageTensor::from_fn(3, 64, 64, |_, _, _| 0.4 + 0.2 * rng.gen::<f32>()).unwrap();
                NamedImage::new(format!("img{i}"), img)
            })
            .collect()
    }

    fn bundle(detector: DetectorSpec, strategy: Strategy) -> ModelBundle {
        let cfg = PipelineConfig {
            patch: [32, 32],
            fusion: Some(FusionSpec::identity()),
            extractor: ExtractorSpec::filter_bank(vec![8, 16]),
            strategy: StrategySpec::new(strategy, Some(2)),
            detector,
            low_res: Some([32, 32]),
            ..PipelineConfig::default()
        };
        fit(&images(), &cfg, &Workers::single()).unwrap()
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for (det, strat) in [
            (DetectorSpec::MemoryBank { coreset_ratio: 0.5 }, Strategy::Ra),
            (DetectorSpec::Gaussian { epsilon: 0.01 }, Strategy::Na),
        ] {
            let b = bundle(det, strat);
            let t = tempfile::tempdir().unwrap();
            let (d1, d2) = (t.path().join("a"), t.path().join("b"));
            save_bundle(&b, &d1).unwrap();
            let loaded = load_bundle(&d1).unwrap();
            assert_eq!(loaded, b);
            save_bundle(&loaded, &d2).unwrap();
            assert_eq!(dir_bytes(&d1), dir_bytes(&d2));
        }
    }

    #[test]
    fn corrupted_and_foreign_bundles() {
        let b = bundle(DetectorSpec::MemoryBank { coreset_ratio: 0.5 }, Strategy::Sca);
        let t = tempfile::tempdir().unwrap();
        save_bundle(&b, t.path()).unwrap();
        let bank = t.path().join("detector0.bank.bin");
        let mut bytes = fs::read(&bank).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&bank, bytes).unwrap();
        let err = load_bundle(t.path()).unwrap_err().to_string();
        assert!(err.contains("detector0.bank.bin"), "{err}");

        let manifest = t.path().join(MANIFEST);
        let text = fs::read_to_string(&manifest).unwrap().replace("\"version\": 1,", "\"version\": 7,");
        fs::write(&manifest, text).unwrap();
        assert!(matches!(load_bundle(t.path()), Err(HiadError::Format(_))));
        assert!(matches!(load_bundle(&t.path().join("missing")), Err(HiadError::Io { .. })));
    }
}
