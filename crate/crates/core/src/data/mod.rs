//! Datasets: a procedural generator and a loader for the common
//! `train/good`, `test/<type>`, `ground_truth/<type>` directory layout.

mod layout;
mod synth;

pub use layout::{load_layout, load_sample, LoadedSample, SampleRecord, Split};
pub use synth::{
    DefectKind, DefectRecord, DefectSpec, SampleKind, Synth, SynthSample, SynthSpec, TextureKind, TextureSpec,
    MAX_RELATIVE_AREA, MIN_DEFECT_SIDE,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::imagery::{save_map_gray, save_png};
use crate::metrics::relative_defect_area;

/// Per-image entry of the `stats.json` written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthImageStats {
    pub file: String,
    pub defect_type: String,
    pub relative_area: f64,
    pub defects: Vec<DefectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub spec: SynthSpec,
    pub images: Vec<SynthImageStats>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| HiadError::io(p, e))
}

/// Writes the dataset under `root/<category>` and returns the statistics that
/// were also saved as `stats.json` there.
pub fn write_synth(synth: &Synth, root: &Path) -> Result<SynthStats> {
    write_synth_to(synth, &root.join(&synth.spec().category))
}

/// Like [`write_synth`] but writes directly into the category directory `base`.
pub fn write_synth_to(synth: &Synth, base: &Path) -> Result<SynthStats> {
    let spec = synth.spec();
    let mut images = Vec::new();
    let mut write = |s: &SynthSample, dir: PathBuf, name: String| -> Result<()> {
        mkdir(&dir)?;
        let path = dir.join(&name);
        save_png(&s.image, &path)?;
        let rel = path.strip_prefix(&base).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        if s.kind == SampleKind::TestAnomalous {
            let gt = base.join("ground_truth").join(s.defect_type());
            mkdir(&gt)?;
            save_map_gray(&s.mask, 0.0, 1.0, gt.join(name.replace(".png", "_mask.png")))?;
        }
        if s.kind != SampleKind::Train {
            images.push(SynthImageStats {
                file: rel,
                defect_type: s.defect_type().to_string(),
                relative_area: relative_defect_area(&s.mask),
                defects: s.defects.clone(),
            });
        }
        Ok(())
    };
    for kind in [SampleKind::Train, SampleKind::TestNormal, SampleKind::TestAnomalous] {
        for i in 0..synth.count(kind) {
            let s = synth.sample(kind, i)?;
            let dir = match kind {
                SampleKind::Train => base.join("train").join("good"),
                SampleKind::TestNormal => base.join("test").join("good"),
                SampleKind::TestAnomalous => base.join("test").join(s.defect_type()),
            };
            write(&s, dir, format!("{i:03}.png"))?;
        }
    }
    let stats = SynthStats {
        spec: spec.clone(),
        images,
    };
    let path = base.join("stats.json");
    let json = serde_json::to_string_pretty(&stats).map_err(|e| HiadError::Format(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| HiadError::io(&path, e))?;
    Ok(stats)
}
