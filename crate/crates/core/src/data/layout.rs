//! Directory-layout loader.
//!
//! ```text
//! <root>/<category>/train/good/*.png
//! <root>/<category>/test/good/*.png
//! <root>/<category>/test/<defect>/*.png
//! <root>/<category>/ground_truth/<defect>/<stem>_mask.png   (or <stem>.png)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HiadError, Result};
use crate::imagery::{load_mask, load_png, ImageTensor, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub split: Split,
    /// True for anomalous test images.
    pub label: bool,
    pub mask: Option<PathBuf>,
    pub category: String,
    pub defect_type: String,
}

#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: ImageTensor,
    /// Ground truth; all zero for normal images.
    pub mask: ScalarMap,
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HiadError::io(dir, e))? {
        let path = entry.map_err(|e| HiadError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| HiadError::io(dir, e))? {
        let path = entry.map_err(|e| HiadError::io(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn dir_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Lists every sample of one category; train images come first, then test
/// images by defect type (`good` included), each sorted by file name.
pub fn load_layout(root: &Path, category: &str) -> Result<Vec<SampleRecord>> {
    let base = root.join(category);
    let train_dir = base.join("train").join("good");
    if !train_dir.is_dir() {
        return Err(HiadError::Ingestion(format!("missing training directory {}", train_dir.display())));
    }
    let mut records: Vec<SampleRecord> = pngs(&train_dir)?
        .into_iter()
        .map(|image| SampleRecord {
            image,
            split: Split::Train,
            label: false,
            mask: None,
            category: category.to_string(),
            defect_type: "good".into(),
        })
        .collect();
    if records.is_empty() {
        return Err(HiadError::Ingestion(format!("no training images in {}", train_dir.display())));
    }
    let test_dir = base.join("test");
    if !test_dir.is_dir() {
        return Ok(records);
    }
    for dir in subdirs(&test_dir)? {
        let defect = dir_name(&dir);
        let good = defect == "good";
        let gt_dir = base.join("ground_truth").join(&defect);
        let masks = if good || !gt_dir.is_dir() { Vec::new() } else { pngs(&gt_dir)? };
        for image in pngs(&dir)? {
            let mask = if good {
                None
            } else {
                let s = stem(&image);
                let found = masks.iter().find(|m| {
                    let ms = stem(m);
                    ms == s || ms == format!("{s}_mask")
                });
                match found {
                    Some(m) => Some(m.clone()),
                    None => {
                        let near = masks.iter().find(|m| stem(m).starts_with(&s) || s.starts_with(&stem(m)));
                        return Err(HiadError::Ingestion(match near {
                            Some(m) => format!(
                                "mask {} does not match image {} by name",
                                m.display(),
                                image.display()
                            ),
                            None => format!("anomalous image {} has no mask in {}", image.display(), gt_dir.display()),
                        }));
                    }
                }
            };
            records.push(SampleRecord {
                image,
                split: Split::Test,
                label: !good,
                mask,
                category: category.to_string(),
                defect_type: defect.clone(),
            });
        }
    }
    Ok(records)
}

/// Decodes a record's image and mask; the mask must match the image size.
pub fn load_sample(record: &SampleRecord) -> Result<LoadedSample> {
    let image = load_png(&record.image)?;
    let mask = match &record.mask {
        Some(p) => {
            let m = load_mask(p)?;
            if (m.height(), m.width()) != (image.height(), image.width()) {
                return Err(HiadError::Ingestion(format!(
                    "mask {} is {}x{} but image {} is {}x{}",
                    p.display(),
                    m.height(),
                    m.width(),
                    record.image.display(),
                    image.height(),
                    image.width()
                )));
            }
            m
        }
        None => ScalarMap::filled(image.height(), image.width(), 0.0)?,
    };
    Ok(LoadedSample {
        record: record.clone(),
        image,
        mask,
    })
}
