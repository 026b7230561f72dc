use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hiad_core::assignment::Strategy;
use hiad_core::data::{load_layout, load_sample, write_synth_to, SampleRecord, Split, Synth, SynthSpec};
use hiad_core::fusion::FusionSpec;
use hiad_core::imagery::{load_png, pad_reflect, save_heatmap, save_rgb8, ImageTensor, ScalarMap};
use hiad_core::metrics::{evaluate, random_map};
use hiad_core::parallel::Workers;
use hiad_core::pipeline::{fit as fit_bundle, load_bundle, save_bundle, InferOptions, ModelBundle, NamedImage, PipelineConfig};
use hiad_core::store::{write_array, ArrayData, NamedArray};
use hiad_core::{HiadError, Result};

use crate::docs::{self, MapFile, ReportDoc, ScoreEntry, ScoresDoc};
use crate::stage::Staged;
use crate::{Common, Dataset};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HiadError::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HiadError::io(path, e))
}

/// Identifier of a dataset image: its path below the category directory,
/// without extension (`train/good/000`).
fn record_id(record: &SampleRecord, base: &Path) -> String {
    let rel = record.image.strip_prefix(base).unwrap_or(&record.image);
    rel.with_extension("").to_string_lossy().replace('\\', "/")
}

/// Smallest size at or above `h x w` that tiles into whole patches at every
/// fusion level of `cfg`.
fn pad_target(cfg: &PipelineConfig, h: usize, w: usize) -> (usize, usize) {
    let fusion = cfg.fusion.clone().unwrap_or_else(|| FusionSpec::for_resolution(h, w));
    let k = fusion.max_rate();
    let (uh, uw) = (cfg.patch[0] << k, cfg.patch[1] << k);
    (h.div_ceil(uh) * uh, w.div_ceil(uw) * uw)
}

fn conform(img: ImageTensor, target: (usize, usize), pad: bool, path: &Path) -> Result<ImageTensor> {
    let dims = (img.height(), img.width());
    if dims == target {
        return Ok(img);
    }
    if pad && dims.0 <= target.0 && dims.1 <= target.1 {
        return pad_reflect(&img, target.0, target.1);
    }
    Err(HiadError::Ingestion(format!(
        "{} is {}x{} but the model expects {}x{}{}",
        path.display(),
        dims.0,
        dims.1,
        target.0,
        target.1,
        if pad { "" } else { " (--pad reflect-pads smaller images)" }
    )))
}

fn crop(map: &ScalarMap, h: usize, w: usize) -> Result<ScalarMap> {
    if (map.height(), map.width()) == (h, w) {
        return Ok(map.clone());
    }
    ScalarMap::from_fn(h, w, |y, x| map.get(y, x))
}

fn split_records(dataset: &Dataset, split: Split) -> Result<Vec<SampleRecord>> {
    let records: Vec<_> = load_layout(&dataset.data, &dataset.category)?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(HiadError::Ingestion(format!(
            "category {} has no {split:?} images",
            dataset.category
        )));
    }
    Ok(records)
}

pub fn fit(config: Option<&Path>, dataset: &Dataset, out: &Path, common: &Common) -> Result<()> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::from_json(&read_text(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let workers = Workers::new(common.workers)?;
    let records = split_records(dataset, Split::Train)?;
    let first = load_png(&records[0].image)?;
    let target = if dataset.pad {
        pad_target(&cfg, first.height(), first.width())
    } else {
        (first.height(), first.width())
    };
    let resolved = cfg.resolve(target.0, target.1)?;
    let staged = Staged::new(out)?;

    let base = dataset.data.join(&dataset.category);
    let mut images = Vec::with_capacity(records.len());
    for r in &records {
        let img = conform(load_png(&r.image)?, target, dataset.pad, &r.image)?;
        images.push(NamedImage::new(record_id(r, &base), img));
    }
    eprintln!(
        "fitting {} images of {}x{}: {}x{} patches, {} detectors",
        images.len(),
        target.0,
        target.1,
        resolved.grid.rows,
        resolved.grid.cols,
        resolved.pool_size
    );
    let t = Instant::now();
    let bundle = fit_bundle(&images, &cfg, &workers)?;
    save_bundle(&bundle, staged.path())?;
    let dest = staged.commit()?;
    let s = &bundle.summary;
    println!("bundle      {}", dest.display());
    println!("images      {} fit, {} validation", s.fit_images.len(), s.validation_images.len());
    for (d, n) in s.group_patches.iter().enumerate() {
        println!("detector {d:<3} {n} training patches");
    }
    println!("gate        inside {:.4} > outside {:.4}", s.gate_inside, s.gate_outside);
    println!("time        {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

fn collect_pngs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| HiadError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(HiadError::Ingestion("no PNG images to score".into()));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// File stems, prefixed with the parent directory name where stems repeat.
fn image_ids(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut counts = BTreeMap::new();
    for p in paths {
        *counts.entry(stem(p)).or_insert(0usize) += 1;
    }
    let ids: Vec<String> = paths
        .iter()
        .map(|p| {
            let s = stem(p);
            match p.parent().and_then(|d| d.file_name()) {
                Some(dir) if counts[&s] > 1 => format!("{}-{s}", dir.to_string_lossy()),
                _ => s,
            }
        })
        .collect();
    let mut seen = BTreeMap::new();
    for (p, id) in paths.iter().zip(&ids) {
        if let Some(prev) = seen.insert(id, p) {
            return Err(HiadError::Config(format!(
                "{} and {} would both be written as {id:?}",
                prev.display(),
                p.display()
            )));
        }
    }
    Ok(ids)
}

pub fn score(bundle_dir: &Path, inputs: &[PathBuf], out: &Path, low_res: bool, pad: bool, common: &Common) -> Result<()> {
    let workers = Workers::new(common.workers)?;
    let bundle = load_bundle(bundle_dir)?;
    let paths = collect_pngs(inputs)?;
    let ids = image_ids(&paths)?;
    let staged = Staged::new(out)?;
    for sub in ["heatmaps", "maps"] {
        let d = staged.path().join(sub);
        fs::create_dir(&d).map_err(|e| HiadError::io(&d, e))?;
    }
    let [lo, hi] = bundle.render_range();
    let target = (bundle.image_h, bundle.image_w);
    let opts = InferOptions {
        low_res,
        keep_branches: false,
    };
    let mut entries = Vec::with_capacity(paths.len());
    for (p, id) in paths.iter().zip(ids) {
        let img = load_png(p)?;
        let (h, w) = (img.height(), img.width());
        let img = conform(img, target, pad, p)?;
        let result = bundle.infer_with(&NamedImage::new(id.clone(), img), &workers, opts)?;
        let map = crop(&result.map, h, w)?;
        let score = map.max();
        let heatmap = format!("heatmaps/{id}.png");
        save_heatmap(&map, lo, hi, staged.path().join(&heatmap))?;
        let file = format!("maps/{id}.f32");
        let array = NamedArray::new(id.clone(), vec![h, w], ArrayData::F32(map.into_values()));
        write_array(staged.path(), &file, &array)?;
        println!("{score:>12.4}  {}", p.display());
        entries.push(ScoreEntry {
            id,
            source: p.to_string_lossy().into_owned(),
            score,
            heatmap,
            map: MapFile {
                file,
                height: h,
                width: w,
                dtype: "f32le",
            },
        });
    }
    let doc = ScoresDoc {
        format: docs::SCORES_FORMAT,
        version: docs::DOC_VERSION,
        bundle: bundle_dir.to_string_lossy().into_owned(),
        low_res: low_res && bundle.low.is_some(),
        render_range: [lo, hi],
        images: entries,
    };
    write_text(&staged.path().join("scores.json"), &docs::to_json(&doc))?;
    staged.commit()?;
    Ok(())
}

pub fn eval(
    bundle_dir: Option<&Path>,
    dataset: &Dataset,
    eval_size: usize,
    random_detector: bool,
    out: Option<&Path>,
    common: &Common,
) -> Result<()> {
    if eval_size == 0 {
        return Err(HiadError::Config("--eval-size must be positive".into()));
    }
    let workers = Workers::new(common.workers)?;
    let bundle: Option<ModelBundle> = match (random_detector, bundle_dir) {
        (true, _) => None,
        (false, Some(d)) => Some(load_bundle(d)?),
        (false, None) => return Err(HiadError::Config("eval needs --bundle or --random-detector".into())),
    };
    let records = split_records(dataset, Split::Test)?;
    if !records.iter().any(|r| r.label) || records.iter().all(|r| r.label) {
        return Err(HiadError::Ingestion(format!(
            "test split of {} needs both normal and anomalous images",
            dataset.category
        )));
    }
    let staged = out.map(Staged::new).transpose()?;

    let base = dataset.data.join(&dataset.category);
    let seed = common.seed.unwrap_or(0);
    let (mut maps, mut masks, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let t = Instant::now();
    for (i, r) in records.iter().enumerate() {
        let sample = load_sample(r)?;
        let (h, w) = (sample.image.height(), sample.image.width());
        let map = match &bundle {
            None => random_map(h, w, seed.wrapping_add(i as u64))?,
            Some(b) => {
                let img = conform(sample.image, (b.image_h, b.image_w), dataset.pad, &r.image)?;
                let result = b.infer(&NamedImage::new(record_id(r, &base), img), &workers)?;
                crop(&result.map, h, w)?
            }
        };
        scores.push(map.max());
        labels.push(r.label);
        maps.push(map);
        masks.push(sample.mask);
    }
    let report = evaluate(&maps, &masks, &scores, &labels, eval_size, &workers)?;
    print!("{}", report.to_table());
    eprintln!("evaluated {} images in {:.1}s", maps.len(), t.elapsed().as_secs_f64());
    if let Some(staged) = staged {
        let doc = ReportDoc {
            format: docs::REPORT_FORMAT,
            version: docs::DOC_VERSION,
            category: dataset.category.clone(),
            bundle: bundle_dir.filter(|_| !random_detector).map(|d| d.to_string_lossy().into_owned()),
            random_detector,
            metrics: report,
        };
        write_text(&staged.path().join("report.json"), &docs::to_json(&doc))?;
        staged.commit()?;
    }
    Ok(())
}

pub fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = serde_json::from_str(&read_text(config)?)
        .map_err(|e| HiadError::Config(format!("invalid synthetic spec {}: {e}", config.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let synth = Synth::new(spec)?;
    let dest = out.join(&synth.spec().category);
    let staged = Staged::new(&dest)?;
    let t = Instant::now();
    let stats = write_synth_to(&synth, staged.path())?;
    let dest = staged.commit()?;
    let anomalous: Vec<f64> = stats.images.iter().filter(|i| !i.defects.is_empty()).map(|i| i.relative_area).collect();
    let spec = synth.spec();
    println!("dataset     {}", dest.display());
    println!(
        "images      {} train, {} normal test, {} anomalous test at {}x{}",
        spec.train, spec.test_normal, spec.test_anomalous, spec.height, spec.width
    );
    if !anomalous.is_empty() {
        let lo = anomalous.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = anomalous.iter().copied().fold(0.0, f64::max);
        println!("defect area {lo:.2e} .. {hi:.2e} of the image");
    }
    println!("time        {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Side of one patch in the table-only rendering.
const CELL_PX: usize = 32;

pub fn inspect_assignment(bundle_dir: &Path, image: Option<&Path>, out: &Path, common: &Common) -> Result<()> {
    let workers = Workers::new(common.workers)?;
    let bundle = load_bundle(bundle_dir)?;
    let grid = bundle.grid;
    if out.extension().is_none_or(|e| !e.eq_ignore_ascii_case("png")) {
        return Err(HiadError::Config(format!("{} must be a .png path", out.display())));
    }
    let (routes, backdrop) = match image {
        Some(p) => {
            let img = conform(load_png(p)?, (bundle.image_h, bundle.image_w), false, p)?;
            let (_, routes) = bundle.high_map(&NamedImage::new(stem(p), img.clone()), &workers)?;
            (routes, Some(img))
        }
        None if bundle.assignment.strategy == Strategy::Ra => {
            return Err(HiadError::Config(
                "ra routes patches by their features; pass --image to inspect it".into(),
            ))
        }
        None => (bundle.assignment.table.iter().map(|&d| d as usize).collect::<Vec<_>>(), None),
    };

    let (h, w, bytes) = match &backdrop {
        Some(img) => {
            let gray = img.gray();
            let (h, w) = (img.height(), img.width());
            let mut bytes = vec![0u8; h * w * 3];
            for i in 0..grid.rows {
                for j in 0..grid.cols {
                    let color = PALETTE[routes[grid.index(i, j)] % PALETTE.len()];
                    let (y0, x0) = grid.origin(i, j);
                    for y in y0..y0 + grid.patch_h {
                        for x in x0..x0 + grid.patch_w {
                            let g = gray[y * w + x] * 255.0;
                            for c in 0..3 {
                                bytes[(y * w + x) * 3 + c] = (0.5 * g + 0.5 * color[c] as f32).round() as u8;
                            }
                        }
                    }
                }
            }
            (h, w, bytes)
        }
        None => {
            let (h, w) = (grid.rows * CELL_PX, grid.cols * CELL_PX);
            let mut bytes = vec![0u8; h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    let border = y % CELL_PX == 0 || x % CELL_PX == 0;
                    let color = PALETTE[routes[grid.index(y / CELL_PX, x / CELL_PX)] % PALETTE.len()];
                    let px = if border { [255, 255, 255] } else { color };
                    bytes[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&px);
                }
            }
            (h, w, bytes)
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HiadError::io(parent, e))?;
    }
    save_rgb8(w, h, &bytes, out)?;
    let mut counts = vec![0usize; bundle.detectors.len()];
    for &d in &routes {
        counts[d] += 1;
    }
    println!("strategy    {}", bundle.assignment.strategy.name());
    for (d, n) in counts.iter().enumerate() {
        println!("detector {d:<3} {n} patches");
    }
    Ok(())
}
