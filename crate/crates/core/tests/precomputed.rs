//! Fitting and scoring from HIADFEAT files written by an external exporter.

use std::fs;
use std::path::Path;

use hiad_core::assignment::{Strategy, StrategySpec};
use hiad_core::data::{DefectKind, DefectSpec, SampleKind, Synth, SynthSpec, TextureKind, TextureSpec};
use hiad_core::detectors::DetectorSpec;
use hiad_core::features::{
    extract, read_features, write_features, ExtractorKind, ExtractorSpec, PatchContext, PatchSource, Precomputed,
};
use hiad_core::fusion::FusionSpec;
use hiad_core::imagery::{build_pyramid, downsample_to};
use hiad_core::parallel::Workers;
use hiad_core::pipeline::{fit, NamedImage, PipelineConfig};
use hiad_core::tiling::{crop, PatchGrid};
use hiad_core::HiadError;

const PATCH: usize = 64;
const LOW: usize = 64;

fn synth() -> Synth {
    Synth::new(SynthSpec {
        category: "feat".into(),
        height: 256,
        width: 256,
        seed: 12,
        train: 5,
        test_normal: 1,
        test_anomalous: 1,
        texture: TextureSpec {
            kind: TextureKind::WoodLike,
            base: [0.5, 0.45, 0.4],
            amplitude: 0.08,
            period: 12.0,
            line_width: 2.0,
            mottling: 0.0,
            mottling_scale: 64.0,
        },
        defects: DefectSpec {
            kinds: vec![DefectKind::Blob],
            count: [1, 1],
            relative_area: [0.01, 0.02],
            contrast: 0.3,
            suppression: 1.0,
        },
    })
    .unwrap()
}

/// Writes what an exporter would: one file per pyramid patch plus the
/// low-resolution view, using the built-in filter bank as the "backbone".
fn export(images: &[NamedImage], spec: &ExtractorSpec, rates: usize, dir: &Path) -> usize {
    let mut files = 0;
    for img in images {
        fs::create_dir_all(dir.join(&img.id)).unwrap();
        let pyramid = build_pyramid(&img.image, rates - 1).unwrap();
        for (rate, level) in pyramid.iter().enumerate() {
            let grid = PatchGrid::non_overlapping(level.height(), level.width(), PATCH, PATCH).unwrap();
            for idx in 0..grid.len() {
                let (row, col) = grid.position(idx);
                let (y0, x0) = grid.origin(row, col);
                let ctx = PatchContext {
                    image_id: &img.id,
                    source: PatchSource::Pyramid { rate, row, col },
                };
                let map = extract(spec, &crop(level, y0, x0, PATCH, PATCH)).unwrap();
                write_features(Precomputed::path_for(dir, &ctx), &img.id, &map).unwrap();
                files += 1;
            }
        }
        let ctx = PatchContext {
            image_id: &img.id,
            source: PatchSource::LowRes,
        };
        let small = downsample_to(&img.image, LOW, LOW).unwrap();
        write_features(Precomputed::path_for(dir, &ctx), &img.id, &extract(spec, &small).unwrap()).unwrap();
        files += 1;
    }
    files
}

fn config(extractor: ExtractorSpec) -> PipelineConfig {
    PipelineConfig {
        patch: [PATCH, PATCH],
        fusion: Some(FusionSpec::equal(1)),
        extractor,
        strategy: StrategySpec::new(Strategy::Sca, Some(2)),
        detector: DetectorSpec::MemoryBank { coreset_ratio: 0.25 },
        low_res: Some([LOW, LOW]),
        ..PipelineConfig::default()
    }
}

#[test]
fn precomputed_features_reproduce_the_built_in_extractor() {
    let s = synth();
    let named = |k: SampleKind, p: &str| -> Vec<NamedImage> {
        s.samples(k)
            .unwrap()
            .into_iter()
            .map(|x| NamedImage::new(format!("{p}/{:03}", x.index), x.image))
            .collect()
    };
    let train = named(SampleKind::Train, "train");
    let mut test = named(SampleKind::TestNormal, "good");
    test.extend(named(SampleKind::TestAnomalous, "bad"));

    let dir = tempfile::tempdir().unwrap();
    let spec = ExtractorSpec::default();
    let all: Vec<NamedImage> = train.iter().chain(&test).cloned().collect();
    let files = export(&all, &spec, 2, dir.path());
    // 16 + 4 pyramid patches and one low-resolution view per image
    assert_eq!(files, all.len() * 21);

    let file_spec = ExtractorSpec {
        kind: ExtractorKind::Precomputed {
            dir: dir.path().to_path_buf(),
        },
        ..spec.clone()
    };
    let w = Workers::single();
    let built_in = fit(&train, &config(spec), &w).unwrap();
    let from_files = fit(&train, &config(file_spec), &w).unwrap();
    assert_eq!(built_in.assignment, from_files.assignment);
    assert_eq!(built_in.detectors, from_files.detectors);
    assert_eq!(built_in.stats, from_files.stats);
    assert_eq!(built_in.low, from_files.low);
    for img in &test {
        let a = built_in.infer(img, &w).unwrap();
        let b = from_files.infer(img, &w).unwrap();
        assert_eq!(a.map, b.map, "{}", img.id);
    }
    let bad = test.last().unwrap();
    let good = &test[0];
    assert!(from_files.infer(bad, &w).unwrap().score > from_files.infer(good, &w).unwrap().score);
}

#[test]
fn broken_feature_files_are_named() {
    let s = synth();
    let img = NamedImage::new("one", s.sample(SampleKind::TestAnomalous, 0).unwrap().image);
    let dir = tempfile::tempdir().unwrap();
    let spec = ExtractorSpec::default();
    export(std::slice::from_ref(&img), &spec, 2, dir.path());
    let target = dir.path().join("one/r1_0_1.hiadfeat");
    let (id, map) = read_features(&target).unwrap();
    assert_eq!(id, "one");
    assert_eq!(map.input_dims(), (PATCH, PATCH));

    let extractor = ExtractorSpec {
        kind: ExtractorKind::Precomputed {
            dir: dir.path().to_path_buf(),
        },
        ..spec
    }
    .build()
    .unwrap();
    let grid = PatchGrid::non_overlapping(256, 256, PATCH, PATCH).unwrap();
    let run = || {
        hiad_core::fusion::build_fused_features(&img.image, &img.id, extractor.as_ref(), &grid, &FusionSpec::equal(1), &Workers::single())
    };
    assert!(run().is_ok());

    let mut bytes = fs::read(&target).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&target, &bytes).unwrap();
    let e = run().unwrap_err();
    assert!(matches!(e, HiadError::Format(_)), "{e}");
    assert!(e.to_string().contains("r1_0_1.hiadfeat"), "{e}");

    fs::remove_file(&target).unwrap();
    let e = run().unwrap_err();
    assert!(matches!(e, HiadError::Io { .. }), "{e}");
    assert!(e.to_string().contains("r1_0_1.hiadfeat"), "{e}");
}
