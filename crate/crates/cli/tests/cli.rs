use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hiad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiad")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hiad(args);
    assert!(
        out.status.success(),
        "hiad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    hiad(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_spec(side: usize) -> String {
    format!(
        r#"{{
  "category": "tiles",
  "height": {side},
  "width": {side},
  "seed": 3,
  "train": 5,
  "test_normal": 3,
  "test_anomalous": 3,
  "texture": {{ "kind": "speckle", "amplitude": 0.05, "period": 16 }},
  "defects": {{ "kinds": ["rectangle", "blob"], "relative_area": [0.01, 0.02], "contrast": 0.3, "suppression": 1 }}
}}"#
    )
}

const CONFIG: &str = r#"{
  "patch": [64, 64],
  "fusion": { "weights": [0.5, 0.5] },
  "strategy": { "type": "na", "detectors": 2 },
  "detector": { "type": "memory-bank", "coreset_ratio": 0.2 },
  "low_res": [64, 64]
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture(side: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = root.join("spec.json");
    fs::write(&spec, synth_spec(side)).unwrap();
    let config = root.join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let data = root.join("data");
    ok(&["synth", "--config", s(&spec), "--out", s(&data)]);
    Fixture {
        _dir: dir,
        root,
        data,
        config,
    }
}

fn fit(f: &Fixture, out: &Path, extra: &[&str]) {
    let mut args = vec!["fit", "--config", s(&f.config), "--data", s(&f.data), "--category", "tiles", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn no_partials(dir: &Path) -> bool {
    fs::read_dir(dir)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().contains(".partial-"))
}

#[test]
fn synth_is_deterministic_and_laid_out() {
    let f = fixture(256);
    let base = f.data.join("tiles");
    assert_eq!(fs::read_dir(base.join("train/good")).unwrap().count(), 5);
    assert_eq!(fs::read_dir(base.join("test/good")).unwrap().count(), 3);
    let stats: Value = serde_json::from_slice(&fs::read(base.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["images"].as_array().unwrap().len(), 6);
    let again = f.root.join("again");
    ok(&["synth", "--config", s(&f.root.join("spec.json")), "--out", s(&again)]);
    assert_eq!(tree(&base), tree(&again.join("tiles")));
    // existing output is refused
    assert_eq!(code(&["synth", "--config", s(&f.root.join("spec.json")), "--out", s(&again)]), 2);
}

#[test]
fn fit_score_eval_round() {
    let f = fixture(256);
    let bundle = f.root.join("bundle");
    fit(&f, &bundle, &[]);
    assert!(bundle.join("manifest.json").is_file());

    // Parallel fit gives the same bundle bytes.
    let bundle4 = f.root.join("bundle4");
    fit(&f, &bundle4, &["--workers", "4"]);
    assert_eq!(tree(&bundle), tree(&bundle4));

    let base = f.data.join("tiles");
    let good = base.join("test/good/000.png");
    let bad = fs::read_dir(base.join("test/rectangle")).unwrap().next().unwrap().unwrap().path();
    let scored = f.root.join("scored");
    ok(&["score", "--bundle", s(&bundle), "--out", s(&scored), s(&good), s(&bad)]);
    let doc: Value = serde_json::from_slice(&fs::read(scored.join("scores.json")).unwrap()).unwrap();
    assert_eq!(doc["format"], "hiad-scores");
    let images = doc["images"].as_array().unwrap();
    assert_eq!(images.len(), 2);
    assert!(images[1]["score"].as_f64().unwrap() > images[0]["score"].as_f64().unwrap());
    for entry in images {
        assert!(scored.join(entry["heatmap"].as_str().unwrap()).is_file());
        let raw = fs::read(scored.join(entry["map"]["file"].as_str().unwrap())).unwrap();
        assert_eq!(raw.len(), 256 * 256 * 4);
    }
    assert_eq!(images[0]["id"], "good-000");

    let eval = |out: &Path, extra: &[&str]| {
        let mut args = vec!["eval", "--data", s(&f.data), "--category", "tiles", "--out", s(out), "--eval-size", "128"];
        args.extend_from_slice(extra);
        ok(&args);
        serde_json::from_slice::<Value>(&fs::read(out.join("report.json")).unwrap()).unwrap()
    };
    let (r1, r2) = (f.root.join("r1"), f.root.join("r2"));
    let report = eval(&r1, &["--bundle", s(&bundle)]);
    eval(&r2, &["--bundle", s(&bundle)]);
    assert_eq!(fs::read(r1.join("report.json")).unwrap(), fs::read(r2.join("report.json")).unwrap());
    for key in ["i_auc", "p_auc", "p_ap", "p_f1", "pro"] {
        let v = report["metrics"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(report["metrics"]["p_auc"].as_f64().unwrap() > 0.8);

    let random = eval(&f.root.join("random"), &["--random-detector", "--seed", "5"]);
    assert!(random["bundle"].is_null());
    let p_auc = random["metrics"]["p_auc"].as_f64().unwrap();
    assert!((p_auc - 0.5).abs() < 0.02, "{p_auc}");

    let png = f.root.join("assign.png");
    let listing = ok(&["inspect-assignment", "--bundle", s(&bundle), "--out", s(&png)]);
    assert!(listing.contains("detector 1"), "{listing}");
    let decoded = png::Decoder::new(fs::File::open(&png).unwrap()).read_info().unwrap();
    assert_eq!((decoded.info().width, decoded.info().height), (4 * 32, 4 * 32));
}

#[test]
fn invalid_tiling_leaves_nothing_behind() {
    let f = fixture(256);
    let bad = f.root.join("bad.json");
    fs::write(&bad, r#"{ "patch": [60, 60] }"#).unwrap();
    let out = f.root.join("bundle");
    let c = code(&["fit", "--config", s(&bad), "--data", s(&f.data), "--category", "tiles", "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(!out.exists());
    assert!(no_partials(&f.root));

    fs::write(&bad, r#"{ "patch": [64, 64], "version": 3 }"#).unwrap();
    assert_eq!(code(&["fit", "--config", s(&bad), "--data", s(&f.data), "--category", "tiles", "--out", s(&out)]), 2);
    assert_eq!(code(&["fit", "--data", s(&f.data), "--category", "nope", "--out", s(&out)]), 3);
    assert!(!out.exists());
}

#[test]
fn missing_bundle_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.png");
    hiad_core::imagery::save_png(&hiad_core::imagery::ImageTensor::filled(3, 64, 64, 0.5).unwrap(), &img).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["score", "--bundle", s(&dir.path().join("none")), "--out", s(&out), s(&img)]), 3);
    assert!(!out.exists());
    assert_eq!(code(&["eval", "--data", s(dir.path()), "--category", "c"]), 2);
}

#[test]
fn padding_makes_odd_sizes_usable() {
    let f = fixture(208);
    let out = f.root.join("bundle");
    let args = ["fit", "--config", s(&f.config), "--data", s(&f.data), "--category", "tiles", "--out", s(&out)];
    assert_eq!(code(&args), 2);
    fit(&f, &out, &["--pad"]);
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["image"], serde_json::json!([256, 256]));
    let scored = f.root.join("scored");
    ok(&["score", "--bundle", s(&out), "--out", s(&scored), "--pad", s(&f.data.join("tiles/test/good"))]);
    let doc: Value = serde_json::from_slice(&fs::read(scored.join("scores.json")).unwrap()).unwrap();
    assert_eq!(doc["images"][0]["map"]["height"], 208);
}

#[test]
fn feature_routing_needs_an_image() {
    let f = fixture(256);
    let cfg = f.root.join("ra.json");
    fs::write(&cfg, CONFIG.replace(r#""type": "na""#, r#""type": "ra""#)).unwrap();
    let out = f.root.join("bundle");
    ok(&["fit", "--config", s(&cfg), "--data", s(&f.data), "--category", "tiles", "--out", s(&out)]);
    let png = f.root.join("ra.png");
    assert_eq!(code(&["inspect-assignment", "--bundle", s(&out), "--out", s(&png)]), 2);
    let img = f.data.join("tiles/test/good/000.png");
    ok(&["inspect-assignment", "--bundle", s(&out), "--image", s(&img), "--out", s(&png)]);
    let decoded = png::Decoder::new(fs::File::open(&png).unwrap()).read_info().unwrap();
    assert_eq!((decoded.info().width, decoded.info().height), (256, 256));
}

#[test]
fn schemas_cover_the_written_documents() {
    let schemas = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    let load = |name: &str| -> Value { serde_json::from_slice(&fs::read(schemas.join(name)).unwrap()).unwrap() };
    let config = load("config.schema.json");
    let defaults: Value = serde_json::from_str(&hiad_core::pipeline::PipelineConfig::default().to_json()).unwrap();
    for key in defaults.as_object().unwrap().keys() {
        assert!(config["properties"].get(key).is_some(), "config schema lacks {key}");
    }
    let synth = load("synth.schema.json");
    let spec: Value = serde_json::from_str(&synth_spec(256)).unwrap();
    for key in spec.as_object().unwrap().keys() {
        assert!(synth["properties"].get(key).is_some(), "synth schema lacks {key}");
    }
    for name in ["report.schema.json", "scores.schema.json"] {
        assert_eq!(load(name)["properties"]["version"]["const"], 1);
    }
}
