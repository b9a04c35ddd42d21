use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use envsound::autodiff::checkpoint::Container;
use envsound::encoder::{init_encoder, EncoderModel};
use envsound::features::{read_matrix, save_features, FeatureMatrix, SampleRecord};
use envsound::synth::{write_flat_dirs, ToneDataset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_envsound"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn envsound")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "envsound {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("tones");
        let data = ToneDataset {
            clips_per_class: vec![10; 4],
            duration_secs: 0.25,
            ..ToneDataset::four_tones(11)
        }
        .generate()
        .unwrap();
        write_flat_dirs(&root, &data).unwrap();
        let config = dir.path().join("run.toml");
        let text = format!(
            "seed = 5\ntest_folds = [5]\n\n[dataset]\nroot = {:?}\nformat = \"flat-dirs\"\n\n[train]\nbatch_size = 8\nsteps = 3\npatches_per_segment = 2\n\n[probe]\nepochs = 50\n",
            root.display().to_string()
        );
        std::fs::write(&config, text).unwrap();
        Self { _dir: dir, root, config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.parent().unwrap().join(name)
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Just enough of JSON Schema for the published report schema: `type`,
/// `const`, `required`, `properties`, `additionalProperties`, `items`,
/// `minimum`, `maximum`.
fn schema_errors(schema: &Value, v: &Value, at: &str, errs: &mut Vec<String>) {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => vec![],
        };
        let matches = |t: &str| match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            "null" => v.is_null(),
            "boolean" => v.is_boolean(),
            _ => false,
        };
        if !types.iter().any(|t| matches(t)) {
            errs.push(format!("{at}: expected {types:?}, got {v}"));
            return;
        }
    }
    if let Some(c) = schema.get("const") {
        if c != v {
            errs.push(format!("{at}: expected {c}"));
        }
    }
    if let Some(x) = v.as_f64() {
        if schema.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            errs.push(format!("{at}: {x} below minimum"));
        }
        if schema.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            errs.push(format!("{at}: {x} above maximum"));
        }
    }
    if let Some(obj) = v.as_object() {
        for r in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let r = r.as_str().unwrap();
            if !obj.contains_key(r) {
                errs.push(format!("{at}: missing `{r}`"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, val) in obj {
            let path = format!("{at}.{k}");
            match (props.and_then(|p| p.get(k)), schema.get("additionalProperties")) {
                (Some(sub), _) => schema_errors(sub, val, &path, errs),
                (None, Some(Value::Bool(false))) => errs.push(format!("{path}: not allowed")),
                (None, Some(sub @ Value::Object(_))) => schema_errors(sub, val, &path, errs),
                _ => {}
            }
        }
    }
    if let (Some(arr), Some(items)) = (v.as_array(), schema.get("items")) {
        for (i, item) in arr.iter().enumerate() {
            schema_errors(items, item, &format!("{at}[{i}]"), errs);
        }
    }
}

fn schema() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/eval_report.schema.json");
    read_json(&p)
}

#[test]
fn validator_rejects_malformed_reports() {
    let schema = schema();
    let bad = serde_json::json!({
        "format": "envsound-eval/1", "accuracy": 1.5, "n_samples": 2,
        "class_names": ["a"], "per_class_accuracy": {"a": "x"},
        "confusion": [[1, -1]], "extra": 0
    });
    let mut errs = Vec::new();
    schema_errors(&schema, &bad, "$", &mut errs);
    assert_eq!(errs.len(), 5, "{errs:?}");
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let fx = Fixture::new();
    let out = fx.out("run");
    let o = s(&out);
    for kind in ["waveform", "spectrogram"] {
        ok(&["pretrain", "--config", fx.cfg(), "--output", o, "--input", kind]);
        let ckpt = out.join(format!("encoder-{kind}.ckpt"));
        ok(&["extract", "--config", fx.cfg(), "--output", o, "--checkpoint", s(&ckpt), "--input", kind]);
        let (rows, cols, _) = read_matrix(&out.join(format!("features-{kind}.mat"))).unwrap();
        assert_eq!((rows, cols), (40, 16), "one row per clip, last-layer width columns");
        let m = read_json(&out.join(format!("pretrain-{kind}.manifest.json")));
        assert_eq!(m["status"], "complete");
        assert_eq!(m["steps_completed"], 3);
        assert_eq!(m["seed"], 5);
        assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    }
    let (wf, sf) = (out.join("features-waveform.mat"), out.join("features-spectrogram.mat"));
    ok(&["fuse", "--config", fx.cfg(), "--output", o, "--waveform", s(&wf), "--spectrogram", s(&sf)]);
    let report = read_json(&out.join("cca-report.json"));
    let lambdas: Vec<f64> = report["correlations"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(report["d"].as_u64().unwrap() as usize, lambdas.len());
    assert!(lambdas.windows(2).all(|w| w[0] >= w[1]));
    assert!(report["ridge_r"].as_f64().unwrap() > 0.0);

    let fused = out.join("features-fused.mat");
    ok(&["probe", "--config", fx.cfg(), "--output", o, "--features", s(&fused)]);
    let probe = out.join("probe-features-fused.json");
    let stdout = ok(&["eval", "--config", fx.cfg(), "--output", o, "--features", s(&fused), "--probe", s(&probe)]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("accuracy"));
    let report = read_json(&out.join("eval-features-fused.json"));
    let mut errs = Vec::new();
    schema_errors(&schema(), &report, "$", &mut errs);
    assert!(errs.is_empty(), "{errs:?}");
    assert_eq!(report["n_samples"], 8, "fold 5 holds two clips per class");
    let csv = std::fs::read_to_string(out.join("eval-features-fused.confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let fx = Fixture::new();
    let out = fx.out("zero");
    ok(&["pretrain", "--config", fx.cfg(), "--output", s(&out), "--input", "waveform", "--steps", "0", "--seed", "9"]);
    let (model, _) = EncoderModel::from_container(&Container::read(&out.join("encoder-waveform.ckpt")).unwrap()).unwrap();
    let init = init_encoder(&model.config, 9).unwrap();
    assert_eq!(model, init);
    let m = read_json(&out.join("pretrain-waveform.manifest.json"));
    assert_eq!(m["steps_completed"], 0);
    assert_eq!(std::fs::read_to_string(out.join("loss-waveform.csv")).unwrap(), "step,loss\n");
}

#[test]
fn same_seed_gives_identical_loss_and_features() {
    let fx = Fixture::new();
    let outs = [fx.out("a"), fx.out("b")];
    for o in &outs {
        ok(&["pretrain", "--config", fx.cfg(), "--output", s(o), "--input", "spectrogram"]);
        let ckpt = o.join("encoder-spectrogram.ckpt");
        ok(&["extract", "--config", fx.cfg(), "--output", s(o), "--checkpoint", s(&ckpt)]);
    }
    for f in ["loss-spectrogram.csv", "features-spectrogram.mat", "features-spectrogram.ids.csv", "encoder-spectrogram.ckpt"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replaying_a_run_manifest_reproduces_the_loss() {
    let fx = Fixture::new();
    let first = fx.out("first");
    ok(&["pretrain", "--config", fx.cfg(), "--output", s(&first), "--input", "spectrogram", "--seed", "21", "--steps", "2"]);
    let manifest = first.join("pretrain-spectrogram.manifest.json");
    let again = fx.out("again");
    ok(&["pretrain", "--config", s(&manifest), "--output", s(&again), "--input", "spectrogram"]);
    let a = std::fs::read(first.join("loss-spectrogram.csv")).unwrap();
    assert_eq!(a, std::fs::read(again.join("loss-spectrogram.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);
}

#[test]
fn extract_rejects_a_checkpoint_of_the_other_kind() {
    let fx = Fixture::new();
    let out = fx.out("kind");
    ok(&["pretrain", "--config", fx.cfg(), "--output", s(&out), "--input", "waveform", "--steps", "0"]);
    let ckpt = out.join("encoder-waveform.ckpt");
    let r = run(&["extract", "--config", fx.cfg(), "--output", s(&out), "--checkpoint", s(&ckpt), "--input", "spectrogram"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error[config]"));
}

fn records(n: usize, classes: usize) -> Vec<SampleRecord> {
    (0..n)
        .map(|i| SampleRecord {
            sample_id: format!("clip{i:04}"),
            label: format!("c{}", i % classes),
            fold: 1 + (i / classes) as u32 % 5,
        })
        .collect()
}

fn write_features(stem: &Path, rows: Vec<Vec<f64>>, recs: &[SampleRecord]) -> PathBuf {
    let fm = FeatureMatrix::from_rows(rows, recs.iter().map(|r| r.sample_id.clone()).collect()).unwrap();
    save_features(stem, &fm, recs).unwrap();
    stem.with_extension("mat")
}

fn probe_and_eval(dir: &Path, features: &Path) -> Value {
    let o = s(dir);
    ok(&["probe", "--output", o, "--test-folds", "5", "--features", s(features)]);
    let name = features.file_stem().unwrap().to_str().unwrap();
    let probe = dir.join(format!("probe-{name}.json"));
    ok(&["eval", "--output", o, "--test-folds", "5", "--features", s(features), "--probe", s(&probe)]);
    read_json(&dir.join(format!("eval-{name}.json")))
}

#[test]
fn one_hot_features_are_classified_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(100, 4);
    let rows = recs
        .iter()
        .enumerate()
        .map(|(i, _)| (0..4).map(|c| f64::from(u8::from(c == i % 4))).collect())
        .collect();
    let f = write_features(&dir.path().join("onehot"), rows, &recs);
    let report = probe_and_eval(dir.path(), &f);
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["n_samples"], 20);
}

#[test]
fn shuffled_labels_score_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let classes = 4;
    let n = 4000;
    let mut recs = records(n, classes);
    // Features encode the original label; the ids file gets a permutation of it.
    let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..classes).map(|c| f64::from(u8::from(c == i % classes))).collect()).collect();
    let mut labels: Vec<String> = recs.iter().map(|r| r.label.clone()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    for (r, l) in recs.iter_mut().zip(labels) {
        r.label = l;
    }
    let f = write_features(&dir.path().join("shuffled"), rows, &recs);
    let report = probe_and_eval(dir.path(), &f);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc}");
}

#[test]
fn fuse_names_the_first_misaligned_row() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(30, 3);
    let mut other = recs.clone();
    other.swap(7, 8);
    let rows = |n: usize| (0..n).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
    let a = write_features(&dir.path().join("a"), rows(30), &recs);
    let b = write_features(&dir.path().join("b"), rows(30), &other);
    let r = run(&["fuse", "--output", s(dir.path()), "--waveform", s(&a), "--spectrogram", s(&b)]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.starts_with("error[alignment]"), "{err}");
    assert!(err.contains("row 7") && err.contains("clip0007"), "{err}");
    let m = read_json(&dir.path().join("fuse.manifest.json"));
    assert_eq!(m["status"], "partial");
}

#[test]
fn fusing_a_branch_with_itself_reports_unit_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let recs = records(60, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = (0..60).map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).collect();
    let a = write_features(&dir.path().join("same"), rows, &recs);
    ok(&["fuse", "--output", s(dir.path()), "--waveform", s(&a), "--spectrogram", s(&a)]);
    let report = read_json(&dir.path().join("cca-report.json"));
    assert!((report["correlations"][0].as_f64().unwrap() - 1.0).abs() < 1e-4);
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[dataset]\nroot = \"/no/such/dir\"\nformat = \"flat-dirs\"\n[train]\nbatch_size = 1\ntemperature = 0.0\n").unwrap();
    let r = run(&["pretrain", "--config", s(&cfg), "--input", "waveform"]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.starts_with("error[config]"), "{err}");
    for field in ["dataset.root", "batch_size", "temperature", "output_dir"] {
        assert!(err.contains(field), "missing {field}: {err}");
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&["probe", "--output", s(dir.path()), "--features", s(&dir.path().join("nope.mat"))]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error[io]"));
}

#[test]
fn unknown_input_kind_is_rejected() {
    let r = run(&["pretrain", "--input", "video"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("video"));
}
