use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use num_complex::Complex32;

use demnet::data::{write_dem, write_slc, DatasetManifest, DemImage, SlcImage, SourceEntry, WindowSpec};
use demnet::model::{save_checkpoint, Activation, Checkpoint, LayerDef, LayerKind, CHECKPOINT_VERSION};
use demnet::ops::{ConvSpec, Padding};
use demnet::{AdamConfig, AdamState, Architecture, ModelParams, Tensor};

fn demnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demnet")).args(args).output().expect("running the demnet binary")
}

fn ok(args: &[&str]) -> String {
    let out = demnet(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_ingest_train_eval_predict_profile() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["generate", "--pairs", "3", "--seed", "7", "--out", p(&data)]);
    for i in 0..3 {
        assert!(data.join(format!("pair_{i:03}.slc.sart")).is_file());
        assert!(data.join(format!("pair_{i:03}.dem.sart")).is_file());
    }
    let manifest = data.join("manifest.jsonl");
    let stdout = ok(&["ingest", "--sources", p(&manifest), "--seed", "1"]);
    assert!(stdout.contains("2 train, 1 test"), "{stdout}");

    ok(&["train", "--manifest", p(&manifest), "--out", p(&run), "--epochs", "2", "--seed", "3"]);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_rmse,test_rmse,wall_time");
    assert_eq!(lines.len(), 3);
    assert!(run.join("model.ckpt").is_file());
    assert!(run.join("train_config.json").is_file());

    let ckpt = run.join("model.ckpt");
    let stdout = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(&run)]);
    assert!(stdout.starts_with("images=1 mean_rmse_m="), "{stdout}");
    assert_eq!(fs::read_to_string(run.join("eval_per_image.csv")).unwrap().lines().count(), 2);

    let slc = data.join("pair_000.slc.sart");
    let stdout =
        ok(&["predict", "--checkpoint", p(&ckpt), "--slc", p(&slc), "--out", p(&run), "--preview", "--repeats", "2"]);
    assert!(stdout.contains("forward_ms_median="), "{stdout}");
    let pred = run.join("prediction.dem.sart");
    let dem = demnet::data::read_dem(&pred).unwrap();
    assert_eq!((dem.rows, dem.cols), (140, 140));
    assert!(run.join("prediction.png").is_file());

    // repeated inference is bit-identical
    let first = fs::read(&pred).unwrap();
    ok(&["predict", "--checkpoint", p(&ckpt), "--slc", p(&slc), "--out", p(&run), "--repeats", "1"]);
    assert_eq!(fs::read(&pred).unwrap(), first);

    ok(&["profile", "--dem", p(&pred), "--range", "30", "--out", p(&run)]);
    let profile = fs::read_to_string(run.join("profile.csv")).unwrap();
    assert_eq!(profile.lines().next(), Some("range,azimuth,elevation_m"));
    assert_eq!(profile.lines().skip(1).count(), 140);
    assert!(profile.lines().skip(1).all(|l| l.starts_with("30,")));
}

/// Flat tiles and a one-layer network whose bias is the terrain height.
#[test]
fn eval_of_exact_model_reports_zero() {
    const HEIGHT: f32 = 250.0;
    let dir = tempfile::tempdir().unwrap();
    let n = 140;
    let slc =
        SlcImage::new(n, n, (0..n * n).map(|i| Complex32::new(1.0 + (i % 7) as f32, (i % 3) as f32 - 1.0)).collect())
            .unwrap();
    let mut sources = Vec::new();
    for id in 0..4 {
        let (s, d) = (format!("t{id}.slc.sart"), format!("t{id}.dem.sart"));
        write_slc(&dir.path().join(&s), &slc).unwrap();
        write_dem(&dir.path().join(&d), &DemImage::new(n, n, vec![HEIGHT; n * n]).unwrap()).unwrap();
        sources.push(SourceEntry { id, slc: s.into(), dem: d.into() });
    }
    let manifest = dir.path().join("manifest.jsonl");
    DatasetManifest::sources_only(sources, WindowSpec { window: n, step: n, target: n }).write(&manifest).unwrap();
    ok(&["ingest", "--sources", p(&manifest)]);

    let layer = LayerDef {
        name: "Out".into(),
        kind: LayerKind::Conv { spec: ConvSpec::new(1, 2, 1, Padding::Same) },
        activation: Activation::Linear,
    };
    let arch = Architecture::new([n, n, 2], vec![layer]).unwrap();
    let mut params = ModelParams::<f32>::zeros(&arch);
    *params.get_mut("Out.bias").unwrap() = Tensor::full(&[1], HEIGHT).unwrap();
    let ckpt = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        optimizer: AdamState::new(AdamConfig::default(), &params.tensors),
        arch,
        params,
        norm_stats: None,
        config_digest: [0; 32],
        epoch: 0,
    };
    let ckpt_path = dir.path().join("exact.ckpt");
    save_checkpoint(&ckpt, &ckpt_path).unwrap();

    for split in ["test", "train"] {
        let stdout = ok(&[
            "eval",
            "--checkpoint",
            p(&ckpt_path),
            "--manifest",
            p(&manifest),
            "--out",
            p(dir.path()),
            "--split",
            split,
        ]);
        assert!(stdout.trim_end().ends_with("mean_rmse_m=0.0"), "{stdout}");
    }
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("demnet.toml");
    let data = dir.path().join("data");
    fs::write(
        &cfg,
        format!("[generate]\npairs = 2\nseed = 5\nout = {:?}\n[generate.terrain]\nelevation_max = 50.0\n", p(&data)),
    )
    .unwrap();
    ok(&["--config", p(&cfg), "generate", "--pairs", "1"]);
    assert!(data.join("pair_000.dem.sart").is_file());
    assert!(!data.join("pair_001.dem.sart").exists());
    let dem = demnet::data::read_dem(&data.join("pair_000.dem.sart")).unwrap();
    let max = dem.data.iter().cloned().fold(f32::MIN, f32::max);
    assert_eq!(max, 50.0);
    let logged = fs::read_to_string(data.join("generate_config.json")).unwrap();
    assert!(logged.contains("\"pairs\": 1"), "{logged}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(demnet(&["train", "--epochs", "many"]).status.code(), Some(2));
    assert_eq!(demnet(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = demnet(&["profile", "--dem", p(&dir.path().join("missing.sart")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let last = stderr.lines().last().unwrap();
    assert!(last.starts_with("error kind=io message=\""), "{stderr}");

    let bogus = dir.path().join("bogus.sart");
    fs::write(&bogus, b"NOPE\x01\x00\x00\x00").unwrap();
    let out = demnet(&["profile", "--dem", p(&bogus), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error kind=bad_magic"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = demnet(&["--config", p(&cfg), "train", "--manifest", "m", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("learning_rate"));
}
