use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jointvae_core::eval::raster::png_to_image;
use jointvae_core::model::{load_checkpoint, save_checkpoint, LatentSpec, Model, ModelConfig, TrainingState};
use jointvae_core::objective::ObjectiveMode;
use jointvae_core::train::{preset, ObjectiveKind, TrainConfig};
use jointvae_core::util::config_hash;
use serde_json::Value;

fn jointvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointvae"))
        .args(args)
        .env_remove("JOINTVAE_DATA_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_model(dir: &Path, name: &str, spec: LatentSpec, seed: u64) -> PathBuf {
    let model: Model<f32> = Model::build(ModelConfig::new([1, 32, 32], spec).unwrap(), seed).unwrap();
    let path = dir.join(name);
    let state = TrainingState {
        seed,
        ..Default::default()
    };
    save_checkpoint(&path, &model, &state).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(jointvae(&[]).status.code(), Some(2));
    let o = jointvae(&["train", "--dataset", "synth", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"), "{}", stderr(&o));
    let o = jointvae(&["train", "--dataset", "imagenet"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--dataset"));
    let o = jointvae(&["train", "--dataset", "synth", "--objective", "gan"]);
    assert_eq!(o.status.code(), Some(2));
    let o = jointvae(&["train", "--dataset", "synth", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--preset"), "{}", stderr(&o));
    let o = jointvae(&["train", "--dataset", "synth", "--preset", "dsprites"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--preset dsprites"), "{}", stderr(&o));
    assert_eq!(jointvae(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_1_naming_the_file() {
    let o = jointvae(&["traverse", "--ckpt", "/no/such/model.ckpt", "--steps", "5", "--out", "/tmp/x.png"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/model.ckpt"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"garbage").unwrap();
    let o = jointvae(&["rank", "--ckpt", s(&bad), "--data", "synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.ckpt"), "{}", stderr(&o));

    let ck = write_model(dir.path(), "m.ckpt", LatentSpec::new(3, vec![3]), 1);
    let o = jointvae(&["rank", "--ckpt", s(&ck), "--data", "mnist"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("JOINTVAE_DATA_DIR"), "{}", stderr(&o));
    let o = jointvae(&["rank", "--ckpt", s(&ck), "--data", "/no/such/dir"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--data"));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    for out in [&a, &b] {
        let o = jointvae(&["train", "--dataset", "synth", "--objective", "joint", "--seed", "1", "--epochs", "1", "--limit", "256", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        assert_eq!(v["iterations"], 4);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let log_a = std::fs::read_to_string(dir.path().join("a.ckpt.csv")).unwrap();
    assert_eq!(log_a, std::fs::read_to_string(dir.path().join("b.ckpt.csv")).unwrap());
    assert!(log_a.starts_with("iteration,recon,kl_z_total,kl_c_total"));

    let ck = load_checkpoint(&a).unwrap();
    assert_eq!(ck.state.seed, 1);
    assert_eq!(ck.model.latent_spec().discrete_dims, vec![3]);
}

#[test]
fn mnist_preset_resolves_published_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.ckpt");
    let o = jointvae(&["train", "--dataset", "synth", "--preset", "mnist", "--epochs", "1", "--limit", "64", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = load_checkpoint(&out).unwrap();
    let cfg: TrainConfig = serde_json::from_value(ck.state.metadata.clone()).unwrap();
    assert_eq!(cfg.learning_rate, 5e-4);
    assert_eq!(cfg.batch_size, 64);
    let ObjectiveMode::JointVae { schedule } = cfg.objective else { panic!("expected joint objective") };
    assert_eq!(schedule.gamma, 30.0);
    assert_eq!((schedule.cz_max, schedule.cz_ramp_iters), (5.0, 25_000));
    assert_eq!(cfg.model.latent_spec, LatentSpec::new(10, vec![10]));

    for (flag, kind) in [("vae", ObjectiveKind::Vae), ("beta", ObjectiveKind::Beta), ("ccbeta", ObjectiveKind::CcBeta)] {
        let out = dir.path().join(format!("{flag}.ckpt"));
        let o = jointvae(&["train", "--dataset", "synth", "--objective", flag, "--epochs", "1", "--limit", "64", "--out", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let cfg: TrainConfig = serde_json::from_value(load_checkpoint(&out).unwrap().state.metadata).unwrap();
        assert_eq!(cfg.objective, preset("synth").unwrap().objective(kind));
    }
}

#[test]
fn traverse_all_units_of_a_ten_plus_ten_model() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write_model(dir.path(), "m.ckpt", LatentSpec::new(10, vec![10]), 4);
    let png = dir.path().join("t.png");
    let o = jointvae(&["traverse", "--ckpt", s(&ck), "--steps", "10", "--out", s(&png)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("11 rows x 10 columns"), "{}", stdout(&o));
    let img = png_to_image(&std::fs::read(&png).unwrap(), 1).unwrap();
    assert_eq!(img.height, 11 * 32 + 10 * 2);
    assert_eq!(img.width, 10 * 32 + 9 * 2);
    let ckpt = load_checkpoint(&ck).unwrap();
    let hash = config_hash(ckpt.model.config());
    assert!(img.text.contains(&("config_hash".into(), hash)));
    assert!(img.text.contains(&("seed".into(), "4".into())));

    let one = dir.path().join("u.png");
    let o = jointvae(&["traverse", "--ckpt", s(&ck), "--unit", "3", "--steps", "5", "--out", s(&one)]);
    assert_eq!(o.status.code(), Some(0));
    let img = png_to_image(&std::fs::read(&one).unwrap(), 1).unwrap();
    assert_eq!((img.height, img.width), (32, 5 * 32 + 4 * 2));

    let o = jointvae(&["traverse", "--ckpt", s(&ck), "--unit", "11", "--steps", "5", "--out", s(&one)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--unit"));
    let o = jointvae(&["traverse", "--ckpt", s(&ck), "--steps", "1", "--out", s(&one)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--steps"));
}

#[test]
fn sample_fixes_categories() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write_model(dir.path(), "m.ckpt", LatentSpec::new(4, vec![3]), 2);
    let png = dir.path().join("s.png");
    let o = jointvae(&["sample", "--ckpt", s(&ck), "--fix-discrete", "2", "--count", "64", "--seed", "5", "--out", s(&png)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let img = png_to_image(&std::fs::read(&png).unwrap(), 1).unwrap();
    assert_eq!((img.height, img.width), (8 * 32 + 7 * 2, 8 * 32 + 7 * 2));
    assert!(img.text.contains(&("seed".into(), "5".into())));
    let again = dir.path().join("s2.png");
    jointvae(&["sample", "--ckpt", s(&ck), "--fix-discrete", "2", "--count", "64", "--seed", "5", "--out", s(&again)]);
    assert_eq!(std::fs::read(&png).unwrap(), std::fs::read(&again).unwrap());

    let o = jointvae(&["sample", "--ckpt", s(&ck), "--fix-discrete", "3", "--count", "4", "--out", s(&png)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--fix-discrete"));
    let o = jointvae(&["sample", "--ckpt", s(&ck), "--fix-discrete", "1,1", "--count", "4", "--out", s(&png)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analysis_commands_print_records() {
    let dir = tempfile::tempdir().unwrap();
    let ck = write_model(dir.path(), "m.ckpt", LatentSpec::new(4, vec![3]), 9);
    let hash = config_hash(load_checkpoint(&ck).unwrap().model.config());

    let o = jointvae(&["rank", "--ckpt", s(&ck), "--data", "synth", "--limit", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1 + 5 + 1, "{out}");
    assert!(out.contains("c0"));

    let o = jointvae(&["metric", "--ckpt", s(&ck), "--data", "synth", "--votes", "40", "--seed", "3", "--limit", "600"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["votes"], 40);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["batch_per_vote"], 64);
    assert_eq!(v["config_hash"], hash.as_str());
    assert!((0.0..=1.0).contains(&v["score"].as_f64().unwrap()));
    let o = jointvae(&["metric", "--ckpt", s(&ck), "--data", "synth", "--votes", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--votes"));

    let o = jointvae(&["accuracy", "--ckpt", s(&ck), "--data", "synth", "--factor", "shape", "--limit", "300"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["metric"], "cluster_accuracy");
    assert_eq!(v["seed"], 9);
    assert!(v["score"].as_f64().unwrap() >= 1.0 / 3.0 - 1e-9);
    let o = jointvae(&["accuracy", "--ckpt", s(&ck), "--data", "synth", "--factor", "colour"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--factor"));

    let two = write_model(dir.path(), "two.ckpt", LatentSpec::new(4, vec![3, 2]), 1);
    let o = jointvae(&["accuracy", "--ckpt", s(&two), "--data", "synth"]);
    assert_eq!(o.status.code(), Some(2));
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

#[test]
fn data_directory_sources() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    std::fs::create_dir(&mnist).unwrap();
    let n = 20u32;
    let pixels: Vec<u8> = (0..n * 28 * 28).map(|i| ((i * 37) % 256) as u8).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    std::fs::write(mnist.join("t10k-images-idx3-ubyte"), idx_bytes(0x803, &[n, 28, 28], &pixels)).unwrap();
    std::fs::write(mnist.join("t10k-labels-idx1-ubyte"), idx_bytes(0x801, &[n], &labels)).unwrap();
    let ck = write_model(dir.path(), "m.ckpt", LatentSpec::new(10, vec![10]), 1);

    let o = Command::new(env!("CARGO_BIN_EXE_jointvae"))
        .args(["accuracy", "--ckpt", s(&ck), "--data", "mnist"])
        .env("JOINTVAE_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["score"].as_f64().unwrap() >= 0.1);

    // the same directory passed as a path
    let o = jointvae(&["rank", "--ckpt", s(&ck), "--data", s(&mnist)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // training split is absent
    let o = Command::new(env!("CARGO_BIN_EXE_jointvae"))
        .args(["train", "--dataset", "mnist", "--epochs", "1"])
        .env("JOINTVAE_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train-images-idx3-ubyte"), "{}", stderr(&o));
}
