use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflect-sod"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = bin(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(bin(&["--help"], d).status.code(), Some(0));
    assert_eq!(bin(&["frobnicate"], d).status.code(), Some(2));
    assert_eq!(bin(&["train", "--data", "missing", "--out", "o"], d).status.code(), Some(2));
    std::fs::write(d.join("bad.ckpt"), b"not a checkpoint").unwrap();
    std::fs::create_dir(d.join("imgs")).unwrap();
    std::fs::write(d.join("imgs/x.png"), b"").unwrap();
    assert_eq!(bin(&["predict", "--checkpoint", "bad.ckpt", "--images", "imgs", "--out", "p"], d).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-data", "--out", "ds", "--n", "2", "--size", "32"], d);
    let out = bin(&["train", "--data", "ds", "--out", "run", "--set", "train.bogus=1"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn train_help_lists_config_keys() {
    let out = bin(&["train", "--help"], Path::new("."));
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["train.base_lr", "loss.mu", "model.levels", "data.k"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-data", "--out", "ds", "--n", "4", "--val", "2", "--size", "32", "--seed", "3"], d);
    ok(
        &["train", "--data", "ds", "--out", "run", "--set", "train.max_steps=4", "--set", "train.eval_every=2",
          "--set", "model.input_size=[32, 32]"],
        d,
    );
    for f in ["config.toml", "train_log.csv", "eval_log.csv", "step_000002.ckpt", "final.ckpt"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    ok(&["predict", "--checkpoint", "run/final.ckpt", "--images", "ds/val/images", "--out", "p1"], d);
    ok(&["predict", "--checkpoint", "run/final.ckpt", "--images", "ds/val/images", "--out", "p2"], d);
    let stems: Vec<_> = std::fs::read_dir(d.join("p1")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(stems.len(), 2);
    for s in &stems {
        assert_eq!(std::fs::read(d.join("p1").join(s)).unwrap(), std::fs::read(d.join("p2").join(s)).unwrap());
    }

    ok(&["eval", "--pred", "ds/val/masks", "--gt", "ds/val/masks", "--out", "self"], d);
    let mut reader = csv::Reader::from_path(d.join("self/report.csv")).unwrap();
    for row in reader.deserialize::<(String, f64, f64, f64, f64)>() {
        let (name, fmax, _, mae, _) = row.unwrap();
        assert_eq!(fmax, 1.0, "{name}");
        assert_eq!(mae, 0.0, "{name}");
    }

    ok(&["eval", "--pred", "p1", "--gt", "ds/val/masks", "--out", "ev"], d);
    ok(&["plot-pr", "--input", "ev/pr_curve.csv", "--out", "plot"], d);
    let dat = std::fs::read_to_string(d.join("plot/pr_curve.dat")).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 256);
    assert!(std::fs::read_to_string(d.join("plot/pr_curve.svg")).unwrap().starts_with("<svg"));
}
