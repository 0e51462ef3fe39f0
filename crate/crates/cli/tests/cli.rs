use std::path::Path;
use std::process::{Command, Output};

fn goskit(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_goskit"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("GOSKIT_SEED")
        .output()
        .expect("spawn goskit");
    assert!(out.status.success(), "goskit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn generate_masks_train_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), "[train]\nseed = 3\n[train.optimizer]\nmax_grad_norm = 1.0\n").unwrap();
    goskit(&["--config", "run.toml", "generate", "--out", "data", "--train-size", "2", "--test-size", "1"], dir);
    assert!(dir.join("data/scene_config.json").exists());
    goskit(&["masks", "--data", "data"], dir);
    assert!(dir.join("data/supervision/train.json").exists());
    let out = goskit(&["--config", "run.toml", "train", "--data", "data", "--out", "ckpt", "--steps", "2", "--batch", "1"], dir);
    let sidecar = String::from_utf8(out.stdout).unwrap().trim().to_string();
    assert!(sidecar.ends_with("final.json"), "{sidecar}");
    assert!(dir.join("ckpt/final.bin").exists() && dir.join("ckpt/history.json").exists());
    let history: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("ckpt/history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 2);

    for mode in ["non_real", "real"] {
        goskit(&["eval", "--checkpoint", &sidecar, "--data", "data", "--mode", mode, "--out", "eval", "--overlays", "1"], dir);
        assert!(dir.join(format!("eval/eval_{mode}.json")).exists());
        let overlays: Vec<_> = std::fs::read_dir(dir.join("eval/overlays"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with(&format!("{mode}_")) && n.ends_with(".png"))
            .collect();
        assert_eq!(overlays.len(), 1, "{overlays:?}");
    }
    let out = goskit(&["report", "eval/eval_non_real.json", "eval/eval_real.json", "--out", "report.md"], dir);
    let md = String::from_utf8(out.stdout).unwrap();
    assert!(md.contains("non_real") && md.contains("real"));
    assert!(dir.join("report.md").exists());
}

#[test]
fn seed_from_environment_changes_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let run = |seed: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_goskit"))
            .args(["generate", "--out", out, "--train-size", "1", "--test-size", "1"])
            .current_dir(dir)
            .env("GOSKIT_SEED", seed)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(dir.join(out).join("scene_config.json")).unwrap()
    };
    let a = run("5", "a");
    let b = run("6", "b");
    assert!(a.contains("\"seed\": 5") && b.contains("\"seed\": 6"));
}

#[test]
fn gradcheck_subset_and_bad_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = goskit(&["gradcheck", "--components", "dual_fusion,gaze_cone", "--out", "g.json"], tmp.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.ends_with("pass")));
    let bad = Command::new(env!("CARGO_BIN_EXE_goskit"))
        .args(["gradcheck", "--components", "nonsense"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn train_without_masks_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    goskit(&["generate", "--out", "data", "--train-size", "1", "--test-size", "1"], dir);
    let out = Command::new(env!("CARGO_BIN_EXE_goskit"))
        .args(["train", "--data", "data", "--out", "ckpt", "--steps", "1"])
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("goskit masks"));
}
