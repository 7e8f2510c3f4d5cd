use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "seeds = [0, 1]
objects_per_family = 1
heldout_per_family = 1
[detector]
pretrain_scenes = 6
pretrain_views = [0, 5]
pretrain = { epochs = 100, lr = 0.05, seed = 0 }
[finetune]
scenes = 3
views = [0, 5]
epochs = 100
";

fn eta(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_eta"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = eta(dir, args);
    assert!(
        out.status.success(),
        "eta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn every_subcommand_runs() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();

    let text = ok(dir, &["pretrain", "-c", "tiny.toml", "-o", "det.json"]);
    assert!(text.contains("saved det.json"));
    let text = ok(
        dir,
        &["eval", "-c", "tiny.toml", "--checkpoint", "det.json"],
    );
    assert!(text.contains("held-out top-candidate accuracy"));

    let text = ok(
        dir,
        &["run", "-c", "tiny.toml", "--seed", "7", "-m", "baseline"],
    );
    assert_eq!(text.lines().filter(|l| l.starts_with("seed 7 ")).count(), 3);

    ok(dir, &["bench", "-c", "tiny.toml", "-o", "res"]);
    for f in ["episodes.csv", "traces.csv", "summary.json", "config.toml"] {
        assert!(dir.join("res").join(f).is_file(), "missing {f}");
    }
    let plot = ok(dir, &["plot-data", "--episodes", "res/episodes.csv"]);
    assert!(plot.starts_with("family,method,episodes,successes,accuracy,mean_ee"));
    assert_eq!(plot.lines().count(), 1 + 3 * 4);

    ok(
        dir,
        &[
            "sweep-eps",
            "-c",
            "tiny.toml",
            "--seed",
            "0",
            "--values",
            "3,5",
            "-o",
            "sw",
        ],
    );
    let sweep = fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 4);
    assert!(dir.join("sw/eps_3/episodes.csv").is_file());
}

#[test]
fn reruns_write_identical_files() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(dir, &["bench", "-c", "tiny.toml", "--seed", "3", "-o", "a"]);
    ok(dir, &["bench", "-c", "tiny.toml", "--seed", "3", "-o", "b"]);
    for f in ["episodes.csv", "traces.csv", "summary.json"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn bad_input_is_reported() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    fs::write(dir.join("bad.toml"), "seedz = [1]\n").unwrap();
    let out = eta(dir, &["bench", "-c", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seedz"));
    assert!(!eta(dir, &["run", "-m", "nope"]).status.success());
    assert!(!eta(dir, &["eval", "--checkpoint", "missing.json"])
        .status
        .success());
}
