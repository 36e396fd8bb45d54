use std::path::Path;
use std::process::{Command, Output};

fn argprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_argprobe")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("argprobe.toml");
    std::fs::write(
        &p,
        format!(
            "experiment = \"exp1\"\nbackends = [\"builtin:tiny-wordpiece\"]\nseeds = [0, 1]\noutput_dir = \"runs\"\n\
             [tuning]\nmax_epochs = 2\n[datasets]\nverbs = [\"spray\"]\nalternations = [\"TO\"]\n{extra}"
        ),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn dry_run_lists_filtered_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = argprobe(&["-c", &cfg, "tune", "--dry-run", "--run", "/1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("exp1/tiny-wordpiece/spray-TO/1"), "{text}");
    assert!(!text.contains("spray-TO/0"), "{text}");
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn seed_override_replaces_config_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = argprobe(&["-c", &cfg, "--seed", "7", "generate", "--dry-run"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("1 run(s)"), "{text}");
    assert!(text.contains("spray-TO/7"));
}

#[test]
fn verify_passes_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = argprobe(&["-c", &cfg, "verify", "--run", "/0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(tmp.path().join("runs/exp1/tiny-wordpiece/spray-TO/0/invariance.json").exists());
}

#[test]
fn invariance_gate_failure_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[datasets.novel]\ntheme = \"ray\"\n");
    let out = argprobe(&["-c", &cfg, "tune", "--run", "/0"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("GATE"), "{text}");
    assert!(!tmp.path().join("runs/exp1/tiny-wordpiece/spray-TO/0/tune.json").exists());
}

#[test]
fn bad_config_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "unknown_key = 1\n");
    let out = argprobe(&["-c", &cfg, "generate"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = tmp.path().join("absent.toml");
    assert_eq!(argprobe(&["-c", missing.to_str().unwrap(), "generate"]).status.code(), Some(2));
}
