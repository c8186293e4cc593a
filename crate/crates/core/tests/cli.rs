use std::path::Path;
use std::process::{Command, Output};

fn gags(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gags"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GAGS_CONFIG")
        .env_remove("GAGS_OUT")
        .env_remove("GAGS_SEED")
        .env_remove("GAGS_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = gags(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-scene", "render", "prompt", "segment", "distill", "query", "eval"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gags(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(gags(&["render"], dir.path()).status.code(), Some(2));
    assert_eq!(gags(&["render", "--config", "c.json", "--threads", "many"], dir.path()).status.code(), Some(2));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{ "schema_version": 1, "scene_dir": "s", "out_dir": "o", "colour": true }"#);
    let out = gags(&["render", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    write(dir.path(), "p.json", r#"{ "schema_version": 1, "scene_dir": "s", "out_dir": "o" }"#);
    assert_eq!(gags(&["prompt", "--config", "p.json"], dir.path()).status.code(), Some(2), "seed is required");
    assert_eq!(gags(&["render", "--config", "missing.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{ "schema_version": 1, "scene_dir": "nowhere", "out_dir": "o" }"#);
    let out = gags(&["render", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn environment_supplies_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{ "schema_version": 1, "scene_dir": "nowhere", "out_dir": "o" }"#);
    let out = Command::new(env!("CARGO_BIN_EXE_gags"))
        .arg("render")
        .env("GAGS_CONFIG", dir.path().join("c.json"))
        .output()
        .unwrap();
    // reaches the data stage, so the config was found
    assert_eq!(out.status.code(), Some(3));
}
