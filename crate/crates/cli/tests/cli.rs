use std::path::Path;
use std::process::Command;

fn lbpfc() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lbpfc"));
    c.env("RUST_LOG", "warn");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SHORT_RUN: &str = r#"
name = "short"
path = "circle"
duration = 1.0
high_level = "mpfc"
low_level = "lb-fblc"

[wind]
kind = "uncertain"
seed = 2
"#;

#[test]
fn run_writes_csv_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "short.toml", SHORT_RUN);
    let out = dir.path().join("out");
    let o = lbpfc().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["steps"], 100);
    assert_eq!(report["control_violations"], 0);

    let csv = std::fs::read_to_string(out.join("short.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,p_x,p_y,p_z,v_x,v_y,v_z,pd_x"));
    assert_eq!(csv.lines().count(), 101);
    assert!(out.join("short.metrics.json").exists());
}

#[test]
fn seed_override_changes_the_log_and_replays_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "short.toml", SHORT_RUN);
    let digest = |seed: &str| {
        let o = lbpfc().args(["run", "--config"]).arg(&cfg).args(["--seed", seed]).output().unwrap();
        assert!(o.status.success());
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["log_digest"].as_str().unwrap().to_string()
    };
    assert_eq!(digest("5"), digest("5"));
    assert_ne!(digest("5"), digest("6"));
}

#[test]
fn validate_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "short.toml", SHORT_RUN);
    let o = lbpfc().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("OK short"));
}

#[test]
fn sweep_prints_one_row_per_controller_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.toml",
        r#"
paths = ["circle"]

[base]
duration = 0.5

[[controllers]]
high_level = "mpfc"
low_level = "lb-fblc"

[[controllers]]
high_level = "carrot"
low_level = "lb-fblc"

[[conditions]]
wind = "calm"
label = "calm"

[[conditions]]
wind = "uncertain"
label = "windy"
seeds = [1, 2]
"#,
    );
    let out = dir.path().join("sweep");
    let o = lbpfc().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.contains("calm=") && stdout.contains("windy="));
    let reports: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("reports.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 6);
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "duration = -1.0\n");
    let o = lbpfc().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let missing = lbpfc().args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["table1.toml", "table2.toml", "table3.toml"] {
        let sweep = lbpfc_core::SweepConfig::load(&root.join(name)).unwrap();
        assert!(!sweep.expand().unwrap().is_empty(), "{name}");
    }
    lbpfc_core::ExperimentConfig::load(&root.join("circle.toml")).unwrap();
}
