use std::path::Path;
use std::process::{Command, Output};

fn hdet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdet"))
        .args(args)
        .env("HDET_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, seed: u64, name: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    let json = format!(
        r#"{{
  "name": "{name}",
  "objective": {{"kind": "quadratic", "curvatures": [1.0, 2.0, 4.0], "noise": 0.1}},
  "world_size": 4,
  "total_steps": 200,
  "sync_interval": 20,
  "alpha": 0.2,
  "seed": {seed},
  "one_cycle": {{"eta_max": 0.1}},
  "auto_lr": {{"warmup_steps": 40}}
}}"#
    );
    std::fs::write(&path, json).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_metrics_and_summary_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1, "small");
    let a = hdet(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("param_syncs=10"));
    let csv = std::fs::read(dir.path().join("small.csv")).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("small.summary")).unwrap();
    assert!(summary.contains("gradient_reductions=200"));
    assert!(csv.starts_with(b"step,rank,channel,value,loss,sync,controller,rank_loss,weight,delta,velocity,base\n"));

    let b = hdet(&["run", "--config", cfg.to_str().unwrap(), "--mode", "sequential"], dir.path());
    assert!(b.status.success());
    assert_eq!(std::fs::read(dir.path().join("small.csv")).unwrap(), csv);
}

#[test]
fn compare_reports_and_refuses_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_config(dir.path(), 1, "a");
    let b = small_config(dir.path(), 2, "b");
    for c in [&a, &b] {
        assert!(hdet(&["run", "--config", c.to_str().unwrap()], dir.path()).status.success());
    }
    let a_csv = dir.path().join("a.csv");
    let b_csv = dir.path().join("b.csv");

    let one = hdet(&["compare", a_csv.to_str().unwrap()], dir.path());
    assert!(!one.status.success());
    assert!(String::from_utf8_lossy(&one.stderr).contains("at least 2"));

    let same = hdet(&["compare", a_csv.to_str().unwrap(), a_csv.to_str().unwrap()], dir.path());
    assert!(same.status.success(), "{}", String::from_utf8_lossy(&same.stderr));
    let report = std::fs::read_to_string(dir.path().join("comparison.txt")).unwrap();
    assert!(report.contains("0.000000e0"), "{report}");
    assert!(dir.path().join("loss_curves.csv").exists());
    assert!(dir.path().join("lr_curves.csv").exists());

    let mixed = hdet(&["compare", a_csv.to_str().unwrap(), b_csv.to_str().unwrap()], dir.path());
    assert!(!mixed.status.success());
    assert!(String::from_utf8_lossy(&mixed.stderr).contains("not comparable"));
}

#[test]
fn presets_are_listed_and_unknown_names_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let list = stdout(&hdet(&["presets"], dir.path()));
    for name in ["baseline-low", "baseline-high", "warm-init", "hdet-no-autolr", "hdet-no-warm-init", "hdet-full"] {
        assert!(list.contains(name), "{list}");
    }
    let bad = hdet(&["run", "--preset", "nope"], dir.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown preset"));
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"total_steps": 105, "sync_interval": 10}"#).unwrap();
    let o = hdet(&["run", "--config", path.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("multiple of sync_interval"));
}
