use std::path::Path;
use std::process::{Command, Output};

fn voltvar(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltvar"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn canonical_run_writes_full_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = voltvar(&["run"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("canonical_fo.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 126);
    assert!(csv.starts_with("time_s,v_true_bus0,"));
    assert!(dir.path().join("canonical_fo.svg").exists());
    let metrics = std::fs::read_to_string(dir.path().join("canonical_fo_metrics.txt")).unwrap();
    assert!(metrics.contains("time_to_feasibility_s            80"));
}

#[test]
fn identical_runs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "run",
        "--noise-std",
        "0.002",
        "--seed",
        "7",
        "--strategy",
        "fo",
    ];
    assert!(voltvar(&args, a.path()).status.success());
    assert!(voltvar(&args, b.path()).status.success());
    let read = |d: &Path| std::fs::read(d.join("canonical_fo.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn invalid_feeder_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let feeder = dir.path().join("broken.toml");
    std::fs::write(&feeder, "name = \"x\"\n[[bus]]\nid = \n").unwrap();
    let out_dir = dir.path().join("out");
    let out = voltvar(&["run", "--feeder", feeder.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
    assert!(!out_dir.exists());
}

#[test]
fn bad_overrides_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--alpha", "-1"][..],
        &["run", "--strategy", "pid"],
        &["run", "--x-source", "file:/nonexistent/x.csv"],
        &["sweep", "--param", "gain", "--values", "1"],
        &["sweep", "--param", "noise_stddev", "--values", "0,-1"],
        &["run", "--unknown-flag"],
    ] {
        let out = voltvar(args, &dir.path().join("out"));
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn plant_failure_exits_with_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("heavy.toml");
    let text = voltvar_core::sim::CANONICAL_SCENARIO_TOML.to_string()
        + "\n[[event]]\ntime_s = 1000.0\nkind = \"set_load\"\nbus = 1\np_kw = 5000.0\n";
    std::fs::write(&scenario, text).unwrap();
    let out = voltvar(
        &["run", "--scenario", scenario.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("canonical_fo.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 100 + 1);
    assert!(csv.lines().last().unwrap().contains("failed:"));
}

#[test]
fn compare_and_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = voltvar(&["compare"], dir.path());
    assert!(out.status.success());
    let table = std::fs::read_to_string(dir.path().join("compare.txt")).unwrap();
    for label in [
        "droop",
        "opf",
        "opf_impedance_x0.8",
        "fo_published_x",
        "fo_ones_x",
    ] {
        assert!(
            table.lines().any(|l| l.starts_with(&format!("{label} "))),
            "{label}"
        );
        assert!(dir.path().join(format!("compare_{label}.csv")).exists());
        assert!(dir.path().join(format!("compare_{label}.svg")).exists());
    }
    let droop = table.lines().find(|l| l.starts_with("droop ")).unwrap();
    assert!(droop.contains("never"));

    let out = voltvar(
        &["sweep", "--param", "noise_stddev", "--values", "0,0.001"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(dir.path().join("sweep_noise_stddev.txt").exists());
    // zero noise reproduces the plain run
    assert!(voltvar(&["run"], dir.path()).status.success());
    assert_eq!(
        std::fs::read(dir.path().join("sweep_noise_stddev_0.csv")).unwrap(),
        std::fs::read(dir.path().join("canonical_fo.csv")).unwrap()
    );
}
