use std::path::Path;
use std::process::{Command, Output};

use vanroos::config::bundled;
use vanroos::output::read_snapshot_csv;

fn vanroos(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vanroos"));
    cmd.args(args).arg("--output-dir").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("spawn vanroos")
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vanroos(&["run"], None, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--config"), "{stderr}");
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn run_diode_writes_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "diode.toml", bundled::DIODE);
    let out_dir = tmp.path().join("out");
    let out = vanroos(&["run", "--quiet"], Some(&config), &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = out_dir.join("snapshot_000000.csv");
    let rows = read_snapshot_csv(&first).unwrap();
    assert_eq!(rows.len(), 64);
}

#[test]
fn sneiberg_golden_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "golden.toml", bundled::SNEIBERG_GOLDEN);
    let out = vanroos(&["sneiberg"], Some(&config), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    for n in [64, 128, 256] {
        let text = std::fs::read_to_string(tmp.path().join(format!("sneiberg_n{n}.txt"))).unwrap();
        assert!(text.contains("Pass"), "{text}");
        let csv = std::fs::read_to_string(tmp.path().join(format!("sneiberg_n{n}.csv"))).unwrap();
        assert!(csv.starts_with("s,sigma_min,sigma_max,in_predicted_interval"));
        assert_eq!(csv.lines().count(), 42);
    }
}

#[test]
fn blowup_run_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "blowup.toml", bundled::BLOWUP);
    let out = vanroos(&["run", "--quiet"], Some(&config), &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "bad.toml", "[mesh]\ndimension = 1\n");
    let out = vanroos(&["run"], Some(&config), tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn unreadable_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vanroos(&["steady"], Some(&tmp.path().join("absent.toml")), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn equilibrium_and_steady_write_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "diode.toml", bundled::DIODE);
    for (cmd, file) in [("equilibrium", "equilibrium.csv"), ("steady", "steady.csv")] {
        let out = vanroos(&[cmd, "--quiet"], Some(&config), tmp.path());
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(read_snapshot_csv(&tmp.path().join(file)).unwrap().len(), 64);
    }
}

#[test]
fn t_end_override_is_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "diode.toml", bundled::DIODE);
    let out = vanroos(&["run", "--t-end", "0.05"], Some(&config), tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("t = 0.05"));
}

#[test]
fn verify_stays_inside_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("verify");
    let out = Command::new(env!("CARGO_BIN_EXE_vanroos"))
        .current_dir(tmp.path())
        .args(["verify", "--output-dir"])
        .arg(&out_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).count(), 12);
    assert_eq!(out.status.code(), Some(if stdout.contains("[FAIL]") { 1 } else { 0 }));
    let entries: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("verify")]);
}
