use std::fs;
use std::path::Path;
use std::process::Command;

use tempfile::tempdir;

const SMALL_STAR: &str = r#"{
  "name": "small_star",
  "graph": {
    "bonds": [
      { "id": 1, "alpha": 3.7796447300922718, "length": 15.0, "origin": -15.0, "a": "open", "b": { "vertex": 0 } },
      { "id": 2, "alpha": 4.47213595499958, "length": 12.0, "a": { "vertex": 0 }, "b": "open" },
      { "id": 3, "alpha": 7.0710678118654755, "length": 12.0, "a": { "vertex": 0 }, "b": "open" }
    ]
  },
  "simulation": { "dx": 0.05, "dt": 0.002, "t_end": 0.4, "series_interval": 0.1, "snapshot_times": [0.2] },
  "packet": { "bond": 1, "x0": -5.0, "k0": 5.0, "sigma": 1.0 },
  "measurement": { "incoming_bond": 1, "time": 0.3 },
  "transparency_checks": [{ "vertex": 0, "incoming": 1 }]
}"#;

fn qgraph(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qgraph")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_series_snapshots_and_manifest() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "star.json", SMALL_STAR);
    let out = tmp.path().join("out");
    let o = qgraph(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let series = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let lines: Vec<&str> = series.lines().collect();
    assert_eq!(lines[0], "t,N1,N2,N3,Ntotal,R");
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[1].starts_with("0.0,"));

    let snap = fs::read_to_string(out.join("snapshot_000.csv")).unwrap();
    let mut snap_lines = snap.lines();
    assert_eq!(snap_lines.next(), Some("bond,x,re,im,abs2"));
    assert_eq!(snap_lines.count(), 301 + 241 + 241);

    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert_eq!(m["steps"], 200);
    assert_eq!(m["config"]["name"], "small_star");
    assert!((m["measurement"]["t"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!(m["transparency_checks"][0]["sum_rule_residual"].as_f64().unwrap() < 1e-12);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(m["snapshots"][0]["t"].as_f64(), Some(0.2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "star.json", SMALL_STAR);
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let o = qgraph(&["run", "--config", &config, "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
    }
    for file in ["timeseries.csv", "snapshot_000.csv"] {
        assert_eq!(fs::read(dirs[0].join(file)).unwrap(), fs::read(dirs[1].join(file)).unwrap());
    }
}

#[test]
fn measure_time_flag_overrides_config() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "star.json", SMALL_STAR);
    let out = tmp.path().join("out");
    let o = qgraph(&["--measure-time", "0.1", "run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!((manifest(&out)["measurement"]["t"].as_f64().unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn invalid_config_exits_with_2() {
    let tmp = tempdir().unwrap();
    let bad = SMALL_STAR.replacen("3.7796447300922718", "-1.0", 1);
    let config = write_config(tmp.path(), "bad.json", &bad);
    let o = qgraph(&["run", "--config", &config, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonpositive alpha on bond 1"));

    let unknown = SMALL_STAR.replacen("\"sigma\": 1.0", "\"sigma\": 1.0, \"phase\": 0.0", 1);
    let config = write_config(tmp.path(), "unknown.json", &unknown);
    let o = qgraph(&["run", "--config", &config, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn support_guard_exits_with_3_and_records_reason() {
    let tmp = tempdir().unwrap();
    let touching = SMALL_STAR.replacen("\"x0\": -5.0", "\"x0\": -12.0", 1);
    let config = write_config(tmp.path(), "touch.json", &touching);
    let out = tmp.path().join("out");
    let o = qgraph(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let m = manifest(&out);
    assert_eq!(m["status"], "guard_violation");
    assert!(m["reason"].as_str().unwrap().contains("not supported inside the domain"));
    assert!(m["warnings"][0].as_str().unwrap().contains("not negligible"));
    assert!(!out.join("timeseries.csv").exists());
}

#[test]
fn sweep_with_two_steps_runs_twice() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "star.json", SMALL_STAR);
    let out = tmp.path().join("sweep");
    let o = qgraph(&[
        "--measure-time", "0.3", "sweep", "--config", &config, "--param", "bond.1.alpha",
        "--min", "1", "--max", "3.7796447300922718", "--steps", "2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "alpha1,R");
    assert!(lines[1].starts_with("1.0,"));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["table"]["argmin"], 1);
}

#[test]
fn sweep_marks_failed_points() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "star.json", SMALL_STAR);
    let out = tmp.path().join("sweep");
    let o = qgraph(&[
        "--measure-time", "0.1", "sweep", "--config", &config, "--param", "bond.2.alpha",
        "--min", "-1", "--max", "1", "--steps", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "-1.0,NaN");
    assert_eq!(lines[2], "0.0,NaN");
    assert!(!lines[3].ends_with("NaN"));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep_manifest.json")).unwrap()).unwrap();
    assert!(m["table"]["rows"][0]["error"].as_str().unwrap().contains("nonpositive alpha"));
    assert_eq!(m["table"]["argmin"], 2);
}

#[test]
fn bad_sweep_spec_exits_with_2() {
    let tmp = tempdir().unwrap();
    let config = write_config(tmp.path(), "star.json", SMALL_STAR);
    let o = qgraph(&[
        "sweep", "--config", &config, "--param", "bond.1.colour", "--min", "1", "--max", "2", "--steps", "1",
        "--out", tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
