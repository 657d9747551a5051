use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warehouse-twin")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = bin(args, cwd);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&["run", "--duration", "400", "--seed", "3", "--out", out], tmp.path());
    }
    let a = read_all(&tmp.path().join("a"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["events.jsonl", "histogram.csv", "metrics.csv", "summary.txt"]);
    assert_eq!(a, read_all(&tmp.path().join("b")));
    let metrics = String::from_utf8(a[2].1.clone()).unwrap();
    assert_eq!(metrics.lines().count(), 4001);
}

#[test]
fn missing_scenario_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["run", "--scenario", "missing.scn", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn bad_flag_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--duration", "-5", "--out", "o"][..],
        &["run", "--y", "0.1", "--out", "o"],
        &["sweep", "--replications", "0", "--out", "o"],
        &["two-phase", "--seeds", "1", "--warmup", "4000", "--out", "o"],
    ] {
        let o = bin(args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn validate_reports_good_and_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["validate"], tmp.path());
    assert!(out.contains("scenario ok") && out.contains("goal model ok"), "{out}");

    fs::write(tmp.path().join("bad.toml"), "version = 1\n[[node]]\nid = \"a\"\nkind = \"nonsense\"\n").unwrap();
    let o = bin(&["validate", "--goal", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("goal model"));
}

#[test]
fn config_file_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "duration = 50.0\nout = \"from_cfg\"\n").unwrap();
    ok(&["run", "--config", "cfg.toml", "--duration", "400", "--out", "from_flag"], tmp.path());
    assert!(!tmp.path().join("from_flag").exists());
    let m = fs::read_to_string(tmp.path().join("from_cfg/metrics.csv")).unwrap();
    assert_eq!(m.lines().count(), 501);

    fs::write(tmp.path().join("typo.toml"), "durration = 50.0\n").unwrap();
    assert_eq!(bin(&["run", "--config", "typo.toml"], tmp.path()).status.code(), Some(2));
}

#[test]
fn short_two_phase_run() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["two-phase", "--seeds", "1,2", "--phase-duration", "900", "--warmup", "100", "--tail", "5"];
    let out = ok(&[&args[..], &["--out", "a"]].concat(), tmp.path());
    assert!(out.contains("slope across seeds"), "{out}");
    ok(&[&args[..], &["--out", "b"]].concat(), tmp.path());
    assert_eq!(read_all(&tmp.path().join("a")), read_all(&tmp.path().join("b")));

    let summary = fs::read_to_string(tmp.path().join("a/summary.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(summary.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let ratio: f64 = r[4].parse().unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }
    let hist = fs::read_to_string(tmp.path().join("a/histogram_phase2.csv")).unwrap();
    assert_eq!(hist.lines().count(), 21);
}

#[test]
fn single_candidate_sweep_is_its_own_front() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        &[
            "sweep", "--candidates", "3", "--snapshot-times", "400,1200", "--horizon", "60", "--replications", "2",
            "--out", "s",
        ],
        tmp.path(),
    );
    assert!(out.contains("snapshot 2"));
    let sweep = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(sweep.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(&r[3], "3");
        assert_eq!(&r[9], "true");
    }
}
