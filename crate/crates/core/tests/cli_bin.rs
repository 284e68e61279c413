//! End-to-end tests of the `rrwalk` binary: exit codes, diagnostics, and
//! the on-disk result bundle.

use std::path::Path;
use std::process::{Command, Output};

fn rrwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrwalk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn list_prints_exactly_six_presets() {
    let out = rrwalk(&["list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 6, "catalog:\n{text}");
    for name in [
        "thm1-upper-linear",
        "thm2-upper-orrw",
        "thm3-lower-orrw",
        "eq13-lower-linear",
        "lemma21-tail",
        "speed-sanity",
    ] {
        assert!(text.contains(name), "missing preset {name} in:\n{text}");
    }
}

#[test]
fn missing_field_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.spec");
    std::fs::write(&spec, "kind = speed\nrule = linear\nc = 1\nhorizon = 100\nreplicas = 4\n")
        .unwrap();
    let out = rrwalk(&["run", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains('b'), "diagnostic must name the missing field: {err}");
    assert!(err.contains("missing"), "diagnostic: {err}");
}

#[test]
fn parse_error_exits_2_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.spec");
    std::fs::write(&spec, "kind = speed\nwat\n").unwrap();
    let out = rrwalk(&["run", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "diagnostic: {}", stderr(&out));
}

#[test]
fn unknown_spec_argument_exits_2() {
    let out = rrwalk(&["run", "not-a-preset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("preset"), "diagnostic: {}", stderr(&out));
}

#[test]
fn budget_overrun_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("huge.spec");
    std::fs::write(
        &spec,
        "kind = speed\nb = 2\nrule = linear\nc = 1\nhorizon = 1000000000\nreplicas = 1000000\n",
    )
    .unwrap();
    let out = rrwalk(&["run", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("budget"), "diagnostic: {}", stderr(&out));
}

#[test]
fn speed_sanity_preset_lands_on_the_simple_walk_speed() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bundle");
    let out = rrwalk(&["run", "speed-sanity", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let summary: serde_json::Value = read_json(&out_dir.join("summary.json"));
    let direct = summary["results"]["direct"]["estimate"].as_f64().unwrap();
    let ratio = summary["results"]["ratio"]["estimate"].as_f64().unwrap();
    assert!((direct - 1.0 / 3.0).abs() < 0.05, "direct speed {direct}");
    assert!((ratio - 1.0 / 3.0).abs() < 0.05, "ratio speed {ratio}");
    assert_eq!(summary["results"]["kind"], "speed");
    assert_eq!(summary["seed"], 1);
    assert!(summary["spec_hash"].as_str().unwrap().len() == 64);

    let csv = std::fs::read_to_string(out_dir.join("speed.csv")).unwrap();
    assert!(csv.starts_with("method,estimate,stderr,replicas,horizon,seed,spec_hash\n"));
    assert!(out_dir.join("timing.json").is_file());
}

#[test]
fn oracle_check_matches_the_exact_law_within_three_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("oracle.spec");
    // kind = speed on purpose: the oracle-check subcommand must coerce it.
    std::fs::write(
        &spec,
        "kind = speed\nb = 2\nrule = linear\nc = 2\nhorizon = 6\nn_grid = 6\nreplicas = 50000\nseed = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("bundle");
    let out = rrwalk(&[
        "oracle-check",
        spec.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let summary: serde_json::Value = read_json(&out_dir.join("summary.json"));
    assert_eq!(summary["results"]["kind"], "oracle-check");
    assert_eq!(summary["results"]["all_within"], true);

    let csv = std::fs::read_to_string(out_dir.join("oracle_check.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "n,height,exact,mc,stderr,within_3se,seed,spec_hash");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 7, "heights 0..=6 at n = 6");
    for row in rows {
        assert!(row.ends_with(&format!(",{}", summary["spec_hash"].as_str().unwrap())));
        assert!(row.contains(",true,"), "every atom within 3 stderr: {row}");
    }
}

#[test]
fn seed_flag_overrides_the_spec_and_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("speed.spec");
    std::fs::write(
        &spec,
        "kind = speed\nb = 2\nrule = linear\nc = 1\nhorizon = 2000\nreplicas = 10\nseed = 1\n",
    )
    .unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let run_a = rrwalk(&["run", spec.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    let run_b = rrwalk(&[
        "run",
        spec.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(run_a.status.success() && run_b.status.success());
    let a: serde_json::Value = read_json(&out_a.join("summary.json"));
    let b: serde_json::Value = read_json(&out_b.join("summary.json"));
    assert_eq!(a["seed"], 1);
    assert_eq!(b["seed"], 7);
    assert_ne!(a["spec_hash"], b["spec_hash"]);
    assert_ne!(
        a["results"]["direct"]["estimate"].as_f64(),
        b["results"]["direct"]["estimate"].as_f64()
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}
