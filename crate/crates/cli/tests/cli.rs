use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pqsense::scenario::Scenario;

fn default_scenario() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml")
}

fn pqsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pqsense"))
        .args(args)
        .output()
        .expect("spawn pqsense")
}

fn run_in(sub: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        sub,
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    pqsense(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn verify_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("verify", &default_scenario(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn fig4_enhancements_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("fig4", &default_scenario(), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("fig4_enhancement.json")).unwrap()).unwrap();
    let corr = v["correlated"].as_array().unwrap();
    assert_eq!(corr.len(), 4);
    for r in corr {
        let e = r["enhancement_pct"].as_f64().unwrap();
        assert!((21.0..=25.0).contains(&e), "{e}");
    }
    assert_eq!(v["pairs"].as_array().unwrap().len(), 16);
    let csv = fs::read_to_string(dir.path().join("fig4.csv")).unwrap();
    assert!(csv.starts_with("voltage_mV,pair,correlated,snr_tb"));
}

#[test]
fn every_subcommand_writes_its_artifacts() {
    let cases: [(&str, &[&str]); 6] = [
        ("squeezing-budget", &["budget.csv", "budget.json"]),
        ("optimize-beam", &["waist_scan.csv", "waist_optimum.json"]),
        ("resonance-scan", &["resonance_scan.csv", "resonance.json"]),
        ("snr-sweep", &["snr_sweep.csv", "snr_pairs.csv", "snr_sweep.json"]),
        ("fig3", &["fig3.csv", "fig3.json"]),
        ("calibrate", &["calibrated.toml", "calibration.json"]),
    ];
    for (sub, names) in cases {
        let dir = tempfile::tempdir().unwrap();
        let o = run_in(sub, &default_scenario(), dir.path(), &[]);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        for n in names {
            assert!(dir.path().join(n).is_file(), "{sub} did not write {n}");
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let mut runs = Vec::new();
    for threads in ["1", "8", "8"] {
        let dir = tempfile::tempdir().unwrap();
        for sub in ["squeezing-budget", "snr-sweep", "fig3", "fig4"] {
            let o = run_in(sub, &default_scenario(), dir.path(), &["--threads", threads]);
            assert_eq!(o.status.code(), Some(0));
        }
        let o = run_in(
            "verify",
            &default_scenario(),
            dir.path(),
            &["--threads", threads, "--samples", "200000"],
        );
        assert_eq!(o.status.code(), Some(0));
        runs.push(files(dir.path()));
    }
    assert_eq!(runs[0].len(), 10);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn seed_changes_sampled_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in("fig4", &default_scenario(), a.path(), &["--seed", "1"]);
    run_in("fig4", &default_scenario(), b.path(), &["--seed", "2"]);
    assert_ne!(
        fs::read(a.path().join("fig4.csv")).unwrap(),
        fs::read(b.path().join("fig4.csv")).unwrap()
    );
}

#[test]
fn dump_config_round_trips() {
    let o = pqsense(&["fig4", "--scenario", default_scenario().to_str().unwrap(), "--dump-config"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let original = Scenario::load(&default_scenario()).unwrap();
    assert_eq!(Scenario::from_toml_str(&text).unwrap(), original);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("echo.toml");
    fs::write(&path, &text).unwrap();
    let again = pqsense(&["fig4", "--scenario", path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn empty_voltage_list_is_a_validation_error() {
    let text = fs::read_to_string(default_scenario()).unwrap();
    let start = text.find("voltages = [").unwrap();
    let end = start + text[start..].find(']').unwrap() + 1;
    let bad = format!("{}voltages = []{}", &text[..start], &text[end..]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, bad).unwrap();
    let o = run_in("snr-sweep", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep.voltages"));
}

#[test]
fn missing_scenario_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("fig4", &dir.path().join("nope.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = pqsense(&["fig5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn zero_threads_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("fig3", &default_scenario(), dir.path(), &["--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
