use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ulam_lab::config::ExperimentConfig;
use ulam_lab::report::CURVE_HEADER;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ulam-lab"))
        .args(args)
        .env_remove("ULAM_LAB_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> String {
    let path = dir.join(name);
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let out = run(&["stability", "--config", "missing.json", "--quiet"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn default_funceq_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["check-funceq", "--out", tmp.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let rows = report["funceq"].as_array().unwrap();
    assert_eq!(rows.len(), 4 * 3 * 3);
    for row in rows {
        assert!(row["sup_relative"].as_f64().unwrap() <= 1e-10);
    }
}

#[test]
fn stability_reference_writes_curves_within_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ref.json", &ExperimentConfig::reference_derivation());
    let out_dir = tmp.path().join("out");
    let out = run(&["stability", "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(out_dir.join("curves.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let mut rows = 0;
    for line in lines {
        let fields: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(fields.len(), 4);
        assert!(fields[3] <= 1.0, "ratio {} in {line}", fields[3]);
        rows += 1;
    }
    assert_eq!(rows, 11);

    let m = manifest(&out_dir);
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(artifacts.len(), 2);
    for a in artifacts {
        assert!(Path::new(a).exists());
    }
    assert_eq!(m["exit_status"], 0);
}

#[test]
fn report_embeds_a_reproducing_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["stability", "--out", tmp.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let cfg = ExperimentConfig::from_json(&report["config"].to_string()).unwrap();
    assert_eq!(cfg, ExperimentConfig::reference_derivation());
}

#[test]
fn superstability_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let exact = write_config(tmp.path(), "exact.json", &ExperimentConfig::reference_superstability(0.0));
    let perturbed = write_config(tmp.path(), "perturbed.json", &ExperimentConfig::reference_superstability(1e-3));
    assert_eq!(code(&run(&["superstability", "--config", &exact, "--quiet"])), 0);
    assert_eq!(code(&run(&["superstability", "--config", &perturbed, "--quiet"])), 3);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&ExperimentConfig::reference_funceq().to_json()).unwrap();
    value["tolerance"] = serde_json::json!(1e-3);
    let path = tmp.path().join("typo.json");
    fs::write(&path, value.to_string()).unwrap();
    let out = run(&["check-funceq", "--config", path.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance"));
}

#[test]
fn mismatched_kind_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "axioms.json", &ExperimentConfig::reference_axioms(1));
    assert_eq!(code(&run(&["stability", "--config", &cfg, "--quiet"])), 2);
}

#[test]
fn overrides_reach_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ulam-lab"))
        .args(["stability", "--grid-shells", "6", "--depth", "18", "--out", tmp.path().to_str().unwrap(), "--quiet"])
        .env("ULAM_LAB_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 9);
    assert_eq!(report["config"]["depth"], 18);
    assert_eq!(report["config"]["grid"]["shells"], 6);
}

#[test]
fn invalid_override_is_a_config_error() {
    assert_eq!(code(&run(&["stability", "--depth", "0", "--quiet"])), 2);
}

#[test]
fn csv_format_prints_the_curve() {
    let out = run(&["stability", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().next(), Some(CURVE_HEADER));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn batch_runs_every_config_and_reports_the_priority_code() {
    let tmp = tempfile::tempdir().unwrap();
    let configs = tmp.path().join("configs");
    fs::create_dir(&configs).unwrap();
    write_config(&configs, "a_funceq.json", &ExperimentConfig::reference_funceq());
    write_config(&configs, "b_super.json", &ExperimentConfig::reference_superstability(1e-3));
    write_config(&configs, "c_axioms.json", &ExperimentConfig::reference_axioms(2));
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "batch",
        configs.to_str().unwrap(),
        "--jobs",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&out), 3);
    let m = manifest(&out_dir);
    let runs = m["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    let codes: Vec<i64> = runs.iter().map(|r| r["exit_status"].as_i64().unwrap()).collect();
    assert_eq!(codes, vec![0, 3, 0]);
    for r in runs {
        for a in r["artifacts"].as_array().unwrap() {
            assert!(Path::new(a.as_str().unwrap()).exists());
        }
    }

    fs::write(configs.join("d_broken.json"), "{\"kind\": \"extract\"}").unwrap();
    let out = run(&["batch", configs.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 2);
}
