//! End-to-end checks of the command surface: fixture reproduction,
//! bookkeeping, determinism and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};

use mrcm_cli::{parse_config, run_command, RunStatus};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run_json(text: &str, out_dir: &Path, workers: usize) -> RunStatus {
    let mut config = parse_config(text, Path::new(".")).expect("valid config");
    config.out_dir = out_dir.to_path_buf();
    run_command(&config, workers).expect("run succeeds").status
}

#[test]
fn kernels_reproduces_the_bundled_exact_fixture_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 1,
            "command": "kernels",
            "model_file": "{}",
            "params": {{"resolution": 1, "k_list": [4], "lambda": 1.0}}
        }}"#,
        fixture("three_mark_factorisable.json").display()
    );
    run_json(&text, dir.path(), 1);
    let got = fs::read(dir.path().join("path_4_exact.csv")).unwrap();
    let expected = fs::read(fixture("expected_path4_exact.csv")).unwrap();
    assert_eq!(got, expected, "exact four-step kernel must match the bundled fixture");
}

#[test]
fn scan_row_count_is_grid_times_samples_plus_header() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 7,
            "command": "scan",
            "model_file": "{}",
            "params": {{"lambda_grid": [0.2, 0.4], "runs_per_point": 10, "size_cap": 1000}}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    run_json(&text, dir.path(), 1);
    let csv = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 * 10 + 1);
}

#[test]
fn identical_configs_give_identical_data_outputs() {
    let text = format!(
        r#"{{
            "seed": 21,
            "command": "scan",
            "model_file": "{}",
            "params": {{"lambda_grid": [0.3, 0.5, 0.7], "runs_per_point": 200, "size_cap": 5000}}
        }}"#,
        fixture("three_mark_factorisable.json").display()
    );
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_json(&text, d1.path(), 2);
    run_json(&text, d2.path(), 2);
    for name in ["samples.csv", "scan.json"] {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn worker_count_never_changes_scan_output() {
    let text = format!(
        r#"{{
            "seed": 33,
            "command": "scan",
            "model_file": "{}",
            "params": {{"lambda_grid": [0.25, 0.5], "runs_per_point": 500, "size_cap": 5000}}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    let mut outputs = Vec::new();
    for workers in [1usize, 4, 16] {
        let dir = tempfile::tempdir().unwrap();
        run_json(&text, dir.path(), workers);
        outputs.push((
            fs::read(dir.path().join("samples.csv")).unwrap(),
            fs::read(dir.path().join("scan.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn every_output_file_has_exactly_one_manifest_entry() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 4,
            "command": "kernels",
            "model_file": "{}",
            "params": {{"k_list": [1, 2]}}
        }}"#,
        fixture("gaussian_d2.json").display()
    );
    run_json(&text, dir.path(), 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let mut listed: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap().to_string())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    listed.sort();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let dedup: std::collections::BTreeSet<_> = listed.iter().collect();
    assert_eq!(dedup.len(), listed.len(), "duplicate manifest entries");
}

#[test]
fn simulate_summary_and_sample_columns() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 11,
            "command": "simulate",
            "model_file": "{}",
            "params": {{"lambda": 0.3, "runs": 50, "size_cap": 1000}}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    run_json(&text, dir.path(), 1);
    let csv = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,seed,lambda,root_mark,size,capped,generations,max_radius"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 8);
    assert_eq!(first[0], "0");
    assert_eq!(first[2], "0.3");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["chi"]["mean"].as_f64().unwrap() >= 1.0);
}

#[test]
fn fit_command_round_trips_a_scan_file() {
    let dir = tempfile::tempdir().unwrap();
    // synthetic branching-mode scan in the exactly solvable single-type case
    let text = format!(
        r#"{{
            "seed": 5,
            "command": "scan",
            "model_file": "{}",
            "params": {{
                "lambda_grid": [0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.44, 0.47],
                "runs_per_point": 3000,
                "mode": "branching",
                "size_cap": 200000
            }}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    run_json(&text, dir.path(), 0);
    let fit_text = format!(
        r#"{{
            "seed": 5,
            "command": "fit",
            "model_file": "{}",
            "params": {{"scan_file": "scan.json", "lambda_hat": 0.5, "form": "chi_divergence"}}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    run_json(&fit_text, dir.path(), 1);
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    let gamma = fit["exponent"].as_f64().unwrap();
    // branching susceptibility diverges like (lambda* - lambda)^{-1}
    assert!((gamma - 1.0).abs() < 0.12, "gamma {gamma}");
}

#[test]
fn report_command_checks_the_small_cluster_law_and_identities() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 55,
            "command": "report",
            "model_file": "{}",
            "params": {{
                "lambda": 0.3,
                "runs": 40000,
                "resolution": 1,
                "gamma_grid": [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
                "two_point": {{"h": 0.1, "half_cells": 70, "runs_per_cell": 120}}
            }}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    let status = run_json(&text, dir.path(), 0);
    assert_eq!(status, RunStatus::Ok);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    // the exact size law matches the empirical histogram at 3 sigma
    for row in report["small_cluster_law"].as_array().unwrap() {
        let z = row["z"].as_f64().unwrap();
        assert!(z.abs() < 3.0, "size {} z {}", row["cluster_size"], z);
    }
    assert_eq!(report["identity_checks"]["pass"], serde_json::Value::Bool(true));
    assert_eq!(report["assumptions"]["d1_holds"], serde_json::Value::Bool(true));
    assert!(report["magnetization_limits"]["pass"].as_bool().unwrap());
}

#[test]
fn fit_command_reads_the_magnetization_entry() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 66,
            "command": "scan",
            "model_file": "{}",
            "params": {{
                "lambda_grid": [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.44],
                "runs_per_point": 2000,
                "mode": "branching",
                "size_cap": 100000,
                "gamma": 0.3
            }}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    run_json(&text, dir.path(), 0);
    let fit_text = format!(
        r#"{{
            "seed": 66,
            "command": "fit",
            "model_file": "{}",
            "params": {{
                "scan_file": "scan.json",
                "lambda_hat": 0.5,
                "form": "chi_divergence",
                "observable": "magnetization"
            }}
        }}"#,
        fixture("boolean_disc_d1.json").display()
    );
    run_json(&fit_text, dir.path(), 1);
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    // M is bounded, so its divergence exponent is far below the chi one
    let exponent = fit["exponent"].as_f64().unwrap();
    assert!(exponent.is_finite());
    assert!(exponent < 0.9, "magnetization should not diverge: {exponent}");
}

#[test]
fn validate_pipeline_passes_on_the_branching_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{
            "seed": 77,
            "command": "validate",
            "model_file": "{}",
            "params": {{
                "bracket": [1.0, 2.5],
                "bisect_runs": 2500,
                "bisect_size_cap": 10000,
                "bisect_iters": 14,
                "mode": "branching",
                "resolution": 1,
                "chi_runs": 4000,
                "theta_runs": 800,
                "magnetization_runs": 4000,
                "tail_runs": 4000,
                "size_cap": 100000
            }}
        }}"#,
        fixture("three_mark_factorisable.json").display()
    );
    let status = run_json(&text, dir.path(), 0);
    assert_eq!(status, RunStatus::Ok, "a bound was reported violated");

    let critical: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("critical.json")).unwrap())
            .unwrap();
    let lambda_hat = critical["lambda_hat"].as_f64().unwrap();
    assert!((lambda_hat - 1.6649).abs() / 1.6649 < 0.02, "lambda_hat {lambda_hat}");

    let bounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bounds.json")).unwrap())
            .unwrap();
    let entries = bounds["entries"].as_array().unwrap();
    assert!(entries.len() >= 7, "expected a full bound table, got {}", entries.len());
    for e in entries {
        assert_ne!(e["status"].as_str().unwrap(), "violated", "{e}");
    }
    for name in ["susceptibility_lower_bound", "percolation_lower_bound", "magnetization_lower_bound"] {
        let entry = entries
            .iter()
            .find(|e| e["name"] == name)
            .unwrap_or_else(|| panic!("missing {name}"));
        assert_eq!(entry["status"].as_str().unwrap(), "holds", "{entry}");
    }
}

#[test]
fn exit_codes_for_config_errors_and_refusals() {
    use mrcm_cli::exit_codes;
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"command": "kernels"}"#).unwrap();
    assert_eq!(mrcm_cli::run(&bad, Some(1), Some(dir.path())), exit_codes::CONFIG);

    let refused = dir.path().join("refused.json");
    fs::write(
        &refused,
        format!(
            r#"{{
                "seed": 9,
                "command": "simulate",
                "model_file": "{}",
                "params": {{"lambda": 0.1, "runs": 1000000000, "size_cap": 100000000}}
            }}"#,
            fixture("boolean_disc_d1.json").display()
        ),
    )
    .unwrap();
    assert_eq!(
        mrcm_cli::run(&refused, Some(1), Some(dir.path())),
        exit_codes::RESOURCE_REFUSAL
    );

    let missing = dir.path().join("nonexistent.json");
    assert_eq!(mrcm_cli::run(&missing, Some(1), Some(dir.path())), exit_codes::CONFIG);
}
