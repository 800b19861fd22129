use std::fs;
use std::process::Command;

use crowdship::experiments::{
    emit, run_delivery, run_feasibility, run_prediction, ExperimentConfig, ExperimentError,
    ResultTable,
};
use crowdship::mixture::ChainConfig;
use crowdship::world::WorldConfig;

fn small_feasibility() -> ExperimentConfig {
    ExperimentConfig {
        world: WorldConfig {
            participant_count: 120,
            ..WorldConfig::default()
        },
        pool_sizes: vec![5, 10, 20, 40, 80, 120],
        problem_count: Some(300),
        ..ExperimentConfig::default()
    }
}

#[test]
fn emitted_csv_reparses_to_the_same_table() {
    let table = run_feasibility(&small_feasibility()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit(&table, dir.path()).unwrap();
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "feasibility.csv",
            "feasibility.json",
            "feasibility.schema.json",
            "feasibility_hops.csv"
        ]
    );
    let back =
        ResultTable::from_csv(fs::File::open(dir.path().join("feasibility.csv")).unwrap()).unwrap();
    assert_eq!(back.experiment, table.experiment);
    assert_eq!(back.metrics, table.metrics);
    assert_eq!(back.rows, table.rows);
}

#[test]
fn emitted_json_validates_against_emitted_schema() {
    let table = run_feasibility(&small_feasibility()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit(&table, dir.path()).unwrap();
    let read = |name: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
    };
    let schema = read("feasibility.schema.json");
    let summary = read("feasibility.json");
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(validator.is_valid(&summary));
    let mut broken = summary.clone();
    broken["conditions"]["uniform/5"]["coverage"]["value"] = serde_json::json!("high");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn histogram_files_hold_every_feasible_problem() {
    let table = run_feasibility(&small_feasibility()).unwrap();
    for h in &table.histograms {
        let coverage = table.value(&h.condition, "coverage").unwrap();
        let problems = table.value(&h.condition, "problems").unwrap();
        assert_eq!(h.total() as f64, (coverage * problems).round());
    }
}

#[test]
fn nested_pools_only_gain_edges_and_coverage() {
    let config = small_feasibility();
    let table = run_feasibility(&config).unwrap();
    for mode in ["uniform", "rural"] {
        let series = |metric: &str| -> Vec<f64> {
            config
                .pool_sizes
                .iter()
                .map(|p| table.value(&format!("{mode}/{p}"), metric).unwrap())
                .collect()
        };
        for metric in ["edges", "coverage"] {
            let s = series(metric);
            assert!(s.windows(2).all(|w| w[0] <= w[1]), "{mode} {metric} {s:?}");
        }
    }
}

#[test]
fn reruns_emit_identical_bytes() {
    let config = ExperimentConfig {
        world: WorldConfig {
            participant_count: 60,
            ..WorldConfig::default()
        },
        chain: ChainConfig {
            burn_in: 50,
            samples: 10,
            ..ChainConfig::default()
        },
        runs: 20,
        problem_count: Some(4),
        ..ExperimentConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        emit(&run_prediction(&config).unwrap(), dir.path()).unwrap();
        emit(&run_delivery(&config).unwrap(), dir.path()).unwrap();
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    // prediction adds a histogram and a skip report, delivery a histogram
    assert_eq!(names.len(), 9);
    for name in names {
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
}

#[test]
fn different_seeds_change_results() {
    let a = run_feasibility(&small_feasibility()).unwrap();
    let b = run_feasibility(&ExperimentConfig {
        seed: 2,
        ..small_feasibility()
    })
    .unwrap();
    assert_ne!(a.rows, b.rows);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let table = run_feasibility(&small_feasibility()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "").unwrap();
    assert!(matches!(
        emit(&table, &file.join("out")),
        Err(ExperimentError::Io(_))
    ));
}

#[test]
fn oversized_pool_is_a_config_error() {
    let config = ExperimentConfig {
        pool_sizes: vec![10, 1000],
        ..small_feasibility()
    };
    assert!(matches!(
        run_feasibility(&config),
        Err(ExperimentError::Config(_))
    ));
}

#[test]
fn cli_reports_failures_as_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "pool_sizes = [10, 5]\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_crowdship"))
        .args(["feasibility", "--config", config.to_str().unwrap()])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(line["error"], "config");
    assert!(line["message"]
        .as_str()
        .unwrap()
        .contains("strictly increasing"));
}

#[test]
fn cli_help_lists_the_shared_flags() {
    let output = Command::new(env!("CARGO_BIN_EXE_crowdship"))
        .args(["delivery", "--help"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let help = String::from_utf8(output.stdout).unwrap();
    for flag in ["--config", "--seed", "--out", "--runs", "--rural"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}
