//! End-to-end checks of the installed binary: every command, the config
//! file precedence, and the failure paths, all at smoke scale.

use std::path::Path;
use std::process::{Command, Output};

use shapley_forest::data::{generate, write_csv, Experiment, GeneratorSpec};
use shapley_forest::forest::load_forest;
use shapley_forest::runner::RunReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapley-forest"))
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().expect("binary should spawn");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn read_report(dir: &Path) -> RunReport {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn experiment_command_writes_the_full_report_set() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_ok(&[
        "experiment",
        "--experiment",
        "exp2",
        "--n",
        "300",
        "--trees",
        "20",
        "--subsets",
        "25",
        "--reps",
        "2",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);

    for file in [
        "report.json",
        "per_rep.csv",
        "effects.csv",
        "ground_truth.csv",
        "plot.svg",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let report = read_report(&out);
    assert_eq!(report.schema_version, 1);
    assert_eq!(report.variable_names.len(), 15);
    assert_eq!(report.reps.len(), 2);
    assert!(report.ground_truth.is_some());
    assert!(report.mean_error.is_some());

    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 15);
    assert_eq!(svg.matches("class=\"truth\"").count(), 15);

    let effects = std::fs::read_to_string(out.join("effects.csv")).unwrap();
    assert_eq!(effects.lines().count(), 16);
    assert!(effects.starts_with("variable,effect"));
}

#[test]
fn same_seed_reruns_are_identical_modulo_timings() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "experiment".to_string(),
            "--experiment".into(),
            "exp2".into(),
            "--n".into(),
            "250".into(),
            "--trees".into(),
            "15".into(),
            "--subsets".into(),
            "20".into(),
            "--reps".into(),
            "1".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let output = bin().args(args(out)).output().unwrap();
        assert!(output.status.success());
    }
    let mut a = read_report(&out_a);
    let mut b = read_report(&out_b);
    a.strip_timings();
    b.strip_timings();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn csv_data_runs_without_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec::new(Experiment::Exp3, 250, 17);
    let dataset = generate(&spec).unwrap();
    let csv_path = dir.path().join("data.csv");
    write_csv(&dataset, &csv_path).unwrap();

    let categorical: Vec<String> = dataset
        .kinds()
        .iter()
        .zip(dataset.names())
        .filter(|(k, _)| k.is_categorical())
        .map(|(_, n)| n.clone())
        .collect();
    assert!(!categorical.is_empty(), "exp3 should have categorical columns");

    let out = dir.path().join("run");
    run_ok(&[
        "shapley",
        "--data",
        csv_path.to_str().unwrap(),
        "--target",
        dataset.target_name(),
        "--categorical",
        &categorical.join(","),
        "--trees",
        "15",
        "--subsets",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);

    let report = read_report(&out);
    assert!(report.ground_truth.is_none());
    assert!(report.mean_error.is_none());
    assert_eq!(report.variable_names, dataset.names());
    assert!(!out.join("ground_truth.csv").exists());
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert_eq!(svg.matches("class=\"truth\"").count(), 0);
}

#[test]
fn fit_writes_a_reloadable_forest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    run_ok(&[
        "fit",
        "--experiment",
        "exp2",
        "--n",
        "200",
        "--trees",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);

    let forest = load_forest(out.join("forest.json")).unwrap();
    assert_eq!(forest.trees.len(), 10);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 200);
    assert_eq!(summary["p"], 15);
    assert!(summary["oob_explained_variance"].as_f64().unwrap().is_finite());
}

#[test]
fn config_file_applies_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!(
            "experiment = \"exp2\"\nn = 250\ntrees = 15\nsubsets = 25\nreps = 1\nseed = 1\nout = \"{}\"\n",
            out.display()
        ),
    )
    .unwrap();

    run_ok(&[
        "experiment",
        "--config",
        config_path.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    let report = read_report(&out);
    assert_eq!(report.config.seed, 2, "flag should override the file");
    assert_eq!(report.config.k, 25, "file value should apply");
    assert_eq!(report.config.forest.num_trees, 15);
}

#[test]
fn bad_inputs_exit_nonzero_with_structured_errors() {
    let zero_subsets = bin()
        .args([
            "shapley",
            "--experiment",
            "exp2",
            "--subsets",
            "0",
            "--out",
            "/tmp/never-used",
        ])
        .output()
        .unwrap();
    assert_eq!(zero_subsets.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&zero_subsets.stderr);
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");
    assert!(stderr.contains("subset"), "stderr was: {stderr}");

    let both_sources = bin()
        .args([
            "shapley",
            "--experiment",
            "exp2",
            "--data",
            "x.csv",
            "--target",
            "y",
            "--out",
            "/tmp/never-used",
        ])
        .output()
        .unwrap();
    assert_eq!(both_sources.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&both_sources.stderr).contains("mutually exclusive"));

    let experiment_on_csv = bin()
        .args([
            "experiment",
            "--data",
            "x.csv",
            "--target",
            "y",
            "--out",
            "/tmp/never-used",
        ])
        .output()
        .unwrap();
    assert_eq!(experiment_on_csv.status.code(), Some(1));

    let missing_out = bin()
        .args(["experiment", "--experiment", "exp2"])
        .output()
        .unwrap();
    assert_eq!(missing_out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing_out.stderr).contains("output directory"));
}

#[test]
fn sweep_and_ablation_emit_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_out = dir.path().join("sweep");
    run_ok(&[
        "ksweep",
        "--experiment",
        "exp2",
        "--n",
        "250",
        "--trees",
        "12",
        "--budgets",
        "15,30",
        "--reps",
        "1",
        "--out",
        sweep_out.to_str().unwrap(),
    ]);
    let sweep_csv = std::fs::read_to_string(sweep_out.join("ksweep.csv")).unwrap();
    assert_eq!(sweep_csv.lines().count(), 3);
    assert!(sweep_csv.starts_with("subsets,mean_error,se_error"));

    let ablation_out = dir.path().join("ablation");
    run_ok(&[
        "ablation",
        "--experiment",
        "exp2",
        "--n",
        "220",
        "--trees",
        "12",
        "--subsets",
        "12",
        "--reps",
        "1",
        "--marginal-draws",
        "3",
        "--out",
        ablation_out.to_str().unwrap(),
    ]);
    let ablation_csv = std::fs::read_to_string(ablation_out.join("ablation.csv")).unwrap();
    assert_eq!(ablation_csv.lines().count(), 7);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ablation_out.join("ablation.json")).unwrap())
            .unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 6);
}
