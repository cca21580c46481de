//! End-to-end tests of the `misalign` binary: artifact layout, exit codes,
//! manifest replay, and the saved-fit/monolithic prediction equivalence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_misalign")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn misalign(args: &[&str]) -> Output {
    Command::new(binary()).args(args).output().expect("binary should launch")
}

fn misalign_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(binary());
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary should launch")
}

fn assert_exit(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{context}: expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// Standard toy fit into `out`; small but long enough to be a real chain.
fn toy_fit_args(out: &Path) -> Vec<String> {
    vec![
        "fit".into(),
        "--layer".into(),
        fixture("fit-layer.geojson").display().to_string(),
        "--data".into(),
        fixture("fit-data.csv").display().to_string(),
        "--x-cols".into(),
        "x1,x2".into(),
        "--knots".into(),
        "3".into(),
        "--iters".into(),
        "400".into(),
        "--burnin".into(),
        "100".into(),
        "--seed".into(),
        "7".into(),
        "--out".into(),
        out.display().to_string(),
    ]
}

fn run_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    misalign(&refs)
}

#[test]
fn help_exits_zero_and_lists_every_subcommand() {
    let output = misalign(&["--help"]);
    assert_exit(&output, 0, "--help");
    let text = String::from_utf8_lossy(&output.stdout);
    for sub in ["simulate", "fit", "predict", "compare", "knots-sensitivity"] {
        assert!(text.contains(sub), "help should list `{sub}`:\n{text}");
    }
}

#[test]
fn fit_writes_every_artifact_and_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("fit");
    let layer_before = read(&fixture("fit-layer.geojson"));
    let data_before = read(&fixture("fit-data.csv"));

    let output = run_owned(&toy_fit_args(&out));
    assert_exit(&output, 0, "toy fit");

    for artifact in ["posterior.csv", "summary.json", "fit.json", "run-manifest.json"] {
        assert!(out.join(artifact).exists(), "fit should write {artifact}");
    }
    assert_eq!(layer_before, read(&fixture("fit-layer.geojson")), "fit must not mutate the layer");
    assert_eq!(data_before, read(&fixture("fit-data.csv")), "fit must not mutate the data");

    // 25 units, 3 knots, intercept + 2 covariates: header plus 300 retained rows
    let posterior = String::from_utf8(read(&out.join("posterior.csv"))).expect("utf8");
    let mut lines = posterior.lines();
    assert_eq!(
        lines.next().expect("header"),
        "chain,draw,β[0],β[1],β[2],δ[0],δ[1],δ[2],σ²,σ²_η,φ",
        "posterior header should name every parameter"
    );
    assert_eq!(lines.count(), 300, "400 iterations minus 100 burnin retained");

    let summary: serde_json::Value =
        serde_json::from_slice(&read(&out.join("summary.json"))).expect("summary parses");
    assert_eq!(summary["chains"], 1);
    assert_eq!(summary["draws_per_chain"], 300);
    assert_eq!(
        summary["parameters"].as_array().map(Vec::len),
        Some(3 + 3 + 3),
        "betas, deltas, and the three variances"
    );
}

#[test]
fn replaying_a_fit_manifest_reproduces_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().expect("tempdir");
    let first = dir.path().join("first");
    assert_exit(&run_owned(&toy_fit_args(&first)), 0, "first fit");

    let manifest = first.join("run-manifest.json");
    let replay = dir.path().join("replay");
    let output = misalign(&[
        "fit",
        "--manifest",
        &manifest.display().to_string(),
        "--out",
        &replay.display().to_string(),
    ]);
    assert_exit(&output, 0, "replayed fit");

    for artifact in ["posterior.csv", "summary.json", "fit.json", "run-manifest.json"] {
        assert_eq!(
            read(&first.join(artifact)),
            read(&replay.join(artifact)),
            "replay should reproduce {artifact} exactly"
        );
    }
}

#[test]
fn replay_rejects_a_changed_input_as_a_data_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("fit");

    // Fit against a private copy of the data, then perturb that copy.
    let data = dir.path().join("data.csv");
    std::fs::copy(fixture("fit-data.csv"), &data).expect("copy fixture");
    let output = misalign(&[
        "fit",
        "--layer",
        &fixture("fit-layer.geojson").display().to_string(),
        "--data",
        &data.display().to_string(),
        "--x-cols",
        "x1,x2",
        "--iters",
        "200",
        "--burnin",
        "50",
        "--out",
        &out.display().to_string(),
    ]);
    assert_exit(&output, 0, "fit against copied data");

    let mut text = std::fs::read_to_string(&data).expect("read copy");
    text.push_str("extra,0,0,0\n");
    std::fs::write(&data, text).expect("perturb copy");

    let replay = misalign(&[
        "fit",
        "--manifest",
        &out.join("run-manifest.json").display().to_string(),
        "--out",
        &dir.path().join("replay").display().to_string(),
    ]);
    assert_exit(&replay, 3, "replay with changed input");
    let stderr = String::from_utf8_lossy(&replay.stderr);
    assert!(stderr.contains("changed since the manifest"), "stderr should say why: {stderr}");
}

#[test]
fn predicting_from_a_saved_fit_matches_the_monolithic_run_byte_for_byte() {
    let dir = tempfile::tempdir().expect("tempdir");
    let fit_out = dir.path().join("fit");
    assert_exit(&run_owned(&toy_fit_args(&fit_out)), 0, "saved fit");

    let split_out = dir.path().join("split");
    let output = misalign(&[
        "predict",
        "--fit",
        &fit_out.display().to_string(),
        "--target-layer",
        &fixture("target-layer.geojson").display().to_string(),
        "--target-data",
        &fixture("target-data.csv").display().to_string(),
        "--out",
        &split_out.display().to_string(),
    ]);
    assert_exit(&output, 0, "predict from saved fit");

    let mono_out = dir.path().join("mono");
    let output = misalign(&[
        "predict",
        "--layer",
        &fixture("fit-layer.geojson").display().to_string(),
        "--data",
        &fixture("fit-data.csv").display().to_string(),
        "--x-cols",
        "x1,x2",
        "--knots",
        "3",
        "--iters",
        "400",
        "--burnin",
        "100",
        "--seed",
        "7",
        "--target-layer",
        &fixture("target-layer.geojson").display().to_string(),
        "--target-data",
        &fixture("target-data.csv").display().to_string(),
        "--out",
        &mono_out.display().to_string(),
    ]);
    assert_exit(&output, 0, "monolithic predict");

    assert_eq!(
        read(&split_out.join("prediction.csv")),
        read(&mono_out.join("prediction.csv")),
        "the two prediction paths must agree to the last byte"
    );
    // the monolithic run also saves its fit, and it matches the saved one
    assert_eq!(
        read(&fit_out.join("posterior.csv")),
        read(&mono_out.join("posterior.csv")),
        "inline fit should equal the saved fit"
    );

    let prediction = String::from_utf8(read(&split_out.join("prediction.csv"))).expect("utf8");
    let ids: Vec<&str> =
        prediction.lines().skip(1).map(|l| l.split(',').next().expect("id field")).collect();
    assert_eq!(ids, ["t00", "t01", "t10", "t11"], "one row per target unit, in layer order");
}

#[test]
fn self_prediction_runs_against_the_fit_layer_itself() {
    let dir = tempfile::tempdir().expect("tempdir");
    let fit_out = dir.path().join("fit");
    assert_exit(&run_owned(&toy_fit_args(&fit_out)), 0, "fit");

    // the fit CSV doubles as target covariates; its y column is ignored
    let out = dir.path().join("self");
    let output = misalign(&[
        "predict",
        "--fit",
        &fit_out.display().to_string(),
        "--target-layer",
        &fixture("fit-layer.geojson").display().to_string(),
        "--target-data",
        &fixture("fit-data.csv").display().to_string(),
        "--out",
        &out.display().to_string(),
    ]);
    assert_exit(&output, 0, "self prediction");
    let prediction = String::from_utf8(read(&out.join("prediction.csv"))).expect("utf8");
    assert_eq!(prediction.lines().count(), 26, "header plus one row per fit-layer unit");
}

#[test]
fn simulate_writes_datasets_and_compare_reproduces_the_same_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("study.json");
    std::fs::write(
        &config,
        r#"{
  "fit_dims": [6, 6],
  "target_dims": [4, 4],
  "bbox": [0.0, 0.0, 6.0, 6.0],
  "knots": 4,
  "iterations": 300,
  "burnin": 100,
  "replications": 2,
  "seed": 11
}
"#,
    )
    .expect("write config");

    let sim_out = dir.path().join("sim");
    let output = misalign(&[
        "simulate",
        "--config",
        &config.display().to_string(),
        "--out",
        &sim_out.display().to_string(),
    ]);
    assert_exit(&output, 0, "simulate");
    for artifact in [
        "study-report.json",
        "comparison-table.txt",
        "run-manifest.json",
        "fit-layer.json",
        "target-layer.json",
        "datasets/rep-00-fit.csv",
        "datasets/rep-00-target.csv",
        "datasets/rep-01-fit.csv",
        "datasets/rep-01-target.csv",
    ] {
        assert!(sim_out.join(artifact).exists(), "simulate should write {artifact}");
    }
    let table = String::from_utf8(read(&sim_out.join("comparison-table.txt"))).expect("utf8");
    assert!(table.contains("hybrid") && table.contains("truncated-moran"), "table rows: {table}");

    // 36 fit cells: header + 36 rows, id then x1,x2 then y
    let rep0 = String::from_utf8(read(&sim_out.join("datasets/rep-00-fit.csv"))).expect("utf8");
    assert_eq!(rep0.lines().next(), Some("id,x1,x2,y"));
    assert_eq!(rep0.lines().count(), 37);

    let cmp_out = dir.path().join("cmp");
    let output = misalign(&[
        "compare",
        "--config",
        &config.display().to_string(),
        "--out",
        &cmp_out.display().to_string(),
    ]);
    assert_exit(&output, 0, "compare");
    assert_eq!(
        read(&sim_out.join("study-report.json")),
        read(&cmp_out.join("study-report.json")),
        "same configuration, same report"
    );

    let report: serde_json::Value =
        serde_json::from_slice(&read(&cmp_out.join("study-report.json"))).expect("report parses");
    assert_eq!(report["replications"].as_array().map(Vec::len), Some(2));
}

#[test]
fn knots_sensitivity_tabulates_each_fraction() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("study.json");
    std::fs::write(
        &config,
        r#"{
  "fit_dims": [5, 5],
  "target_dims": [3, 3],
  "bbox": [0.0, 0.0, 5.0, 5.0],
  "knots": 3,
  "iterations": 200,
  "burnin": 50,
  "replications": 1,
  "seed": 3
}
"#,
    )
    .expect("write config");

    let out = dir.path().join("knots");
    let output = misalign(&[
        "knots-sensitivity",
        "--config",
        &config.display().to_string(),
        "--fractions",
        "0.1,0.2",
        "--out",
        &out.display().to_string(),
    ]);
    assert_exit(&output, 0, "knots-sensitivity");
    let rows: serde_json::Value =
        serde_json::from_slice(&read(&out.join("knot-sensitivity.json"))).expect("rows parse");
    let rows = rows.as_array().expect("array of rows");
    assert_eq!(rows.len(), 2, "one row per fraction");
    assert_eq!(rows[0]["fraction"], 0.1);
    assert_eq!(rows[1]["fraction"], 0.2);
    assert!(rows[0]["hybrid_rmse_mean"].is_number(), "rows carry accuracy numbers");
}

#[test]
fn exit_codes_separate_config_data_and_numeric_failures() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("out");
    let out_s = out.display().to_string();
    let layer = fixture("fit-layer.geojson").display().to_string();

    // 2: flag references a missing path
    let output = misalign(&[
        "fit",
        "--layer",
        "/no/such/layer.geojson",
        "--data",
        &fixture("fit-data.csv").display().to_string(),
        "--out",
        &out_s,
    ]);
    assert_exit(&output, 2, "missing path");

    // 2: impossible sampler settings
    let output = misalign(&[
        "fit",
        "--layer",
        &layer,
        "--data",
        &fixture("fit-data.csv").display().to_string(),
        "--x-cols",
        "x1,x2",
        "--iters",
        "100",
        "--burnin",
        "100",
        "--out",
        &out_s,
    ]);
    assert_exit(&output, 2, "burnin >= iterations");

    // 2: invalid thread cap
    let output = misalign_env(&["compare", "--out", &out_s], &[("MISALIGN_THREADS", "zero")]);
    assert_exit(&output, 2, "bad MISALIGN_THREADS");

    // 3: ids that do not join
    let broken = dir.path().join("broken.csv");
    let swapped = std::fs::read_to_string(fixture("fit-data.csv"))
        .expect("fixture")
        .replace("c00,", "zz9,");
    std::fs::write(&broken, swapped).expect("write broken csv");
    let output = misalign(&[
        "fit",
        "--layer",
        &layer,
        "--data",
        &broken.display().to_string(),
        "--x-cols",
        "x1,x2",
        "--iters",
        "200",
        "--burnin",
        "50",
        "--out",
        &out_s,
    ]);
    assert_exit(&output, 3, "unjoined ids");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("c00") && stderr.contains("zz9"),
        "both sides of the failed join are named: {stderr}"
    );

    // 4: rank-deficient design (a covariate duplicating the intercept)
    let constant = dir.path().join("constant.csv");
    let mut rows: Vec<String> = std::fs::read_to_string(fixture("fit-data.csv"))
        .expect("fixture")
        .lines()
        .map(str::to_string)
        .collect();
    for row in rows.iter_mut().skip(1) {
        let mut fields: Vec<&str> = row.split(',').collect();
        fields[1] = "1.0";
        *row = fields.join(",");
    }
    std::fs::write(&constant, rows.join("\n") + "\n").expect("write constant csv");
    let output = misalign(&[
        "fit",
        "--layer",
        &layer,
        "--data",
        &constant.display().to_string(),
        "--x-cols",
        "x1,x2",
        "--iters",
        "200",
        "--burnin",
        "50",
        "--out",
        &out_s,
    ]);
    assert_exit(&output, 4, "rank-deficient design");
}

#[test]
fn missing_csv_columns_are_reported_with_the_available_ones() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = misalign(&[
        "fit",
        "--layer",
        &fixture("fit-layer.geojson").display().to_string(),
        "--data",
        &fixture("fit-data.csv").display().to_string(),
        "--x-cols",
        "x1,bogus",
        "--out",
        &dir.path().join("out").display().to_string(),
    ]);
    assert_exit(&output, 3, "unknown covariate column");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("bogus") && stderr.contains("x2"), "names the miss and the options");
}

#[test]
fn thread_cap_changes_nothing_but_wall_time() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("study.json");
    std::fs::write(
        &config,
        r#"{
  "fit_dims": [5, 5],
  "target_dims": [3, 3],
  "bbox": [0.0, 0.0, 5.0, 5.0],
  "knots": 3,
  "iterations": 200,
  "burnin": 50,
  "replications": 2,
  "seed": 5
}
"#,
    )
    .expect("write config");

    let capped = dir.path().join("capped");
    let output = misalign_env(
        &["compare", "--config", &config.display().to_string(), "--out", &capped.display().to_string()],
        &[("MISALIGN_THREADS", "1")],
    );
    assert_exit(&output, 0, "capped compare");

    let free = dir.path().join("free");
    let output = misalign(&[
        "compare",
        "--config",
        &config.display().to_string(),
        "--out",
        &free.display().to_string(),
    ]);
    assert_exit(&output, 0, "uncapped compare");

    assert_eq!(
        read(&capped.join("study-report.json")),
        read(&free.join("study-report.json")),
        "concurrency must not leak into results"
    );
}
