use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use harderlasso::cli::{ModelFile, QutReport};
use harderlasso::losses::TaskSpec;
use harderlasso::network::Architecture;
use harderlasso::qut::compute_qut;
use harderlasso::seeding::{derive_seed, TAG_QUT};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

fn harderlasso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harderlasso"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a regression CSV whose response depends on `x1` and `x4` only.
fn regression_csv(path: &Path, n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Array2<f64> = Array2::from_shape_fn((n, 6), |_| StandardNormal.sample(&mut rng));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            5.0 + 2.0 * x[[i, 1]] - 3.0 * x[[i, 4]] + 0.5 * e
        })
        .collect();
    let mut text = String::from("x0,x1,x2,x3,x4,x5,y\n");
    for i in 0..n {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{},{}\n", row.join(","), y[i]));
    }
    std::fs::write(path, text).unwrap();
    (x, y)
}

fn pure_noise_csv(path: &Path, n: usize, p: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = (0..p).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",") + ",y\n";
    for _ in 0..n {
        let row: Vec<String> = (0..=p)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|v: f64| v.to_string())
            .collect();
        text.push_str(&(row.join(",") + "\n"));
    }
    std::fs::write(path, text).unwrap();
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let idx = reader.headers().unwrap().iter().position(|h| h == name).unwrap();
    reader.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    regression_csv(&data, 30, 1);
    let d = path_str(&data);
    assert_eq!(code(&harderlasso(&["frobnicate"])), 2);
    assert_eq!(code(&harderlasso(&["fit", "--data", d])), 2);
    assert_eq!(code(&harderlasso(&["simulate", "linear", "--s", "5:1"])), 2);
    assert_eq!(code(&harderlasso(&["simulate", "absdiff", "--s", "3"])), 2);
    assert_eq!(code(&harderlasso(&["--jobs", "0", "qut", "--data", d, "--target", "y"])), 2);
    assert_eq!(code(&harderlasso(&["qut", "--data", d, "--target", "y", "--hidden", "4,x"])), 2);
    assert_eq!(code(&harderlasso(&["qut", "--data", d, "--target", "y", "--n-mc", "10"])), 2);
    assert_eq!(code(&harderlasso(&["--help"])), 0);
    assert_eq!(code(&harderlasso(&["--version"])), 0);
}

#[test]
fn data_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = harderlasso(&["qut", "--data", "/nonexistent/file.csv", "--target", "y"]);
    assert_eq!(code(&out), 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b,y\n1,2,3\n4,oops,6\n7,8,9\n").unwrap();
    let out = harderlasso(&["qut", "--data", path_str(&bad), "--target", "y"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains('b'));

    let data = dir.path().join("d.csv");
    regression_csv(&data, 30, 1);
    let out = harderlasso(&["qut", "--data", path_str(&data), "--target", "nope"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn fit_then_predict_reproduces_training_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    let (x, _) = regression_csv(&data, 120, 2);
    let out_dir = dir.path().join("out");
    let o = path_str(&out_dir);
    let fit = harderlasso(&["--seed", "5", "--output-dir", o, "fit", "--data", path_str(&data), "--target", "y"]);
    assert_eq!(code(&fit), 0, "{}", String::from_utf8_lossy(&fit.stderr));

    let report = read_json(out_dir.join("report.json"));
    assert_eq!(report["selected_features"], serde_json::json!(["x1", "x4"]));
    assert_eq!(report["schema_version"], 1);
    assert!(report["phase_log"].as_array().unwrap().len() >= 8);
    assert!(out_dir.join("run_config.toml").exists());

    let model = ModelFile::load(&out_dir.join("model.json")).unwrap();
    assert_eq!(model.selected_names, ["x1", "x4"]);

    let pred = harderlasso(&["--output-dir", o, "predict", "--model", &format!("{o}/model.json"), "--data", path_str(&data)]);
    assert_eq!(code(&pred), 0);
    let predicted: Vec<f64> = column(&out_dir.join("predictions.csv"), "prediction")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();

    let (params, arch, selected) = model.network.into_parts().unwrap();
    let z = harderlasso::network::select_columns(model.standardizer.transform(x.view()).unwrap().view(), &selected);
    let expected = harderlasso::network::forward(&params, &arch, z.view()).unwrap();
    assert_eq!(predicted.len(), 120);
    for (a, b) in predicted.iter().zip(expected.column(0)) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn predict_reads_only_the_selected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    regression_csv(&data, 100, 3);
    let o = path_str(dir.path());
    assert_eq!(code(&harderlasso(&["--output-dir", o, "fit", "--data", path_str(&data), "--target", "y"])), 0);
    let model = format!("{o}/model.json");

    // shuffle the non-selected columns across rows, reorder the columns and drop the response
    let mut reader = csv::Reader::from_path(&data).unwrap();
    let rows: Vec<Vec<String>> = reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut text = String::from("x5,x4,x3,x2,x1,x0\n");
    for row in &rows {
        let other = &rows[rng.random_range(0..rows.len())];
        text.push_str(&format!("{},{},{},{},{},{}\n", other[5], row[4], other[3], other[2], row[1], other[0]));
    }
    let permuted = dir.path().join("permuted.csv");
    std::fs::write(&permuted, text).unwrap();

    assert_eq!(code(&harderlasso(&["--output-dir", o, "predict", "--model", &model, "--data", path_str(&data), "--output", "a.csv"])), 0);
    assert_eq!(code(&harderlasso(&["--output-dir", o, "predict", "--model", &model, "--data", path_str(&permuted), "--output", "b.csv"])), 0);
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );

    let missing = dir.path().join("missing.csv");
    std::fs::write(&missing, "x0,x2,x4\n1,2,3\n").unwrap();
    let out = harderlasso(&["--output-dir", o, "predict", "--model", &model, "--data", path_str(&missing)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("x1"));
}

#[test]
fn null_model_predicts_a_constant() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    let (_, y) = regression_csv(&data, 80, 4);
    let o = path_str(dir.path());
    let fit = harderlasso(&["--output-dir", o, "fit", "--data", path_str(&data), "--target", "y", "--lambda", "100"]);
    assert_eq!(code(&fit), 0);
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["selected_features"], serde_json::json!([]));
    assert_eq!(code(&harderlasso(&["--output-dir", o, "predict", "--model", &format!("{o}/model.json"), "--data", path_str(&data)])), 0);
    let preds = column(&dir.path().join("predictions.csv"), "prediction");
    assert!(preds.iter().all(|p| *p == preds[0]));
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let c: f64 = preds[0].parse().unwrap();
    assert!((c - mean).abs() < 1e-3, "{c} vs mean {mean}");
}

#[test]
fn qut_output_is_reproducible_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    regression_csv(&data, 60, 5);
    let d = path_str(&data);
    let mut outputs = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "3"), ("c", "1")] {
        let out_dir = dir.path().join(run);
        let out = harderlasso(&["--seed", "21", "--jobs", jobs, "--output-dir", path_str(&out_dir), "qut", "--data", d, "--target", "y", "--hidden", "5,4"]);
        assert_eq!(code(&out), 0);
        outputs.push(std::fs::read(out_dir.join("qut.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let report: QutReport = serde_json::from_slice(&outputs[0]).unwrap();
    let table = harderlasso::data::read_table(&data, true).unwrap();
    let target = table.column_index(&"y".parse().unwrap()).unwrap();
    let features = harderlasso::data::prepare_features(&table, target).unwrap();
    let y = harderlasso::data::parse_targets(&table, target, harderlasso::losses::TaskKind::Regression).unwrap().y;
    let arch = Architecture::new(6, vec![5, 4], 1, harderlasso::network::Activation::ReLU).unwrap();
    let est = compute_qut(
        features.x.view(),
        y.view(),
        &arch,
        &TaskSpec::regression(),
        0.05,
        1000,
        derive_seed(21, &[TAG_QUT]),
    )
    .unwrap();
    assert_eq!(report.lambda_qut, est.lambda_qut);
    assert_eq!(report.base_seed, 21);
}

fn qut_value(dir: &Path, name: &str, extra: &[&str]) -> f64 {
    let out_dir = dir.join(name);
    let data = dir.join("d.csv");
    let mut args = vec!["--output-dir", path_str(&out_dir)];
    args.extend_from_slice(extra);
    args.extend(["qut", "--data", path_str(&data), "--target", "y"]);
    let out = harderlasso(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    read_json(out_dir.join("qut.json"))["lambda_qut"].as_f64().unwrap()
}

#[test]
fn alpha_is_monotone_and_config_flags_take_precedence() {
    let dir = tempfile::tempdir().unwrap();
    regression_csv(&dir.path().join("d.csv"), 50, 6);
    let strict = qut_value(dir.path(), "default", &[]);
    assert_eq!(strict, qut_value(dir.path(), "seed0", &["--seed", "0"]));

    let config = dir.path().join("run.toml");
    std::fs::write(&config, "hidden_widths = [3]\n\n[train]\nalpha = 0.5\nseed = 0\n").unwrap();
    let c = path_str(&config);
    let half = qut_value(dir.path(), "half", &["--config", c]);
    assert!(half <= strict, "{half} > {strict}");
    qut_value(dir.path(), "reseeded", &["--config", c, "--seed", "9"]);
    assert_eq!(read_json(dir.path().join("reseeded/qut.json"))["base_seed"], 9);

    let out_dir = dir.path().join("flag");
    let out = harderlasso(&[
        "--config", c, "--output-dir", path_str(&out_dir), "qut", "--data",
        path_str(&dir.path().join("d.csv")), "--target", "y", "--alpha", "0.05",
    ]);
    assert_eq!(code(&out), 0);
    let report = read_json(out_dir.join("qut.json"));
    assert_eq!(report["alpha"], 0.05);
    assert_eq!(report["lambda_qut"].as_f64().unwrap(), strict);
    assert_eq!(report["architecture"]["hidden_widths"], serde_json::json!([3]));

    std::fs::write(&config, "[train]\nalpha = \"high\"\n").unwrap();
    let out = harderlasso(&["--config", c, "qut", "--data", path_str(&dir.path().join("d.csv")), "--target", "y"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn classification_with_missing_values_and_a_test_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut write = |name: &str, n: usize, holes: bool| {
        let mut text = String::from("u,v,w,label\n");
        for i in 0..n {
            let (u, v, w): (f64, f64, f64) = (
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let e: f64 = StandardNormal.sample(&mut rng);
            let label = if 2.0 * v + 0.5 * e > 0.0 { "yes" } else { "no" };
            let w = if holes && i % 10 == 3 { String::new() } else { w.to_string() };
            text.push_str(&format!("{u},{v},{w},{label}\n"));
        }
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    };
    let train = write("train.csv", 200, true);
    let test = write("test.csv", 300, false);
    let o = path_str(dir.path());
    let out = harderlasso(&[
        "--output-dir", o, "fit", "--data", path_str(&train), "--target", "label",
        "--task", "classification", "--hidden", "4", "--test-file", path_str(&test),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(dir.path().join("report.json"));
    assert_eq!(report["imputed_values"], 20);
    assert_eq!(report["selected_features"], serde_json::json!(["v"]));
    let accuracy = report["test"]["accuracy"].as_f64().unwrap();
    assert!(accuracy > 0.85, "accuracy {accuracy}");

    let out = harderlasso(&["--output-dir", o, "predict", "--model", &format!("{o}/model.json"), "--data", path_str(&test)]);
    assert_eq!(code(&out), 0);
    let preds = dir.path().join("predictions.csv");
    let mut reader = csv::Reader::from_path(&preds).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ["label", "p_no", "p_yes"]);
    for record in reader.records() {
        let r = record.unwrap();
        let (p_no, p_yes): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((p_no + p_yes - 1.0).abs() < 1e-12);
        assert_eq!(&r[0], if p_yes > p_no { "yes" } else { "no" });
    }
}

#[test]
fn exhausted_budget_exits_with_five_and_still_writes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    regression_csv(&data, 60, 7);
    let config = dir.path().join("tight.toml");
    std::fs::write(&config, "[train]\nmax_iters_per_phase = 2\n").unwrap();
    let o = path_str(dir.path());
    let out = harderlasso(&["--config", path_str(&config), "--output-dir", o, "fit", "--data", path_str(&data), "--target", "y"]);
    assert_eq!(code(&out), 5);
    assert!(ModelFile::load(&dir.path().join("model.json")).is_ok());
    assert_eq!(read_json(dir.path().join("report.json"))["status"], "max_iters");
}

#[test]
fn pure_noise_files_mostly_select_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let runs = 20;
    let mut empty = 0;
    for seed in 0..runs {
        let data = dir.path().join(format!("noise{seed}.csv"));
        pure_noise_csv(&data, 50, 100, 100 + seed);
        let out_dir = dir.path().join(format!("fit{seed}"));
        let out = harderlasso(&[
            "--seed", &seed.to_string(), "--output-dir", path_str(&out_dir), "fit", "--data",
            path_str(&data), "--target", "y",
        ]);
        assert_eq!(code(&out), 0);
        let report = read_json(out_dir.join("report.json"));
        empty += usize::from(report["selected_features"].as_array().unwrap().is_empty());
    }
    // P(at most 15 of 20 | rate 0.95) is below 0.3%
    assert!(empty >= 16, "{empty} of {runs} empty");
}

#[test]
fn simulate_writes_csv_and_manifest_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let o = path_str(dir.path());
    let args = ["--output-dir", o, "--seed", "3", "simulate", "linear", "--n", "30", "--p", "40", "--s", "0:2:4", "--runs", "3", "--n-test", "20"];
    let first = harderlasso(&args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("s,n_runs,pesr,fdr,tpr,mean_l2,failures\n"));
    assert_eq!(csv.lines().count(), 4);
    let manifest = read_json(dir.path().join("sweep.json"));
    assert_eq!(manifest["spec"]["s_grid"], serde_json::json!([0, 2, 4]));

    let mut resumed_args = args.to_vec();
    resumed_args.push("--resume");
    let second = harderlasso(&resumed_args);
    assert_eq!(code(&second), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap(), csv);
    assert_eq!(read_json(dir.path().join("sweep.json"))["reused_cells"], 9);
}
