use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sparse_conformal::conformal::LabeledLogitDataset;
use sparse_conformal::harness::synthetic::GaussianTask;
use sparse_conformal::harness::{
    load_dataset, parse_dataset, plot_data_rows, run_experiment_on, write_dataset,
    ExperimentConfig, ExperimentReport, HarnessError, MethodSpec,
};
use sparse_conformal::tuning::{split, SplitSpec};

fn data(seed: u64, n: usize) -> LabeledLogitDataset {
    GaussianTask {
        seed,
        ..Default::default()
    }
    .sample(n)
    .unwrap()
}

fn config(methods: Vec<MethodSpec>, alphas: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        input_path: "unused.csv".into(),
        methods,
        alphas,
        n_splits: 5,
        cal_fraction: 0.4,
        base_seed: 100,
        bins: None,
        output_path: None,
    }
}

#[test]
fn report_has_one_cell_per_split_method_and_alpha() {
    let d = data(1, 500);
    let cfg = config(
        vec![MethodSpec::Sparsemax, MethodSpec::Entmax { gamma: 1.5 }],
        vec![0.05, 0.1, 0.2],
    );
    let report = run_experiment_on(&d, &cfg).unwrap();
    assert_eq!(report.cells.len(), 30);
    assert_eq!(report.split_seeds, vec![100, 101, 102, 103, 104]);
    assert_eq!(report.num_classes, 10);
    for cell in &report.cells {
        assert_eq!(cell.calib_n, 200);
        assert_eq!(cell.test_n, 300);
        assert_eq!(cell.seed, 100 + cell.split as u64);
    }
    assert!(report.cell("1.5-entmax", 0.1, 4).is_some());

    let rows = plot_data_rows(&report);
    let singles_everywhere = report
        .cells
        .iter()
        .all(|c| c.metrics.singleton_coverage.is_some());
    if singles_everywhere {
        assert_eq!(rows.len(), 2 * 3 * 5 * 4);
    }
    let keys: Vec<_> = rows
        .iter()
        .map(|r| (r.method.clone(), r.alpha, r.split, r.metric))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(b.3))
    });
    assert_eq!(keys, sorted);
}

#[test]
fn aggregates_use_the_sample_standard_deviation() {
    let d = data(2, 400);
    let cfg = config(vec![MethodSpec::LogMargin], vec![0.1]);
    let report = run_experiment_on(&d, &cfg).unwrap();
    let values: Vec<f64> = report.cells.iter().map(|c| c.metrics.coverage).collect();
    let mean = values.iter().sum::<f64>() / 5.0;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    let agg = report.aggregate("log-margin", 0.1, "coverage").unwrap();
    assert_eq!(agg.n, 5);
    assert!((agg.mean.unwrap() - mean).abs() < 1e-12);
    assert!((agg.std.unwrap() - var.sqrt()).abs() < 1e-12);
}

#[test]
fn runs_are_deterministic() {
    let d = data(3, 400);
    let cfg = config(
        vec![
            MethodSpec::OptEntmax {
                gamma_grid: vec![1.2, 1.5, 1.8],
            },
            MethodSpec::Raps {
                lambda_reg: 0.01,
                k_reg: 5,
                randomized: true,
                rng_seed: 7,
            },
        ],
        vec![0.1, 0.2],
    );
    let a = serde_json::to_string(&run_experiment_on(&d, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_experiment_on(&d, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn test_labels_never_reach_calibration_or_tuning() {
    let d = data(4, 500);
    let cfg = config(
        vec![
            MethodSpec::Sparsemax,
            MethodSpec::OptEntmax {
                gamma_grid: vec![1.2, 1.5, 1.8],
            },
            MethodSpec::OptRaps {
                lambda_grid: vec![0.01, 0.1],
                k_grid: vec![1, 5],
                randomized: false,
                rng_seed: 0,
            },
        ],
        vec![0.1],
    );
    let clean = run_experiment_on(&d, &cfg).unwrap();

    // relabel the test part of split 0 and check nothing upstream moves
    let spec = SplitSpec::new(vec![0.4, 0.6], cfg.split_seed(0)).unwrap();
    let test_idx = &sparse_conformal::tuning::split_indices(d.len(), &spec).unwrap()[1];
    let mut instances = d.instances().to_vec();
    for &i in test_idx {
        instances[i].1 = (instances[i].1 + 3) % 10;
    }
    let scrambled = LabeledLogitDataset::new(instances).unwrap();
    assert_eq!(
        split(&scrambled, &spec).unwrap()[0],
        split(&d, &spec).unwrap()[0]
    );
    let mut one_split = cfg.clone();
    one_split.n_splits = 1;
    let dirty = run_experiment_on(&scrambled, &one_split).unwrap();
    for cell in &dirty.cells {
        let reference = clean.cell(&cell.method, cell.alpha, 0).unwrap();
        assert_eq!(cell.q_hat, reference.q_hat, "{}", cell.method);
        assert_eq!(cell.tuned, reference.tuned, "{}", cell.method);
        assert_eq!(cell.metrics.avg_set_size, reference.metrics.avg_set_size);
    }
}

#[test]
fn config_errors_are_reported() {
    let d = data(5, 100);
    let mut cfg = config(vec![MethodSpec::Sparsemax], vec![0.2, 0.1]);
    assert!(matches!(
        run_experiment_on(&d, &cfg),
        Err(HarnessError::Config(_))
    ));
    cfg.alphas = vec![0.1];
    cfg.methods = vec![MethodSpec::Entmax { gamma: 3.0 }];
    assert!(run_experiment_on(&d, &cfg).is_err());
    let err = serde_json::from_str::<ExperimentConfig>(
        r#"{"input_path": "x", "methods": [], "alphas": [0.1], "extra": 1}"#,
    );
    assert!(err.is_err());
}

#[test]
fn config_defaults_fill_in() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{"input_path": "x.csv", "methods": [{"kind": "opt_raps"}, {"kind": "entmax", "gamma": 1.5}], "alphas": [0.1]}"#,
    )
    .unwrap();
    assert_eq!(cfg.n_splits, 5);
    assert_eq!(cfg.cal_fraction, 0.4);
    assert_eq!(cfg.base_seed, 0);
    match &cfg.methods[0] {
        MethodSpec::OptRaps {
            lambda_grid,
            k_grid,
            ..
        } => {
            assert_eq!(lambda_grid.len(), 4);
            assert_eq!(k_grid, &vec![1, 5, 10, 50]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn csv_round_trip() {
    let d = data(6, 30);
    let mut buf = Vec::new();
    write_dataset(&d, &mut buf).unwrap();
    let back = parse_dataset(buf.as_slice()).unwrap();
    assert_eq!(back.labels(), d.labels());
    for (a, b) in back.logits().zip(d.logits()) {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn malformed_csv_is_rejected() {
    let bad = [
        "label,z0,z1\n0,1.0\n",
        "label,z0,z1\n2,1.0,0.0\n",
        "label,z0,z1\nx,1.0,0.0\n",
        "label,z0,z1\n0,1.0,nan\n",
        "label,z0\n0,1.0\n",
        "y,z0,z1\n0,1.0,0.0\n",
    ];
    for text in bad {
        let err = parse_dataset(text.as_bytes()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text:?}: {err}");
    }
}

// command line

fn sparsecp(args: &[&str], stdin: Option<&str>) -> Output {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_sparsecp"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    if let Some(text) = stdin {
        child
            .stdin
            .take()
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
    }
    drop(child.stdin.take());
    child.wait_with_output().unwrap()
}

fn write_csv(dir: &Path, name: &str, d: &LabeledLogitDataset) -> String {
    let path = dir.join(name);
    write_dataset(d, fs::File::create(&path).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn cli_transform_prints_probabilities_and_support() {
    let out = sparsecp(
        &["transform", "--gamma", "2"],
        Some("z0,z1,z2\n1.0,0.0,-1.0\n0.1,0.0,0.0\n"),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p0,p1,p2,support_size");
    assert_eq!(lines[1], "1.000000,0.000000,0.000000,1");
    assert!(lines[2].ends_with(",3"));
}

#[test]
fn cli_calibrate_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cal = write_csv(dir.path(), "cal.csv", &data(7, 400));
    let test = write_csv(dir.path(), "test.csv", &data(8, 300));
    let pred = dir.path().join("pred.json").display().to_string();
    let eval = dir.path().join("eval.json").display().to_string();

    let out = sparsecp(
        &[
            "calibrate",
            "--input",
            &cal,
            "--score",
            "entmax",
            "--gamma",
            "1.5",
            "--alpha",
            "0.1",
            "--out",
            &pred,
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(&pred).unwrap()).unwrap();
    assert_eq!(p["score_kind"], "entmax");
    assert_eq!(p["gamma"], 1.5);
    assert_eq!(p["calib_n"], 400);
    let q_hat = p["q_hat"].as_f64().unwrap();
    assert!((p["beta_inv"].as_f64().unwrap() - q_hat / 2.0).abs() < 1e-12);

    let out = sparsecp(
        &[
            "evaluate",
            "--predictor",
            &pred,
            "--input",
            &test,
            "--out",
            &eval,
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(e["metrics"]["n"], 300);
    let coverage = e["metrics"]["coverage"].as_f64().unwrap();
    assert!(coverage > 0.8, "coverage {coverage}");
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "label,z0,z1\n5,0.0,1.0\n").unwrap();
    let bad = bad.display().to_string();
    let out_file = dir.path().join("p.json").display().to_string();
    let missing = dir.path().join("missing.csv").display().to_string();

    let malformed = sparsecp(
        &[
            "calibrate",
            "--input",
            &bad,
            "--score",
            "sparsemax",
            "--alpha",
            "0.1",
            "--out",
            &out_file,
        ],
        None,
    );
    assert_eq!(malformed.status.code(), Some(2));

    let absent = sparsecp(
        &[
            "calibrate",
            "--input",
            &missing,
            "--score",
            "sparsemax",
            "--alpha",
            "0.1",
            "--out",
            &out_file,
        ],
        None,
    );
    assert_eq!(absent.status.code(), Some(3));

    let no_gamma = sparsecp(
        &[
            "calibrate",
            "--input",
            &bad,
            "--score",
            "entmax",
            "--alpha",
            "0.1",
            "--out",
            &out_file,
        ],
        None,
    );
    assert_eq!(no_gamma.status.code(), Some(2));

    let bad_gamma = sparsecp(&["transform", "--gamma", "0.5"], Some("z0,z1\n1,0\n"));
    assert_eq!(bad_gamma.status.code(), Some(2));

    // two instances cannot be split into calibration and test parts
    let tiny = write_csv(dir.path(), "tiny.csv", &data(9, 2));
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"input_path": {tiny:?}, "methods": [{{"kind": "sparsemax"}}], "alphas": [0.1]}}"#
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out").display().to_string();
    let starved = sparsecp(
        &[
            "sweep",
            "--config",
            &cfg.display().to_string(),
            "--out-dir",
            &out_dir,
        ],
        None,
    );
    assert_eq!(
        starved.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&starved.stderr)
    );
}

#[test]
fn cli_sweep_writes_report_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_csv(dir.path(), "data.csv", &data(10, 500));
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"input_path": {input:?}, "methods": [{{"kind": "sparsemax"}}, {{"kind": "inv_prob"}}], "alphas": [0.05, 0.1], "n_splits": 2, "base_seed": 3}}"#
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = sparsecp(
        &[
            "sweep",
            "--config",
            &cfg.display().to_string(),
            "--out-dir",
            &out_dir.display().to_string(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: ExperimentReport =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 8);
    let plot = fs::read_to_string(out_dir.join("plotdata.csv")).unwrap();
    let mut lines = plot.lines();
    assert_eq!(lines.next(), Some("method,alpha,split,metric,value"));
    let first = lines.next().unwrap();
    assert!(first.starts_with("InvProb,0.05,0,avg_set_size,"), "{first}");
    let value = first.rsplit(',').next().unwrap();
    assert_eq!(value.split('.').nth(1).unwrap().len(), 6);
    assert!(load_dataset(&input).is_ok());
}
