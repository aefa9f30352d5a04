use std::fs;

use passivity_cert::harness::{self, DatasetSource, ExperimentConfig, TrainingSettings};
use passivity_cert::linalg::Matrix;
use passivity_cert::model::{LayerParams, MlpModel, OutputActivation};
use passivity_cert::par::ExecMode;
use passivity_cert::passivity::{certify, BoundPolicy};
use passivity_cert::Error;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic {
            n_samples: 300,
            features: 6,
            noise_std: 0.05,
        },
        depths: vec![2, 3],
        pca_components: 6,
        out_dir: dir.to_path_buf(),
        training: TrainingSettings {
            max_epochs: 15,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn stages_compose_and_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let trained = harness::cmd_train(&cfg).unwrap();
    assert_eq!(trained.iter().map(|t| t.depth).collect::<Vec<_>>(), vec![2, 3]);
    for t in &trained {
        assert!(t.best_epoch >= 1 && t.best_epoch <= t.epochs_run);
        let log = fs::read_to_string(harness::train_log_path(dir.path(), t.depth)).unwrap();
        assert!(log.starts_with("epoch,train_mse,val_mse,penalty,lambda\n"));
        assert_eq!(log.lines().count(), t.epochs_run + 1);
    }

    let certs = harness::cmd_certify(&cfg).unwrap();
    assert_eq!(certs[0].cascade_layers, 3);
    assert_eq!(certs[1].cascade_layers, 4);

    let evals = harness::cmd_attack(&cfg).unwrap();
    for e in &evals {
        assert_eq!(e.summary.points, 60);
        let csv = fs::read_to_string(harness::evaluation_path(dir.path(), e.depth)).unwrap();
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("point_index,delta_star,ratio,bound_ratio,violated,dev_sq_1"));
        assert_eq!(csv.lines().count(), 61);
    }

    let report = harness::cmd_report(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(
        report.total_violations,
        evals.iter().map(|e| e.summary.violations).sum::<usize>()
    );
    for f in ["summary.csv", "summary.json", "ratios_boxplot.svg", "nu_histogram.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn retraining_with_same_seed_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    harness::cmd_train(&small_config(a.path())).unwrap();
    harness::cmd_train(&small_config(b.path())).unwrap();
    for d in [2, 3] {
        assert_eq!(
            fs::read(harness::model_path(a.path(), d)).unwrap(),
            fs::read(harness::model_path(b.path(), d)).unwrap()
        );
    }
}

#[test]
fn sequential_and_parallel_runs_match() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = harness::run_all_with(&small_config(a.path()), ExecMode::Sequential).unwrap();
    let rb = harness::run_all_with(&small_config(b.path()), ExecMode::Parallel).unwrap();
    assert_eq!(ra, rb);
    for d in [2, 3] {
        assert_eq!(
            fs::read(harness::evaluation_path(a.path(), d)).unwrap(),
            fs::read(harness::evaluation_path(b.path(), d)).unwrap()
        );
    }
}

#[test]
fn invalid_slope_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        slope_a: 1.2,
        ..small_config(&dir.path().join("out"))
    };
    assert!(matches!(harness::cmd_train(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn depth_two_unit_nu_gives_quarter_rho() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    // Weight 2/n_out per entry gives ν = 1 at a = 0.5.
    let layer = |n_in: usize, n_out: usize| {
        let w = 2.0 / n_out as f64;
        LayerParams::new(Matrix::new(n_out, n_in, vec![w; n_in * n_out]).unwrap(), vec![0.0; n_out]).unwrap()
    };
    let m = MlpModel::new(vec![layer(6, 6), layer(6, 6), layer(6, 1)], 0.5, OutputActivation::LeakyRelu).unwrap();
    fs::write(harness::model_path(dir.path(), 2), m.to_json()).unwrap();
    let c = harness::certify_depth(&cfg, 2).unwrap();
    assert!(c.certified);
    assert!((c.rho.unwrap() - 0.25).abs() < 1e-9);
    assert!((c.bound_ratio.unwrap() - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn report_from_handwritten_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        depths: vec![2],
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    // Weight 2/n_out per entry gives ν = 1 at a = 0.5.
    let layer = |n_in: usize, n_out: usize| {
        let w = 2.0 / n_out as f64;
        LayerParams::new(Matrix::new(n_out, n_in, vec![w; n_in * n_out]).unwrap(), vec![0.0; n_out]).unwrap()
    };
    let m = MlpModel::new(vec![layer(2, 2), layer(2, 2), layer(2, 1)], 0.5, OutputActivation::LeakyRelu).unwrap();
    let cert = certify(&m, 1.0, &BoundPolicy::default()).unwrap();
    fs::write(harness::certificate_path(dir.path(), 2), cert.to_json()).unwrap();
    fs::write(
        harness::evaluation_path(dir.path(), 2),
        "point_index,delta_star,ratio,bound_ratio,violated,dev_sq_1\n0,0.1,0.1,0.5,0,1\n1,0.1,0.2,0.5,0,1\n2,0.1,0.3,0.5,0,1\n",
    )
    .unwrap();
    let r = harness::cmd_report(&cfg).unwrap();
    assert_eq!(r.rows[0].ratios.unwrap().median, 0.2);
    let svg = fs::read_to_string(dir.path().join("ratios_boxplot.svg")).unwrap();
    assert!(svg.contains(r#"class="median" data-value="0.2""#));
    assert!(svg.contains(r#"class="bound" data-value="0.5""#));
    assert!(!svg.contains("BOUND VIOLATED"));
    let hist = fs::read_to_string(dir.path().join("nu_histogram.svg")).unwrap();
    // All three layers share ν = 1: a single bin.
    assert_eq!(hist.matches(r#"class="bin""#).count(), 1);

    fs::write(harness::evaluation_path(dir.path(), 2), "point_index,ratio\n0,x\n").unwrap();
    assert!(matches!(harness::cmd_report(&cfg), Err(Error::Parse { .. })));
}

#[test]
fn empty_test_split_attacks_nothing() {
    let m = {
        let layer = |n: usize, o: usize| {
            LayerParams::new(Matrix::new(o, n, vec![1.0; n * o]).unwrap(), vec![0.0; o]).unwrap()
        };
        MlpModel::new(vec![layer(2, 2), layer(2, 2), layer(2, 1)], 0.5, OutputActivation::LeakyRelu).unwrap()
    };
    let cert = certify(&m, 1.0, &BoundPolicy::default()).unwrap();
    let e = passivity_cert::attack::evaluate_dataset(&m, &cert, &[], &Default::default()).unwrap();
    assert_eq!((e.summary.points, e.summary.violations), (0, 0));
}

#[test]
fn csv_dataset_flows_through_preparation() {
    let fixture = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/diabetes.csv");
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Csv {
            path: fixture,
            target_column: "progression".into(),
        },
        ..Default::default()
    };
    let data = harness::prepare_data(&cfg).unwrap();
    assert_eq!(data.train.len() + data.validation.len() + data.test.len(), 442);
    assert_eq!(data.train.dim(), 10);
    // The partly missing column is gone before preprocessing.
    assert_eq!(data.preprocessor.kept_columns.len(), 10);
    assert!(data.train.targets.iter().all(|t| (0.0..=1.0).contains(t)));
}
