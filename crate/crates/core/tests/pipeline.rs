use std::sync::Mutex;

use modhealth_core::metrics::{compute_labels, Task};
use modhealth_core::pipeline::*;
use modhealth_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(n: usize, seed: u64) -> (FeatureTable, LabelTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let mean: f64 = rng.gen_range(0.8..0.98);
        let spread: f64 = rng.gen_range(0.0..0.1);
        let c_soh: Vec<f64> = (0..3)
            .map(|_| (mean + spread * rng.gen_range(-1.0..1.0)).min(1.0))
            .collect();
        let l = compute_labels(&c_soh).unwrap();
        rows.push(vec![
            Some(l.sd * 10.0 + 0.01 * rng.gen_range(-1.0..1.0)),
            Some(l.m_soh + 0.005 * rng.gen_range(-1.0..1.0)),
            Some(rng.gen_range(-1.0..1.0)),
            Some((l.sd * 10.0).powi(2) + 0.02 * rng.gen_range(-1.0..1.0)),
        ]);
        keys.push(RowKey::new(format!("m{i:03}"), 0.5));
        labels.push(l);
    }
    let names = ["a", "b", "noise", "a2"].map(String::from).to_vec();
    (
        FeatureTable::new(names, keys.clone(), rows).unwrap(),
        LabelTable::new(keys, labels).unwrap(),
    )
}

fn config(task: Task) -> RunConfig {
    RunConfig {
        task,
        n_features: 2,
        inner_folds: 4,
        kernel_widths: vec![1.0, 2.0],
        ..Default::default()
    }
}

/// Allows one task only and records which rows were read.
struct Guard<'a> {
    inner: &'a LabelTable,
    allowed: Task,
    reads: Mutex<Vec<usize>>,
}

impl<'a> Guard<'a> {
    fn new(inner: &'a LabelTable, allowed: Task) -> Self {
        Self {
            inner,
            allowed,
            reads: Mutex::new(Vec::new()),
        }
    }
}

impl LabelProvider for Guard<'_> {
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn label(&self, row: usize, task: Task) -> Result<f64> {
        assert_eq!(task, self.allowed, "read a label of the wrong task");
        self.reads.lock().unwrap().push(row);
        self.inner.label(row, task)
    }
}

/// Returns the true label with zero variance.
struct Oracle<'a> {
    labels: &'a LabelTable,
    task: Task,
}

impl Predictor for Oracle<'_> {
    fn predict(&self, fold: &FoldData<'_>) -> Result<FoldPrediction> {
        Ok(FoldPrediction {
            mean: self.labels.label(fold.test_row, self.task)?,
            variance: 0.0,
            n_rv: 0,
            kernel_width: None,
            fingerprint: String::new(),
        })
    }
}

#[test]
fn perfect_predictor_scores_perfectly() {
    let (table, labels) = dataset(40, 1);
    let cfg = config(Task::Sd);
    let oracle = Oracle {
        labels: &labels,
        task: Task::Sd,
    };
    let report = nested_cv(&table, &labels, &cfg, &oracle).unwrap();
    assert_eq!(report.mae, 0.0);
    assert_eq!(report.coverage, 1.0);
    assert!((report.pearson_r - 1.0).abs() < 1e-12);
}

#[test]
fn one_outer_fold_per_row() {
    let (table, labels) = dataset(40, 2);
    let cfg = config(Task::Sd);
    let report = nested_cv(&table, &labels, &cfg, &RvrPredictor::from_config(&cfg)).unwrap();
    assert_eq!(report.rows.len() + report.excluded.len(), 40);
    assert!(report.excluded.is_empty());
    assert!(report.mae >= 0.0 && (0.0..=1.0).contains(&report.coverage));
    assert!(report.pearson_r > 0.5, "r = {}", report.pearson_r);
}

#[test]
fn tasks_read_only_their_own_labels() {
    let (table, labels) = dataset(40, 3);
    for task in [Task::Sd, Task::MSoh] {
        let guard = Guard::new(&labels, task);
        let cfg = config(task);
        nested_cv(&table, &guard, &cfg, &RvrPredictor::from_config(&cfg)).unwrap();
        assert!(!guard.reads.lock().unwrap().is_empty());
    }
}

#[test]
fn outer_fold_never_reads_its_test_label() {
    let (table, labels) = dataset(40, 4);
    let cfg = config(Task::Sd);
    let predictor = RvrPredictor::from_config(&cfg);
    for test_row in [0, 17, 39] {
        let guard = Guard::new(&labels, Task::Sd);
        outer_fold(&table, &guard, &cfg, &[1, 2], &predictor, test_row).unwrap();
        assert!(!guard.reads.lock().unwrap().contains(&test_row));
    }
}

#[test]
fn replacing_the_test_label_leaves_the_model_unchanged() {
    let (table, labels) = dataset(40, 5);
    let cfg = config(Task::Sd);
    let predictor = RvrPredictor::from_config(&cfg);
    for test_row in [3, 21] {
        let mut changed = labels.labels().to_vec();
        changed[test_row] = compute_labels(&[0.61, 0.99, 0.75]).unwrap();
        let tampered = LabelTable::new(labels.keys().to_vec(), changed).unwrap();
        let a = outer_fold(&table, &labels, &cfg, &[2], &predictor, test_row).unwrap();
        let b = outer_fold(&table, &tampered, &cfg, &[2], &predictor, test_row).unwrap();
        assert_eq!(a, b);
        let FoldOutcome::Predicted { prediction, .. } = &a[0] else {
            panic!("row excluded")
        };
        assert_eq!(prediction.fingerprint.len(), 64);
    }
}

#[test]
fn reports_are_bitwise_reproducible() {
    let (table, labels) = dataset(40, 6);
    let cfg = config(Task::MSoh);
    let run = || {
        let r = nested_cv(&table, &labels, &cfg, &RvrPredictor::from_config(&cfg)).unwrap();
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn single_count_sweep_matches_nested_cv() {
    let (table, labels) = dataset(40, 7);
    let cfg = config(Task::Sd);
    let predictor = RvrPredictor::from_config(&cfg);
    let sweep = run_sweep(&table, &labels, &cfg, &[1, 2], &predictor).unwrap();
    let single = nested_cv(&table, &labels, &cfg, &predictor).unwrap();
    assert_eq!(sweep[1], single);
    let rows = feature_count_sweep(
        &table,
        &labels,
        &RunConfig {
            sweep: vec![1, 2],
            ..cfg.clone()
        },
        &predictor,
    )
    .unwrap();
    assert_eq!(rows[1], SweepRow::from(&single));
}

#[test]
fn rows_missing_a_selected_feature_are_excluded() {
    let (table, labels) = dataset(40, 8);
    let mut rows = table.rows().to_vec();
    for r in rows.iter_mut().take(1) {
        r.iter_mut().for_each(|v| *v = None);
    }
    let table = FeatureTable::new(table.names().to_vec(), table.keys().to_vec(), rows).unwrap();
    let cfg = config(Task::Sd);
    let oracle = Oracle {
        labels: &labels,
        task: Task::Sd,
    };
    let report = nested_cv(&table, &labels, &cfg, &oracle).unwrap();
    assert_eq!(report.excluded.len(), 1);
    assert_eq!(report.excluded[0].module_id, "m000");
    assert_eq!(report.rows.len(), 39);
}

#[test]
fn too_many_features_is_a_config_error() {
    let (table, labels) = dataset(40, 9);
    let cfg = RunConfig {
        n_features: 50,
        ..config(Task::Sd)
    };
    let oracle = Oracle {
        labels: &labels,
        task: Task::Sd,
    };
    let err = nested_cv(&table, &labels, &cfg, &oracle).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn small_datasets_are_rejected() {
    let (table, labels) = dataset(12, 10);
    let cfg = config(Task::Sd);
    assert!(nested_cv(&table, &labels, &cfg, &RvrPredictor::from_config(&cfg)).is_err());
}

#[test]
fn trained_estimator_round_trips_and_fits_its_training_rows() {
    let (table, labels) = dataset(40, 11);
    let cfg = config(Task::Sd);
    let est = train_estimator(&table, &labels, &cfg, &RvrPredictor::from_config(&cfg)).unwrap();
    assert_eq!(est.features.len(), 2);
    let back = TrainedEstimator::from_json(&est.to_json().unwrap()).unwrap();
    assert_eq!(back, est);
    let report = est.evaluate(&table, &labels).unwrap();
    assert_eq!(report.rows.len(), 40);
    assert!(report.pearson_r > 0.8, "r = {}", report.pearson_r);
}
