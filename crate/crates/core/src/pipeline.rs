//! Nested cross-validation of the selection + regression pipeline.
//!
//! The outer loop is leave-one-out. Each outer fold runs feature selection on
//! its training rows only, tunes the kernel width by an inner k-fold search,
//! trains on all training rows and predicts the held-out row. Labels of the
//! held-out row are read only after its prediction exists, when the report is
//! assembled.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featsel::{select_features, FeatureMatrix, SelectionConfig, SelectionResult};
use crate::features::{FeatureDescriptor, FeatureVector};
use crate::infotheory::mean_sd;
use crate::metrics::{SohLabels, Task};
use crate::rvr::{self, KernelConfig, RVRModel, TrainingLimits};

pub const MIN_DATASET_ROWS: usize = 20;

/// Identifies one charge: a module under one C-rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowKey {
    pub module_id: String,
    pub c_rate: f64,
}

impl RowKey {
    pub fn new(module_id: impl Into<String>, c_rate: f64) -> Self {
        Self {
            module_id: module_id.into(),
            c_rate,
        }
    }

    pub fn matches(&self, other: &RowKey) -> bool {
        self.module_id == other.module_id && (self.c_rate - other.c_rate).abs() < 1e-9
    }
}

/// Feature values per charge; absent values are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    names: Vec<String>,
    keys: Vec<RowKey>,
    rows: Vec<Vec<Option<f64>>>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, keys: Vec<RowKey>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if keys.len() != rows.len() {
            return Err(Error::Input("one key per feature row required".into()));
        }
        if rows.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Input("feature rows must match the header".into()));
        }
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return Err(Error::Input("feature names must be unique".into()));
        }
        if rows.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("feature values must be finite".into()));
        }
        Ok(Self { names, keys, rows })
    }

    /// Union of all feature names, in canonical order.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Self {
        let names: BTreeSet<FeatureDescriptor> =
            vectors.iter().flat_map(|v| v.values.keys().copied()).collect();
        let rows = vectors
            .iter()
            .map(|v| names.iter().map(|n| v.get(n)).collect())
            .collect();
        Self {
            names: names.iter().map(FeatureDescriptor::name).collect(),
            keys: vectors
                .iter()
                .map(|v| RowKey::new(v.module_id.clone(), v.c_rate))
                .collect(),
            rows,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Input(format!("unknown feature '{name}'")))
    }

    /// Values of the named features for one row, or `None` if any is absent.
    pub fn row_values(&self, row: usize, names: &[String]) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            match self.rows[row][self.column_index(n)?] {
                Some(v) => out.push(v),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    /// Features present in at least `min_coverage` of `rows` and not
    /// constant over them.
    pub fn usable_columns(&self, rows: &[usize], min_coverage: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (j, name) in self.names.iter().enumerate() {
            let present: Vec<f64> = rows.iter().filter_map(|&r| self.rows[r][j]).collect();
            if present.len() < 2 || (present.len() as f64) < min_coverage * rows.len() as f64 {
                continue;
            }
            if mean_sd(&present).1 > 0.0 {
                out.push(name.clone());
            }
        }
        out
    }

    /// Complete-case rows (a subset of `rows`) and their matrix over `names`.
    pub fn complete_matrix(&self, rows: &[usize], names: &[String]) -> Result<(Vec<usize>, FeatureMatrix)> {
        let mut kept = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for &r in rows {
            if let Some(v) = self.row_values(r, names)? {
                kept.push(r);
                values.push(v);
            }
        }
        let columns = (0..names.len())
            .map(|j| values.iter().map(|v| v[j]).collect())
            .collect();
        Ok((kept, FeatureMatrix::new(names.to_vec(), columns)?))
    }
}

/// Read access to ground-truth labels by row and task.
pub trait LabelProvider: Sync {
    fn n_rows(&self) -> usize;
    fn label(&self, row: usize, task: Task) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    keys: Vec<RowKey>,
    labels: Vec<SohLabels>,
}

impl LabelTable {
    pub fn new(keys: Vec<RowKey>, labels: Vec<SohLabels>) -> Result<Self> {
        if keys.len() != labels.len() {
            return Err(Error::Input("one key per label row required".into()));
        }
        Ok(Self { keys, labels })
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn labels(&self) -> &[SohLabels] {
        &self.labels
    }

    /// Reorders the labels to follow `keys`; every key must be present.
    pub fn aligned_to(&self, keys: &[RowKey]) -> Result<Self> {
        let mut labels = Vec::with_capacity(keys.len());
        for k in keys {
            let i = self.keys.iter().position(|x| x.matches(k)).ok_or_else(|| {
                Error::Input(format!(
                    "no labels for module {} at C-rate {}",
                    k.module_id, k.c_rate
                ))
            })?;
            labels.push(self.labels[i].clone());
        }
        Ok(Self {
            keys: keys.to_vec(),
            labels,
        })
    }
}

impl LabelProvider for LabelTable {
    fn n_rows(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, row: usize, task: Task) -> Result<f64> {
        self.labels
            .get(row)
            .map(|l| l.get(task))
            .ok_or_else(|| Error::Input(format!("no label row {row}")))
    }
}

/// Training data handed to a predictor for one outer fold.
pub struct FoldData<'a> {
    pub train_x: &'a [Vec<f64>],
    pub train_y: &'a [f64],
    pub test_x: &'a [f64],
    pub test_row: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub mean: f64,
    pub variance: f64,
    pub n_rv: usize,
    pub kernel_width: Option<f64>,
    /// Digest of the fitted model.
    pub fingerprint: String,
}

pub trait Predictor: Sync {
    fn predict(&self, fold: &FoldData<'_>) -> Result<FoldPrediction>;
}

/// Relevance vector regression with the kernel width chosen by inner k-fold
/// cross-validation on mean absolute error.
#[derive(Debug, Clone, PartialEq)]
pub struct RvrPredictor {
    pub kernel_widths: Vec<f64>,
    pub inner_folds: usize,
    pub limits: TrainingLimits,
}

impl RvrPredictor {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            kernel_widths: config.kernel_widths.clone(),
            inner_folds: config.inner_folds,
            limits: config.limits,
        }
    }

    /// Inner-CV mean absolute error for each width (`inf` if training fails).
    pub fn width_scores(&self, x: &[Vec<f64>], y: &[f64], seed: u64) -> Vec<f64> {
        let n = x.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = self.inner_folds.min(n);
        self.kernel_widths
            .iter()
            .map(|&w| {
                let mut total = 0.0;
                for f in 0..k {
                    let (test, train): (Vec<_>, Vec<(usize, &usize)>) =
                        order.iter().enumerate().partition(|(pos, _)| pos % k == f);
                    let tx: Vec<Vec<f64>> = train.iter().map(|(_, &i)| x[i].clone()).collect();
                    let ty: Vec<f64> = train.iter().map(|(_, &i)| y[i]).collect();
                    let model = match rvr::train(&tx, &ty, KernelConfig::rbf(w), self.limits) {
                        Ok(m) => m,
                        Err(e) => {
                            log::debug!("inner fold failed at width {w}: {e}");
                            return f64::INFINITY;
                        }
                    };
                    for (_, &i) in &test {
                        match model.predict(&x[i]) {
                            Ok(p) => total += (p.mean - y[i]).abs(),
                            Err(_) => return f64::INFINITY,
                        }
                    }
                }
                total / n as f64
            })
            .collect()
    }
}

impl RvrPredictor {
    /// Picks the width with the lowest inner-CV error and trains on all rows.
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<RVRModel> {
        let scores = self.width_scores(x, y, seed);
        let (best, score) =
            scores.iter().enumerate().fold(
                (0, f64::INFINITY),
                |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc },
            );
        if !score.is_finite() {
            return Err(Error::Numeric(
                "inner cross-validation failed for every kernel width".into(),
            ));
        }
        rvr::train(x, y, KernelConfig::rbf(self.kernel_widths[best]), self.limits)
    }
}

impl Predictor for RvrPredictor {
    fn predict(&self, fold: &FoldData<'_>) -> Result<FoldPrediction> {
        let model = self
            .fit(fold.train_x, fold.train_y, fold.seed)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} (row {})", fold.test_row)),
                other => other,
            })?;
        let p = model.predict(fold.test_x)?;
        Ok(FoldPrediction {
            mean: p.mean,
            variance: p.variance,
            n_rv: model.n_relevance_vectors(),
            kernel_width: Some(model.kernel.width),
            fingerprint: fingerprint(&model.to_json()?),
        })
    }
}

pub fn fingerprint(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    pub n_features: usize,
    pub sweep: Vec<usize>,
    pub inner_folds: usize,
    pub kernel_widths: Vec<f64>,
    pub selection: SelectionConfig,
    /// Features present in fewer training rows than this fraction are not
    /// candidates.
    pub min_feature_coverage: f64,
    pub seed: u64,
    pub limits: TrainingLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Sd,
            n_features: 6,
            sweep: (1..=8).collect(),
            inner_folds: 10,
            kernel_widths: vec![0.5, 1.0, 2.0, 4.0],
            selection: SelectionConfig::default(),
            min_feature_coverage: 0.95,
            seed: 0,
            limits: TrainingLimits::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.sweep.contains(&0) {
            return Err(Error::Config("feature counts must be at least 1".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::Config("inner_folds must be at least 2".into()));
        }
        if self.kernel_widths.is_empty() || self.kernel_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config(
                "kernel widths must be positive and nonempty".into(),
            ));
        }
        if !(self.min_feature_coverage > 0.0 && self.min_feature_coverage <= 1.0) {
            return Err(Error::Config("min_feature_coverage must lie in (0, 1]".into()));
        }
        self.selection.validate()?;
        self.limits.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub module_id: String,
    pub c_rate: f64,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_rv: usize,
    pub kernel_width: Option<f64>,
    pub features: Vec<String>,
    pub fingerprint: String,
}

impl ReportRow {
    pub fn contains_truth(&self) -> bool {
        (self.truth - self.mean).abs() <= 3.0 * self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub module_id: String,
    pub c_rate: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub n_features: usize,
    pub rows: Vec<ReportRow>,
    pub excluded: Vec<ExcludedRow>,
    pub mae: f64,
    pub avg_three_sigma: f64,
    /// Mean relevance-vector count over outer folds.
    pub n_rv: f64,
    pub coverage: f64,
    pub pearson_r: f64,
}

/// Fraction of rows whose truth lies within three standard deviations of
/// the prediction (boundary included).
pub fn evaluate_intervals(rows: &[ReportRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.contains_truth()).count() as f64 / rows.len() as f64
}

pub fn pearson_r(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    if !(sa > 0.0 && sb > 0.0) {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    cov / (sa * sb)
}

fn summarize(
    task: Task,
    n_features: usize,
    rows: Vec<ReportRow>,
    excluded: Vec<ExcludedRow>,
) -> EvaluationReport {
    let n = rows.len().max(1) as f64;
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    let pred: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    EvaluationReport {
        task,
        n_features,
        mae: rows.iter().map(|r| (r.mean - r.truth).abs()).sum::<f64>() / n,
        avg_three_sigma: rows.iter().map(|r| 3.0 * r.sd).sum::<f64>() / n,
        n_rv: rows.iter().map(|r| r.n_rv as f64).sum::<f64>() / n,
        coverage: evaluate_intervals(&rows),
        pearson_r: if rows.len() > 1 {
            pearson_r(&truth, &pred)
        } else {
            0.0
        },
        rows,
        excluded,
    }
}

/// Outcome of one outer fold for one feature count.
#[derive(Debug, Clone, PartialEq)]
pub enum FoldOutcome {
    Predicted {
        features: Vec<String>,
        prediction: FoldPrediction,
    },
    Excluded(String),
}

/// Runs outer fold `test_row` for every requested feature count. Reads
/// labels of the training rows only.
pub fn outer_fold(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
    counts: &[usize],
    predictor: &dyn Predictor,
    test_row: usize,
) -> Result<Vec<FoldOutcome>> {
    let train_rows: Vec<usize> = (0..table.n_rows()).filter(|&r| r != test_row).collect();
    let candidates = table.usable_columns(&train_rows, config.min_feature_coverage);
    let ranking = rank_features(table, labels, config, &train_rows, &candidates)?;
    let seed = config.seed ^ (test_row as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);

    counts
        .iter()
        .map(|&n| {
            if n > ranking.len() {
                return Err(Error::Config(format!(
                    "{n} features requested but only {} were selected",
                    ranking.len()
                )));
            }
            let names = ranking[..n].to_vec();
            let Some(test_x) = table.row_values(test_row, &names)? else {
                return Ok(FoldOutcome::Excluded(format!(
                    "missing one of the selected features {names:?}"
                )));
            };
            let (rows, matrix) = table.complete_matrix(&train_rows, &names)?;
            let train_x: Vec<Vec<f64>> = (0..rows.len())
                .map(|i| matrix.columns().iter().map(|c| c[i]).collect())
                .collect();
            let train_y = rows
                .iter()
                .map(|&r| labels.label(r, config.task))
                .collect::<Result<Vec<f64>>>()?;
            let prediction = predictor.predict(&FoldData {
                train_x: &train_x,
                train_y: &train_y,
                test_x: &test_x,
                test_row,
                seed,
            })?;
            Ok(FoldOutcome::Predicted {
                features: names,
                prediction,
            })
        })
        .collect()
}

fn rank_features(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
    rows: &[usize],
    candidates: &[String],
) -> Result<Vec<String>> {
    let (kept, matrix) = table.complete_matrix(rows, candidates)?;
    log::debug!(
        "selection on {} of {} rows over {} candidates",
        kept.len(),
        rows.len(),
        candidates.len()
    );
    let target = kept
        .iter()
        .map(|&r| labels.label(r, config.task))
        .collect::<Result<Vec<f64>>>()?;
    let result = select_features(&matrix, &target, &[], config.selection)?;
    Ok(result.selected_names())
}

/// Selection on every row, for presentation only; evaluation never uses it.
pub fn global_ranking(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
) -> Result<SelectionResult> {
    config.validate()?;
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let candidates = table.usable_columns(&rows, config.min_feature_coverage);
    let (kept, matrix) = table.complete_matrix(&rows, &candidates)?;
    let target = kept
        .iter()
        .map(|&r| labels.label(r, config.task))
        .collect::<Result<Vec<f64>>>()?;
    select_features(&matrix, &target, &[], config.selection)
}

/// One report per feature count; the per-fold ranking is computed once and
/// shared by all counts.
pub fn run_sweep(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
    counts: &[usize],
    predictor: &dyn Predictor,
) -> Result<Vec<EvaluationReport>> {
    config.validate()?;
    if counts.is_empty() {
        return Err(Error::Config("no feature counts requested".into()));
    }
    let n = table.n_rows();
    if n < MIN_DATASET_ROWS {
        return Err(Error::Input(format!(
            "nested cross-validation needs at least {MIN_DATASET_ROWS} rows, got {n}"
        )));
    }
    if labels.n_rows() != n {
        return Err(Error::Input(format!(
            "{} label rows for {n} feature rows",
            labels.n_rows()
        )));
    }
    let folds: Vec<usize> = (0..n).collect();
    let outcomes = crate::par_map(&folds, |&i| {
        outer_fold(table, labels, config, counts, predictor, i)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(counts.len());
    for (c, &count) in counts.iter().enumerate() {
        let mut rows = Vec::new();
        let mut excluded = Vec::new();
        for (i, per_count) in outcomes.iter().enumerate() {
            let key = &table.keys()[i];
            match &per_count[c] {
                FoldOutcome::Predicted { features, prediction } => {
                    let sd = prediction.variance.sqrt();
                    rows.push(ReportRow {
                        module_id: key.module_id.clone(),
                        c_rate: key.c_rate,
                        truth: labels.label(i, config.task)?,
                        mean: prediction.mean,
                        sd,
                        lower: prediction.mean - 3.0 * sd,
                        upper: prediction.mean + 3.0 * sd,
                        n_rv: prediction.n_rv,
                        kernel_width: prediction.kernel_width,
                        features: features.clone(),
                        fingerprint: prediction.fingerprint.clone(),
                    });
                }
                FoldOutcome::Excluded(reason) => excluded.push(ExcludedRow {
                    module_id: key.module_id.clone(),
                    c_rate: key.c_rate,
                    reason: reason.clone(),
                }),
            }
        }
        if !excluded.is_empty() {
            log::info!("{} rows excluded at {count} features", excluded.len());
        }
        reports.push(summarize(config.task, count, rows, excluded));
    }
    Ok(reports)
}

pub fn nested_cv(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
    predictor: &dyn Predictor,
) -> Result<EvaluationReport> {
    Ok(run_sweep(table, labels, config, &[config.n_features], predictor)?
        .pop()
        .expect("one count"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_features: usize,
    pub mae: f64,
    pub avg_three_sigma: f64,
    pub n_rv: f64,
    pub coverage: f64,
    pub pearson_r: f64,
}

impl From<&EvaluationReport> for SweepRow {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            n_features: r.n_features,
            mae: r.mae,
            avg_three_sigma: r.avg_three_sigma,
            n_rv: r.n_rv,
            coverage: r.coverage,
            pearson_r: r.pearson_r,
        }
    }
}

pub fn feature_count_sweep(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
    predictor: &dyn Predictor,
) -> Result<Vec<SweepRow>> {
    Ok(run_sweep(table, labels, config, &config.sweep, predictor)?
        .iter()
        .map(SweepRow::from)
        .collect())
}

/// A regressor trained on every row, with the features it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEstimator {
    pub task: Task,
    pub features: Vec<String>,
    pub model: RVRModel,
}

impl TrainedEstimator {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut e: Self = serde_json::from_str(s)?;
        e.model = e.model.checked()?;
        if e.model.input_dim() != e.features.len() {
            return Err(Error::Input(format!(
                "model expects {} inputs but lists {} features",
                e.model.input_dim(),
                e.features.len()
            )));
        }
        Ok(e)
    }

    /// Predicts every row of `table`; rows lacking a feature are excluded.
    pub fn evaluate(&self, table: &FeatureTable, labels: &dyn LabelProvider) -> Result<EvaluationReport> {
        if labels.n_rows() != table.n_rows() {
            return Err(Error::Input(format!(
                "{} label rows for {} feature rows",
                labels.n_rows(),
                table.n_rows()
            )));
        }
        let print = fingerprint(&self.model.to_json()?);
        let mut rows = Vec::new();
        let mut excluded = Vec::new();
        for (i, key) in table.keys().iter().enumerate() {
            let Some(x) = table.row_values(i, &self.features)? else {
                excluded.push(ExcludedRow {
                    module_id: key.module_id.clone(),
                    c_rate: key.c_rate,
                    reason: "missing a model feature".into(),
                });
                continue;
            };
            let p = self.model.predict(&x)?;
            rows.push(ReportRow {
                module_id: key.module_id.clone(),
                c_rate: key.c_rate,
                truth: labels.label(i, self.task)?,
                mean: p.mean,
                sd: p.sd(),
                lower: p.lower,
                upper: p.upper,
                n_rv: self.model.n_relevance_vectors(),
                kernel_width: Some(self.model.kernel.width),
                features: self.features.clone(),
                fingerprint: print.clone(),
            });
        }
        Ok(summarize(self.task, self.features.len(), rows, excluded))
    }
}

/// Selects `config.n_features` features on every row and trains one model.
pub fn train_estimator(
    table: &FeatureTable,
    labels: &dyn LabelProvider,
    config: &RunConfig,
    predictor: &RvrPredictor,
) -> Result<TrainedEstimator> {
    let ranking = global_ranking(table, labels, config)?.selected_names();
    if config.n_features > ranking.len() {
        return Err(Error::Config(format!(
            "{} features requested but only {} were selected",
            config.n_features,
            ranking.len()
        )));
    }
    let features = ranking[..config.n_features].to_vec();
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    let (kept, matrix) = table.complete_matrix(&rows, &features)?;
    let x: Vec<Vec<f64>> = (0..kept.len())
        .map(|i| matrix.columns().iter().map(|c| c[i]).collect())
        .collect();
    let y = kept
        .iter()
        .map(|&r| labels.label(r, config.task))
        .collect::<Result<Vec<f64>>>()?;
    Ok(TrainedEstimator {
        task: config.task,
        features,
        model: predictor.fit(&x, &y, config.seed)?,
    })
}
