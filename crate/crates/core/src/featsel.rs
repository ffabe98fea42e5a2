//! Greedy feature selection balancing relevance, redundancy and
//! complementarity.
//!
//! A candidate `X` is scored against the selected set `S` and target `Y` as
//!
//! ```text
//! J(X) = Ĩ(X;Y) − (1/|S|) Σ Ĩ(X;Xj) + (1/|S|) Σ Ĩ(X;Xj|Y)
//! ```
//!
//! with every term a normalized, clipped kNN estimate. After each pick, any
//! remaining feature whose normalized MI with the pick reaches the threshold
//! is considered completely redundant and removed.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::{self, DEFAULT_K};

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub threshold: f64,
    pub k_neighbors: usize,
    /// Seed of the noise column shared by every MI estimate in a run.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            k_neighbors: DEFAULT_K,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::Config(format!(
                "redundancy threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.k_neighbors < 3 {
            return Err(Error::Config("k_neighbors must be at least 3".into()));
        }
        Ok(())
    }
}

/// Named, complete-case feature columns sharing one row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Input("one name per column required".into()));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Input("feature names must be unique".into()));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Input("feature columns differ in length".into()));
            }
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input(
                "feature matrix must be complete-case and finite".into(),
            ));
        }
        Ok(Self { names, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.columns[i].as_slice())
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            let c = self
                .column(n)
                .ok_or_else(|| Error::Input(format!("unknown feature '{n}'")))?;
            columns.push(c.to_vec());
        }
        Self::new(names.to_vec(), columns)
    }

    /// Drops columns with zero variance and returns their names.
    pub fn drop_constant(&mut self) -> Vec<String> {
        let mut dropped = Vec::new();
        let mut i = 0;
        while i < self.columns.len() {
            let (_, sd) = infotheory::mean_sd(&self.columns[i]);
            if sd > 0.0 {
                i += 1;
            } else {
                dropped.push(self.names.remove(i));
                self.columns.remove(i);
            }
        }
        dropped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub relevance: f64,
    pub avg_redundancy: f64,
    pub avg_complementarity: f64,
    pub total: f64,
}

impl CandidateScore {
    fn new(relevance: f64, avg_redundancy: f64, avg_complementarity: f64) -> Self {
        Self {
            relevance,
            avg_redundancy,
            avg_complementarity,
            total: relevance - avg_redundancy + avg_complementarity,
        }
    }
}

/// Memoizing source of normalized MI and CMI values for one feature matrix
/// and target.
pub struct Scorer<'a> {
    data: &'a FeatureMatrix,
    config: SelectionConfig,
    columns: Vec<Vec<f64>>,
    target: Vec<f64>,
    self_info: Vec<Option<f64>>,
    target_self: f64,
    relevance: Vec<Option<f64>>,
    redundancy: HashMap<(usize, usize), f64>,
    complementarity: HashMap<(usize, usize), f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(data: &'a FeatureMatrix, target: &[f64], config: SelectionConfig) -> Result<Self> {
        config.validate()?;
        if target.len() != data.n_rows() {
            return Err(Error::Input(format!(
                "target has {} rows, features have {}",
                target.len(),
                data.n_rows()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("target contains non-finite values".into()));
        }
        let mut columns = Vec::with_capacity(data.n_features());
        for (name, c) in data.names.iter().zip(&data.columns) {
            columns.push(infotheory::standardize_values(c).map_err(|e| match e {
                Error::Degenerate(_) => Error::Degenerate(format!("feature '{name}' is constant")),
                other => other,
            })?);
        }
        let target = infotheory::standardize_values(target)?;
        let target_self = infotheory::estimate_mi(&target, &target, config.k_neighbors, config.seed)?;
        let n = data.n_features();
        Ok(Self {
            data,
            config,
            columns,
            target,
            self_info: vec![None; n],
            target_self,
            relevance: vec![None; n],
            redundancy: HashMap::new(),
            complementarity: HashMap::new(),
        })
    }

    pub fn data(&self) -> &FeatureMatrix {
        self.data
    }

    fn self_info(&mut self, i: usize) -> Result<f64> {
        if let Some(v) = self.self_info[i] {
            return Ok(v);
        }
        let c = &self.columns[i];
        let v = infotheory::estimate_mi(c, c, self.config.k_neighbors, self.config.seed)?;
        self.self_info[i] = Some(v);
        Ok(v)
    }

    /// Ĩ(X_i; Y)
    pub fn relevance(&mut self, i: usize) -> Result<f64> {
        if let Some(v) = self.relevance[i] {
            return Ok(v);
        }
        let raw = infotheory::estimate_mi(
            &self.columns[i],
            &self.target,
            self.config.k_neighbors,
            self.config.seed,
        )?;
        let v = infotheory::normalize(raw, self.self_info(i)?, self.target_self)?;
        self.relevance[i] = Some(v);
        Ok(v)
    }

    /// Ĩ(X_i; X_j)
    pub fn redundancy(&mut self, i: usize, j: usize) -> Result<f64> {
        let key = (i.min(j), i.max(j));
        if let Some(&v) = self.redundancy.get(&key) {
            return Ok(v);
        }
        let raw = infotheory::estimate_mi(
            &self.columns[key.0],
            &self.columns[key.1],
            self.config.k_neighbors,
            self.config.seed,
        )?;
        let v = infotheory::normalize(raw, self.self_info(key.0)?, self.self_info(key.1)?)?;
        self.redundancy.insert(key, v);
        Ok(v)
    }

    /// Ĩ(X_i; X_j | Y)
    pub fn complementarity(&mut self, i: usize, j: usize) -> Result<f64> {
        let key = (i.min(j), i.max(j));
        if let Some(&v) = self.complementarity.get(&key) {
            return Ok(v);
        }
        let raw = infotheory::estimate_cmi(
            &self.columns[key.0],
            &self.columns[key.1],
            &self.target,
            self.config.k_neighbors,
        )?;
        let v = infotheory::normalize(raw, self.self_info(key.0)?, self.self_info(key.1)?)?;
        self.complementarity.insert(key, v);
        Ok(v)
    }
}

/// The partition of features into selected (in pick order), unselected and
/// removed sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub selected: Vec<usize>,
    pub unselected: BTreeSet<usize>,
    pub removed: BTreeSet<usize>,
    pub threshold: f64,
}

impl SelectionState {
    pub fn new(n_features: usize, threshold: f64) -> Self {
        Self {
            selected: Vec::new(),
            unselected: (0..n_features).collect(),
            removed: BTreeSet::new(),
            threshold,
        }
    }
}

/// Scores an unselected candidate against the current selected set.
pub fn score_candidate(
    scorer: &mut Scorer<'_>,
    state: &SelectionState,
    candidate: usize,
) -> Result<CandidateScore> {
    if !state.unselected.contains(&candidate) {
        return Err(Error::State(format!(
            "feature '{}' is not a candidate",
            scorer.data.names.get(candidate).map_or("?", String::as_str)
        )));
    }
    let relevance = scorer.relevance(candidate)?;
    if state.selected.is_empty() {
        return Ok(CandidateScore::new(relevance, 0.0, 0.0));
    }
    let (mut red, mut comp) = (0.0, 0.0);
    for &j in &state.selected {
        red += scorer.redundancy(candidate, j)?;
        comp += scorer.complementarity(candidate, j)?;
    }
    let m = state.selected.len() as f64;
    Ok(CandidateScore::new(relevance, red / m, comp / m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    /// `None` for preselected features.
    pub score: Option<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedFeature {
    pub name: String,
    /// The selected feature it duplicates.
    pub redundant_with: String,
    pub redundancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub selected: String,
    pub candidates: Vec<(String, CandidateScore)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub ranked_selected: Vec<RankedFeature>,
    pub removed: Vec<RemovedFeature>,
    pub iterations: Vec<IterationLog>,
    pub threshold: f64,
}

impl SelectionResult {
    pub fn selected_names(&self) -> Vec<String> {
        self.ranked_selected.iter().map(|f| f.name.clone()).collect()
    }

    pub fn removed_names(&self) -> Vec<String> {
        self.removed.iter().map(|f| f.name.clone()).collect()
    }

    pub fn top(&self, n: usize) -> Vec<String> {
        self.ranked_selected
            .iter()
            .take(n)
            .map(|f| f.name.clone())
            .collect()
    }
}

fn remove_redundant(
    scorer: &mut Scorer<'_>,
    state: &mut SelectionState,
    pick: usize,
    removed: &mut Vec<RemovedFeature>,
) -> Result<()> {
    let candidates: Vec<usize> = state.unselected.iter().copied().collect();
    for x in candidates {
        let r = scorer.redundancy(pick, x)?;
        if r >= state.threshold {
            state.unselected.remove(&x);
            state.removed.insert(x);
            removed.push(RemovedFeature {
                name: scorer.data.names[x].clone(),
                redundant_with: scorer.data.names[pick].clone(),
                redundancy: r,
            });
        }
    }
    Ok(())
}

/// Runs the greedy selection until no candidates remain. Exact score ties
/// go to the lexicographically smallest name.
pub fn select_features(
    data: &FeatureMatrix,
    target: &[f64],
    preselected: &[String],
    config: SelectionConfig,
) -> Result<SelectionResult> {
    if data.n_features() < 2 {
        return Err(Error::Input(format!(
            "need at least two candidate features, got {}",
            data.n_features()
        )));
    }
    let mut scorer = Scorer::new(data, target, config)?;
    let mut state = SelectionState::new(data.n_features(), config.threshold);
    let mut removed = Vec::new();
    let mut ranked = Vec::new();

    for name in preselected {
        let i = data
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("preselected feature '{name}' not found")))?;
        if !state.unselected.remove(&i) {
            return Err(Error::Config(format!("feature '{name}' preselected twice")));
        }
        state.selected.push(i);
        ranked.push(RankedFeature {
            name: name.clone(),
            score: None,
        });
    }
    for &s in &state.selected.clone() {
        remove_redundant(&mut scorer, &mut state, s, &mut removed)?;
    }

    let mut order: Vec<usize> = state.unselected.iter().copied().collect();
    order.sort_by(|&a, &b| data.names[a].cmp(&data.names[b]));

    let mut iterations = Vec::new();
    while !state.unselected.is_empty() {
        let mut scores = Vec::with_capacity(state.unselected.len());
        for &x in order.iter().filter(|x| state.unselected.contains(x)) {
            scores.push((x, score_candidate(&mut scorer, &state, x)?));
        }
        let mut best = 0;
        for (pos, (_, s)) in scores.iter().enumerate() {
            if s.total > scores[best].1.total {
                best = pos;
            }
        }
        let (pick, score) = scores[best];
        log::debug!("selected {} (J = {:.4})", data.names[pick], score.total);
        iterations.push(IterationLog {
            selected: data.names[pick].clone(),
            candidates: scores.iter().map(|(x, s)| (data.names[*x].clone(), *s)).collect(),
        });
        state.unselected.remove(&pick);
        state.selected.push(pick);
        ranked.push(RankedFeature {
            name: data.names[pick].clone(),
            score: Some(score),
        });
        remove_redundant(&mut scorer, &mut state, pick, &mut removed)?;
    }

    if ranked.is_empty() {
        return Err(Error::Degenerate(format!(
            "every feature was removed as redundant at threshold {}",
            config.threshold
        )));
    }
    Ok(SelectionResult {
        ranked_selected: ranked,
        removed,
        iterations,
        threshold: config.threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub name: String,
    pub relevance: Option<f64>,
    pub avg_redundancy: Option<f64>,
    pub avg_complementarity: Option<f64>,
    pub total: Option<f64>,
}

/// Importance ranking with the score components recorded at selection time.
pub fn rank_report(result: &SelectionResult) -> Vec<RankRow> {
    result
        .ranked_selected
        .iter()
        .enumerate()
        .map(|(i, f)| RankRow {
            rank: i + 1,
            name: f.name.clone(),
            relevance: f.score.map(|s| s.relevance),
            avg_redundancy: f.score.map(|s| s.avg_redundancy),
            avg_complementarity: f.score.map(|s| s.avg_complementarity),
            total: f.score.map(|s| s.total),
        })
        .collect()
}

/// Full pairwise relevance, redundancy and complementarity values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrices {
    pub names: Vec<String>,
    pub relevance: Vec<f64>,
    pub redundancy: Vec<Vec<f64>>,
    pub complementarity: Vec<Vec<f64>>,
}

pub fn score_matrices(
    data: &FeatureMatrix,
    target: &[f64],
    config: SelectionConfig,
) -> Result<ScoreMatrices> {
    let mut scorer = Scorer::new(data, target, config)?;
    let n = data.n_features();
    let mut relevance = Vec::with_capacity(n);
    let mut redundancy = vec![vec![0.0; n]; n];
    let mut complementarity = vec![vec![0.0; n]; n];
    for i in 0..n {
        relevance.push(scorer.relevance(i)?);
        for j in i..n {
            let r = scorer.redundancy(i, j)?;
            let c = scorer.complementarity(i, j)?;
            redundancy[i][j] = r;
            redundancy[j][i] = r;
            complementarity[i][j] = c;
            complementarity[j][i] = c;
        }
    }
    Ok(ScoreMatrices {
        names: data.names.clone(),
        relevance,
        redundancy,
        complementarity,
    })
}
