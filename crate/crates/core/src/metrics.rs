//! State-of-health and cell-to-cell variation labels.
//!
//! Module SoH is the mean of the cell SoH values (all cells share one fresh
//! capacity). Cell-to-cell variation is reported three ways: the population
//! standard deviation (divide by N, not N-1), the range, and the coefficient
//! of variation `sd / m_soh`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction targets derived from a module's cell SoH values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sd,
    MSoh,
    Range,
    Cv,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Sd, Task::MSoh, Task::Range, Task::Cv];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sd => "sd",
            Task::MSoh => "m_soh",
            Task::Range => "range",
            Task::Cv => "cv",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(Task::Sd),
            "m_soh" => Ok(Task::MSoh),
            "range" => Ok(Task::Range),
            "cv" => Ok(Task::Cv),
            other => Err(Error::Config(format!(
                "unknown target '{other}' (expected sd, m_soh, range or cv)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SohLabels {
    pub c_soh: Vec<f64>,
    pub m_soh: f64,
    pub sd: f64,
    pub range: f64,
    pub cv: f64,
}

impl SohLabels {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Sd => self.sd,
            Task::MSoh => self.m_soh,
            Task::Range => self.range,
            Task::Cv => self.cv,
        }
    }
}

/// Computes module SoH and the three variation metrics from cell SoH values.
pub fn compute_labels(c_soh: &[f64]) -> Result<SohLabels> {
    if c_soh.is_empty() {
        return Err(Error::Input("cell SoH list is empty".into()));
    }
    if let Some(bad) = c_soh.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::Input(format!("cell SoH {bad} outside (0, 1]")));
    }
    let n = c_soh.len() as f64;
    let m_soh = c_soh.iter().sum::<f64>() / n;
    let var = c_soh.iter().map(|v| (v - m_soh).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let max = c_soh.iter().copied().fold(f64::MIN, f64::max);
    let min = c_soh.iter().copied().fold(f64::MAX, f64::min);
    Ok(SohLabels {
        c_soh: c_soh.to_vec(),
        m_soh,
        sd,
        range: max - min,
        cv: sd / m_soh,
    })
}
