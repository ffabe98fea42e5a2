//! Nearest-neighbour estimates of mutual information (MI) and conditional
//! mutual information (CMI) for continuous, discrete or mixed samples.
//!
//! For every sample the distance `ρ` to its k-th neighbour is taken in the
//! joint `(f, g, h)` space under the max-norm. Neighbours within `ρ` are then
//! counted in the `(f, h)`, `(g, h)` and `h` subspaces, and the estimate is the
//! mean of `ψ(k̃) − ψ(n_fh) − ψ(n_gh) + ψ(n_h)`. When discrete values
//! produce distance ties, `k̃` is the realized number of joint neighbours
//! within `ρ`, which may exceed `k`. All counts exclude the sample itself.
//!
//! MI is obtained from the same estimator by conditioning on an independent
//! standard-normal column, which keeps MI and CMI values on the same footing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 7;
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleColumn {
    pub values: Vec<f64>,
    pub kind: ColumnKind,
}

impl SampleColumn {
    pub fn new(values: Vec<f64>, kind: ColumnKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("sample column contains non-finite values".into()));
        }
        Ok(Self { values, kind })
    }

    pub fn continuous(values: Vec<f64>) -> Result<Self> {
        Self::new(values, ColumnKind::Continuous)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores with the population standard deviation.
pub fn standardize_values(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Input("standardization needs at least two samples".into()));
    }
    let (mean, sd) = mean_sd(values);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("column has zero variance".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

pub fn standardize(column: &SampleColumn) -> Result<SampleColumn> {
    Ok(SampleColumn {
        values: standardize_values(&column.values)?,
        kind: column.kind,
    })
}

/// ψ(n) for n = 0..=max via the harmonic recurrence; index 0 is unused.
fn digamma_table(max: usize) -> Vec<f64> {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut t = vec![f64::NEG_INFINITY; max + 1];
    if max >= 1 {
        t[1] = -EULER_GAMMA;
    }
    for n in 2..=max {
        t[n] = t[n - 1] + 1.0 / (n - 1) as f64;
    }
    t
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::Input(format!(
            "need at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    if k < 3 || k > n / 4 {
        return Err(Error::Config(format!("k = {k} outside [3, N/4] for N = {n}")));
    }
    Ok(())
}

/// Raw CMI estimate `I(F; G | H)` in nats. Columns are expected to be
/// standardized already; the result may be slightly negative.
pub fn estimate_cmi(f: &[f64], g: &[f64], h: &[f64], k: usize) -> Result<f64> {
    let n = f.len();
    if g.len() != n || h.len() != n {
        return Err(Error::Input("columns must have equal length".into()));
    }
    check_k(n, k)?;
    let psi = digamma_table(n);

    let mut joint = vec![0.0; n];
    let mut scratch = vec![0.0; n - 1];
    let mut total = 0.0;
    for i in 0..n {
        let (fi, gi, hi) = (f[i], g[i], h[i]);
        for j in 0..n {
            joint[j] = (f[j] - fi).abs().max((g[j] - gi).abs()).max((h[j] - hi).abs());
        }
        scratch[..i].copy_from_slice(&joint[..i]);
        scratch[i..].copy_from_slice(&joint[i + 1..]);
        let (_, rho, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        let rho = *rho;

        let (mut k_tilde, mut n_fh, mut n_gh, mut n_h) = (0usize, 0usize, 0usize, 0usize);
        for j in 0..n {
            if j == i {
                continue;
            }
            let dh = (h[j] - hi).abs();
            if dh > rho {
                continue;
            }
            n_h += 1;
            let fh = (f[j] - fi).abs() <= rho;
            let gh = (g[j] - gi).abs() <= rho;
            n_fh += fh as usize;
            n_gh += gh as usize;
            k_tilde += (fh && gh) as usize;
        }
        total += (psi[k_tilde] + psi[n_h]) - (psi[n_fh] + psi[n_gh]);
    }
    Ok(total / n as f64)
}

/// Standardized white Gaussian noise, deterministic in `seed`.
pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    standardize_values(&raw).unwrap_or(raw)
}

/// Raw MI estimate `I(F; G)` in nats: the CMI estimator conditioned on an
/// independent noise column drawn from `seed`.
pub fn estimate_mi(f: &[f64], g: &[f64], k: usize, seed: u64) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::Input("columns must have equal length".into()));
    }
    let noise = white_noise(f.len(), seed);
    estimate_cmi(f, g, &noise, k)
}

/// `raw / min(self_f, self_g)`, clipped to `[0, 1]`.
pub fn normalize(raw: f64, self_f: f64, self_g: f64) -> Result<f64> {
    if !(self_f > 0.0 && self_g > 0.0) {
        return Err(Error::Degenerate(format!(
            "self-information must be positive (got {self_f}, {self_g})"
        )));
    }
    Ok((raw / self_f.min(self_g)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub raw: f64,
    pub normalized: f64,
    pub k_neighbors: usize,
    pub seed: u64,
}

/// Normalized MI between two raw columns; both are standardized first and the
/// self-information denominators use the same `k` and `seed`.
pub fn normalized_mi(f: &[f64], g: &[f64], k: usize, seed: u64) -> Result<MIEstimate> {
    let fs = standardize_values(f)?;
    let gs = standardize_values(g)?;
    let raw = estimate_mi(&fs, &gs, k, seed)?;
    let self_f = estimate_mi(&fs, &fs, k, seed)?;
    let self_g = estimate_mi(&gs, &gs, k, seed)?;
    Ok(MIEstimate {
        raw,
        normalized: normalize(raw, self_f, self_g)?,
        k_neighbors: k,
        seed,
    })
}
