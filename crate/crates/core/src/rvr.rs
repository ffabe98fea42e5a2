//! Relevance vector regression.
//!
//! The model is `y(x) = w0 + Σ w_i K(x, x_i)` with an RBF kernel and an
//! individual Gaussian prior precision `α_i` on every weight. The precisions
//! and the noise precision `β` are re-estimated by type-II maximum
//! likelihood; weights whose `α_i` diverge are pruned, and the surviving
//! training inputs are the relevance vectors.
//!
//! Inputs and targets are standardized on the training data before fitting.
//! Predictions carry the posterior variance `1/β + φᵀΣφ` and a three-sigma
//! interval, reported back in target units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    RadialBasis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Length scale on standardized inputs:
    /// `K = exp(−‖x − x'‖² / (d · width²))` for input dimension `d`.
    pub width: f64,
    pub include_offset: bool,
}

impl KernelConfig {
    pub fn rbf(width: f64) -> Self {
        Self {
            kind: KernelKind::RadialBasis,
            width,
            include_offset: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::Config(format!(
                "kernel width must be positive, got {}",
                self.width
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let dim = a.len().max(1) as f64;
        (-d2 / (dim * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingLimits {
    pub max_iterations: usize,
    /// Convergence threshold on `max |Δ ln α|`.
    pub tolerance: f64,
    pub prune_threshold: f64,
    pub initial_alpha: f64,
    /// Initial β times the (standardized) target variance.
    pub initial_beta: f64,
}

impl Default for TrainingLimits {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            tolerance: 1e-3,
            prune_threshold: 1e9,
            initial_alpha: 1e-6,
            initial_beta: 100.0,
        }
    }
}

impl TrainingLimits {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.tolerance,
            self.prune_threshold,
            self.initial_alpha,
            self.initial_beta,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "training limits must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut sd = vec![0.0; dim];
        for d in 0..dim {
            mean[d] = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            sd[d] = (rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
            if !(sd[d] > 0.0) {
                return Err(Error::Degenerate(format!(
                    "input dimension {d} has zero variance"
                )));
            }
        }
        Ok(Self { mean, sd })
    }

    pub fn fit_scalar(values: &[f64]) -> Result<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate("targets have zero variance".into()));
        }
        Ok(Self {
            mean: vec![mean],
            sd: vec![sd],
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Design matrix with rows `[1, K(x_i, b_1), …, K(x_i, b_M)]` (offset column
/// only when enabled).
pub fn design_matrix(inputs: &[Vec<f64>], basis: &[Vec<f64>], kernel: &KernelConfig) -> DMatrix<f64> {
    let off = kernel.include_offset as usize;
    DMatrix::from_fn(inputs.len(), basis.len() + off, |i, j| {
        if j < off {
            1.0
        } else {
            kernel.eval(&inputs[i], &basis[j - off])
        }
    })
}

/// The N×(N+1) (or N×N without offset) design matrix over the inputs
/// themselves.
pub fn build_design_matrix(inputs: &[Vec<f64>], kernel: &KernelConfig) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::Input("design matrix needs at least one input".into()));
    }
    Ok(design_matrix(inputs, inputs, kernel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub log_evidence: f64,
    /// Number of accepted steps where the log evidence dropped.
    pub evidence_decreases: usize,
    pub jitter_retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RVRModel {
    pub format_version: u32,
    pub kernel: KernelConfig,
    pub input_scaler: Scaler,
    pub output_scaler: Scaler,
    pub offset_retained: bool,
    /// Retained training rows, standardized.
    pub relevance_vectors: Vec<Vec<f64>>,
    pub relevance_indices: Vec<usize>,
    pub posterior_mean: Vec<f64>,
    /// Row-major, square of side `posterior_mean.len()`.
    pub posterior_cov: Vec<f64>,
    pub noise_precision: f64,
    pub alphas: Vec<f64>,
    pub diagnostics: TrainingDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn three_sigma(&self) -> f64 {
        3.0 * self.sd()
    }

    pub fn contains(&self, truth: f64) -> bool {
        (truth - self.mean).abs() <= 3.0 * self.sd()
    }
}

struct Posterior {
    mu: Vec<f64>,
    sigma_diag: Vec<f64>,
    /// Inverse of the lower Cholesky factor of Σ⁻¹, row-major.
    linv: Vec<f64>,
    log_det_h: f64,
    jittered: bool,
}

impl Posterior {
    /// Σ = L⁻ᵀ L⁻¹, row-major.
    fn sigma(&self) -> Vec<f64> {
        let m = self.mu.len();
        let x = &self.linv;
        let mut sigma = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let s: f64 = (i..m).map(|k| x[k * m + i] * x[k * m + j]).sum();
                sigma[i * m + j] = s;
                sigma[j * m + i] = s;
            }
        }
        sigma
    }
}

/// Lower Cholesky factor of a row-major SPD matrix.
fn cholesky(h: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        let (row_j, _) = l.split_at(j * m + j);
        let row_j = &row_j[j * m..];
        let d = h[j * m + j] - row_j.iter().map(|v| v * v).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[j * m + j] = ljj;
        for i in j + 1..m {
            let s: f64 = (0..j).map(|k| l[i * m + k] * l[j * m + k]).sum();
            l[i * m + j] = (h[i * m + j] - s) / ljj;
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular row-major matrix.
fn invert_lower(l: &[f64], m: usize) -> Vec<f64> {
    let mut x = vec![0.0; m * m];
    let mut acc = vec![0.0; m];
    for i in 0..m {
        acc[..i].iter_mut().for_each(|a| *a = 0.0);
        for k in 0..i {
            let lik = l[i * m + k];
            if lik != 0.0 {
                let xk = &x[k * m..k * m + k + 1];
                for (a, v) in acc[..=k].iter_mut().zip(xk) {
                    *a += lik * v;
                }
            }
        }
        let inv = 1.0 / l[i * m + i];
        for j in 0..i {
            x[i * m + j] = -acc[j] * inv;
        }
        x[i * m + i] = inv;
    }
    x
}

fn posterior(
    gram: &DMatrix<f64>,
    phi_t: &DVector<f64>,
    active: &[usize],
    alpha: &[f64],
    beta: f64,
) -> Result<Posterior> {
    let m = active.len();
    let mut h = vec![0.0; m * m];
    for (i, &ai) in active.iter().enumerate() {
        for (j, &aj) in active.iter().enumerate() {
            h[i * m + j] = beta * gram[(ai, aj)];
        }
        h[i * m + i] += alpha[i];
    }
    let mut jittered = false;
    let l = match cholesky(&h, m) {
        Some(l) => l,
        None => {
            jittered = true;
            let trace: f64 = (0..m).map(|i| h[i * m + i]).sum();
            let ridge = 1e-10 * (trace / m as f64).max(1.0);
            log::debug!("posterior precision not positive definite; retrying with ridge {ridge:e}");
            for i in 0..m {
                h[i * m + i] += ridge;
            }
            cholesky(&h, m).ok_or_else(|| {
                Error::Numeric(format!(
                    "posterior precision not positive definite after {ridge:e} ridge retry ({m} weights)"
                ))
            })?
        }
    };
    let log_det_h = 2.0 * (0..m).map(|i| l[i * m + i].ln()).sum::<f64>();
    let linv = invert_lower(&l, m);
    let b: Vec<f64> = active.iter().map(|&j| phi_t[j]).collect();
    // μ = β L⁻ᵀ L⁻¹ b
    let y: Vec<f64> = (0..m)
        .map(|i| (0..=i).map(|k| linv[i * m + k] * b[k]).sum())
        .collect();
    let mut mu = vec![0.0; m];
    let mut sigma_diag = vec![0.0; m];
    for k in 0..m {
        let row = &linv[k * m..k * m + k + 1];
        for (i, v) in row.iter().enumerate() {
            mu[i] += v * y[k];
            sigma_diag[i] += v * v;
        }
    }
    mu.iter_mut().for_each(|v| *v *= beta);
    Ok(Posterior {
        mu,
        sigma_diag,
        linv,
        log_det_h,
        jittered,
    })
}

fn residual_sq(phi: &DMatrix<f64>, t: &DVector<f64>, active: &[usize], mu: &[f64]) -> f64 {
    let mut err = 0.0;
    for i in 0..phi.nrows() {
        let mut y = 0.0;
        for (k, &j) in active.iter().enumerate() {
            y += phi[(i, j)] * mu[k];
        }
        err += (t[i] - y).powi(2);
    }
    err
}

fn log_evidence(n: usize, beta: f64, alpha: &[f64], post: &Posterior, err: f64) -> f64 {
    let ln_alpha: f64 = alpha.iter().map(|a| a.ln()).sum();
    let prior: f64 = alpha.iter().zip(post.mu.iter()).map(|(a, m)| a * m * m).sum();
    let n = n as f64;
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() - n * beta.ln() - ln_alpha
        + post.log_det_h
        + beta * err
        + prior)
}

/// Fits the model. Inputs are rows of equal dimension.
pub fn train(
    inputs: &[Vec<f64>],
    targets: &[f64],
    kernel: KernelConfig,
    limits: TrainingLimits,
) -> Result<RVRModel> {
    kernel.validate()?;
    limits.validate()?;
    let n = inputs.len();
    if n < 10 {
        return Err(Error::Input(format!("need at least 10 training points, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::Input("inputs and targets differ in length".into()));
    }
    let dim = inputs[0].len();
    if dim == 0 || inputs.iter().any(|r| r.len() != dim) {
        return Err(Error::Input("inputs must share one nonzero dimension".into()));
    }
    if inputs.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Input("training data contains non-finite values".into()));
    }

    let input_scaler = Scaler::fit(inputs)?;
    let output_scaler = Scaler::fit_scalar(targets)?;
    let x: Vec<Vec<f64>> = inputs.iter().map(|r| input_scaler.transform(r)).collect();
    let t = DVector::from_iterator(
        n,
        targets
            .iter()
            .map(|v| (v - output_scaler.mean[0]) / output_scaler.sd[0]),
    );

    let phi = design_matrix(&x, &x, &kernel);
    let gram = phi.tr_mul(&phi);
    let phi_t = phi.tr_mul(&t);

    let mut active: Vec<usize> = (0..phi.ncols()).collect();
    let mut alpha = vec![limits.initial_alpha; active.len()];
    // standardized targets have unit variance
    let mut beta = limits.initial_beta;

    let mut iterations = 0;
    let mut converged = false;
    let mut jitter_retries = 0;
    let mut evidence_decreases = 0;
    let mut best_evidence = f64::NEG_INFINITY;
    let mut last_evidence = f64::NEG_INFINITY;

    while iterations < limits.max_iterations {
        iterations += 1;
        let post = posterior(&gram, &phi_t, &active, &alpha, beta)?;
        jitter_retries += post.jittered as usize;
        let err = residual_sq(&phi, &t, &active, &post.mu);

        let evidence = log_evidence(n, beta, &alpha, &post, err);
        if evidence < last_evidence - 1e-9 * last_evidence.abs().max(1.0) {
            evidence_decreases += 1;
        }
        last_evidence = evidence;
        best_evidence = best_evidence.max(evidence);

        let mut gamma_sum = 0.0;
        let mut new_alpha = Vec::with_capacity(alpha.len());
        let mut diverging = Vec::with_capacity(alpha.len());
        for (i, a) in alpha.iter().enumerate() {
            let s_ii = post.sigma_diag[i];
            let gamma = 1.0 - a * s_ii;
            gamma_sum += gamma;
            let mu2 = post.mu[i] * post.mu[i];
            // γ ≤ 0 only through rounding: the weight is fixed by its prior
            let next = if mu2 > 0.0 && gamma > 0.0 {
                gamma / mu2
            } else {
                f64::INFINITY
            };
            // The evidence is maximized at α = ∞ exactly when μ² ≤ γ Σ_ii.
            diverging.push(next * s_ii >= 1.0);
            new_alpha.push(next);
        }
        beta = ((n as f64 - gamma_sum) / err.max(f64::MIN_POSITIVE)).max(f64::MIN_POSITIVE);
        if !beta.is_finite() {
            return Err(Error::Numeric("noise precision diverged".into()));
        }

        let mut keep: Vec<bool> = new_alpha.iter().map(|a| *a <= limits.prune_threshold).collect();
        let pruned = keep.iter().any(|k| !k);
        let settling: Vec<f64> = alpha
            .iter()
            .zip(&new_alpha)
            .zip(keep.iter().zip(&diverging))
            .filter(|(_, (k, d))| **k && !**d)
            .map(|((a, b), _)| (b.ln() - a.ln()).abs())
            .collect();
        let done = !pruned && !settling.is_empty() && settling.iter().all(|c| *c < limits.tolerance);
        if done {
            for (k, d) in keep.iter_mut().zip(&diverging) {
                *k &= !d;
            }
        }
        let null_model = !keep.iter().any(|k| *k);
        if null_model {
            // never prune the last weight
            let (smallest, _) = new_alpha
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            keep[smallest] = true;
            new_alpha[smallest] = new_alpha[smallest].min(limits.prune_threshold);
        }

        active = active
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(a, _)| *a)
            .collect();
        alpha = new_alpha
            .into_iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(a, _)| a)
            .collect();

        if done || null_model {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("relevance vector training stopped at {iterations} iterations without converging");
    }

    let post = posterior(&gram, &phi_t, &active, &alpha, beta)?;
    jitter_retries += post.jittered as usize;
    let err = residual_sq(&phi, &t, &active, &post.mu);
    let final_evidence = log_evidence(n, beta, &alpha, &post, err);
    let slack = 1e-3 * best_evidence.abs().max(1.0);
    if converged && final_evidence < best_evidence - slack {
        log::warn!("log evidence ended at {final_evidence:.4}, below its best {best_evidence:.4}");
    }

    let off = kernel.include_offset as usize;
    let offset_retained = off == 1 && active.first() == Some(&0);
    let relevance_indices: Vec<usize> = active.iter().filter(|&&j| j >= off).map(|j| j - off).collect();
    Ok(RVRModel {
        format_version: MODEL_FORMAT_VERSION,
        kernel,
        input_scaler,
        output_scaler,
        offset_retained,
        relevance_vectors: relevance_indices.iter().map(|&i| x[i].clone()).collect(),
        relevance_indices,
        posterior_cov: post.sigma(),
        posterior_mean: post.mu,
        noise_precision: beta,
        alphas: alpha,
        diagnostics: TrainingDiagnostics {
            iterations,
            converged,
            log_evidence: final_evidence,
            evidence_decreases,
            jitter_retries,
        },
    })
}

impl RVRModel {
    pub fn n_relevance_vectors(&self) -> usize {
        self.relevance_vectors.len()
    }

    pub fn n_weights(&self) -> usize {
        self.posterior_mean.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_scaler.dim()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.n_weights();
        DMatrix::from_row_slice(m, m, &self.posterior_cov)
    }

    fn basis_row(&self, xs: &[f64]) -> Vec<f64> {
        let mut phi = Vec::with_capacity(self.n_weights());
        if self.offset_retained {
            phi.push(1.0);
        }
        phi.extend(self.relevance_vectors.iter().map(|rv| self.kernel.eval(xs, rv)));
        phi
    }

    /// Mean and variance in standardized target units.
    pub fn predict_standardized(&self, input: &[f64]) -> Result<(f64, f64)> {
        if input.len() != self.input_dim() {
            return Err(Error::Input(format!(
                "input has dimension {}, model expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let phi = self.basis_row(&self.input_scaler.transform(input));
        let m = phi.len();
        let mean: f64 = phi.iter().zip(&self.posterior_mean).map(|(p, w)| p * w).sum();
        let mut quad = 0.0;
        for i in 0..m {
            let row = &self.posterior_cov[i * m..(i + 1) * m];
            quad += phi[i] * row.iter().zip(&phi).map(|(s, p)| s * p).sum::<f64>();
        }
        Ok((mean, 1.0 / self.noise_precision + quad.max(0.0)))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Prediction> {
        let (m, v) = self.predict_standardized(input)?;
        let (mu, sd) = (self.output_scaler.mean[0], self.output_scaler.sd[0]);
        let mean = m * sd + mu;
        let variance = v * sd * sd;
        let half = 3.0 * variance.sqrt();
        Ok(Prediction {
            mean,
            variance,
            lower: mean - half,
            upper: mean + half,
        })
    }

    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }

    /// Noise variance floor in target units.
    pub fn noise_variance(&self) -> f64 {
        self.output_scaler.sd[0].powi(2) / self.noise_precision
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<Self>(s)?.checked()
    }

    /// Rejects deserialized models with a foreign version or inconsistent sizes.
    pub(crate) fn checked(self) -> Result<Self> {
        let model = self;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        let m = model.posterior_mean.len();
        if model.posterior_cov.len() != m * m
            || model.alphas.len() != m
            || m != model.relevance_vectors.len() + model.offset_retained as usize
        {
            return Err(Error::Input("model arrays have inconsistent sizes".into()));
        }
        Ok(model)
    }
}
