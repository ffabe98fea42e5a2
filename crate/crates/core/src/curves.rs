//! Smoothed Q-V models and the IC (dQ/dV) and DV (dV/dQ) curves derived
//! from them.
//!
//! Raw charging data is first averaged into uniform abscissa bins, then fitted
//! with a least-squares support vector regressor on a Gaussian kernel. The
//! fitted model is a finite kernel expansion, so its derivative is available
//! in closed form and no finite differencing of measured data is needed.
//!
//! Q(V) and V(Q) are fitted separately, one per curve kind.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_PROFILE_SAMPLES: usize = 50;
pub const DEFAULT_GRID_POINTS: usize = 500;
pub const DEFAULT_TEMPERATURE: f64 = 25.0;

/// Charged capacity versus terminal voltage for one constant-current charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QVProfile {
    /// Charged capacity (Ah).
    pub capacity: Vec<f64>,
    /// Terminal voltage (V).
    pub voltage: Vec<f64>,
    pub c_rate: f64,
    /// Cell temperature (°C), held constant over the charge.
    pub temperature: f64,
    pub module_id: String,
}

impl QVProfile {
    pub fn new(capacity: Vec<f64>, voltage: Vec<f64>, c_rate: f64) -> Result<Self> {
        if capacity.len() != voltage.len() {
            return Err(Error::Input(format!(
                "capacity and voltage lengths differ ({} vs {})",
                capacity.len(),
                voltage.len()
            )));
        }
        if capacity.len() < 2 {
            return Err(Error::EmptyProfile("fewer than two samples".into()));
        }
        if capacity.iter().chain(&voltage).any(|v| !v.is_finite()) {
            return Err(Error::Input("profile contains non-finite samples".into()));
        }
        Ok(Self {
            capacity,
            voltage,
            c_rate,
            temperature: DEFAULT_TEMPERATURE,
            module_id: String::new(),
        })
    }

    pub fn with_module_id(mut self, id: impl Into<String>) -> Self {
        self.module_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.capacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.capacity.is_empty()
    }

    /// Charge accumulated between the first and last sample.
    pub fn total_capacity(&self) -> f64 {
        self.capacity[self.len() - 1] - self.capacity[0]
    }

    /// True when both Q and V are nondecreasing.
    pub fn is_monotone(&self) -> bool {
        self.capacity.windows(2).all(|w| w[1] >= w[0]) && self.voltage.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Which variable the smoother treats as the abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Q as a function of V; differentiates to IC.
    CapacityOfVoltage,
    /// V as a function of Q; differentiates to DV.
    VoltageOfCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    /// Number of uniform abscissa bins the raw samples are averaged into.
    pub bins: usize,
    /// Kernel width as a multiple of the median support spacing.
    pub width_factor: f64,
    /// Ridge added to the kernel diagonal (the inverse LS-SVR penalty).
    pub ridge: f64,
    /// Fit RMSE on the raw samples must not exceed this fraction of the
    /// ordinate range.
    pub max_relative_rmse: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            bins: 320,
            width_factor: 4.0,
            ridge: 1e-6,
            max_relative_rmse: 0.01,
        }
    }
}

impl SmoothingConfig {
    /// Coarser bins and heavier ridge for measured (noisy) profiles.
    pub fn noisy() -> Self {
        Self {
            bins: 80,
            ridge: 1.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bins < 8 {
            return Err(Error::Config("smoothing needs at least 8 bins".into()));
        }
        if !(self.width_factor > 0.0 && self.ridge > 0.0 && self.max_relative_rmse > 0.0) {
            return Err(Error::Config(
                "width_factor, ridge and max_relative_rmse must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Kernel expansion with a linear trend,
/// `f(x) = bias + slope·(x − x₀) + Σ w_j exp(-(x − s_j)² / (2 h²))`,
/// where `x₀` is the left edge of the fit window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCurveModel {
    pub weights: Vec<f64>,
    pub supports: Vec<f64>,
    pub kernel_width: f64,
    pub bias: f64,
    pub slope: f64,
    pub orientation: Orientation,
    /// Abscissa range of the data the model was fitted on.
    pub window: (f64, f64),
    /// RMSE against the raw (unbinned) samples, in ordinate units.
    pub rmse: f64,
}

impl SmoothedCurveModel {
    pub fn value(&self, x: f64) -> f64 {
        let inv = 1.0 / (2.0 * self.kernel_width * self.kernel_width);
        self.bias
            + self.slope * (x - self.window.0)
            + self
                .weights
                .iter()
                .zip(&self.supports)
                .map(|(w, s)| w * (-(x - s) * (x - s) * inv).exp())
                .sum::<f64>()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let h2 = self.kernel_width * self.kernel_width;
        let inv = 1.0 / (2.0 * h2);
        self.slope
            + self
                .weights
                .iter()
                .zip(&self.supports)
                .map(|(w, s)| {
                    let d = x - s;
                    -w * d / h2 * (-d * d * inv).exp()
                })
                .sum::<f64>()
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-9 * (self.window.1 - self.window.0).abs().max(1.0);
        x >= self.window.0 - slack && x <= self.window.1 + slack
    }
}

fn median_spacing(xs: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

/// Averages (x, y) pairs into `bins` uniform bins in x; empty bins are skipped.
fn bin_average(xs: &[f64], ys: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut sx = vec![0.0; bins];
    let mut sy = vec![0.0; bins];
    let mut n = vec![0usize; bins];
    for (&x, &y) in xs.iter().zip(ys) {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        sx[b] += x;
        sy[b] += y;
        n[b] += 1;
    }
    let mut bx = Vec::with_capacity(bins);
    let mut by = Vec::with_capacity(bins);
    for b in 0..bins {
        if n[b] > 0 {
            bx.push(sx[b] / n[b] as f64);
            by.push(sy[b] / n[b] as f64);
        }
    }
    (bx, by)
}

/// Fits one orientation of a Q-V profile.
pub fn fit_qv_model(
    profile: &QVProfile,
    orientation: Orientation,
    config: &SmoothingConfig,
) -> Result<SmoothedCurveModel> {
    config.validate()?;
    if profile.len() < MIN_PROFILE_SAMPLES {
        return Err(Error::Input(format!(
            "profile has {} samples, need at least {MIN_PROFILE_SAMPLES}",
            profile.len()
        )));
    }
    let (xs, ys) = match orientation {
        Orientation::CapacityOfVoltage => (&profile.voltage, &profile.capacity),
        Orientation::VoltageOfCapacity => (&profile.capacity, &profile.voltage),
    };
    let (bx, by) = bin_average(xs, ys, config.bins);
    if bx.len() < 8 {
        return Err(Error::Input(
            "profile abscissa spans too few distinct bins to fit".into(),
        ));
    }
    let kernel_width = config.width_factor * median_spacing(&bx);
    if !(kernel_width > 0.0) {
        return Err(Error::Input("degenerate abscissa spacing".into()));
    }

    let m = bx.len();
    let inv = 1.0 / (2.0 * kernel_width * kernel_width);
    let gram = DMatrix::from_fn(m, m, |i, j| {
        let d = bx[i] - bx[j];
        (-d * d * inv).exp() + if i == j { config.ridge } else { 0.0 }
    });
    let chol = gram.clone().cholesky().ok_or_else(|| {
        let diag: Vec<f64> = (0..m).map(|i| gram[(i, i)]).collect();
        Error::Numeric(format!(
            "smoothing system not positive definite ({m} supports, width {kernel_width:.3e}, \
             ridge {:.1e}, diagonal range [{:.3e}, {:.3e}]); increase ridge",
            config.ridge,
            diag.iter().copied().fold(f64::INFINITY, f64::min),
            diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ))
    })?;
    // Condition estimate from the Cholesky diagonal.
    let l = chol.l();
    let (dmin, dmax) = (0..m).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let d = l[(i, i)] * l[(i, i)];
        (lo.min(d), hi.max(d))
    });
    if dmax / dmin > 1e15 {
        return Err(Error::Numeric(format!(
            "smoothing system ill-conditioned (estimated condition {:.2e}); increase ridge",
            dmax / dmin
        )));
    }

    let window = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    // Unpenalized trend columns [1, x − x₀]; eliminate them through the
    // Schur complement of the bordered system.
    let trend = DMatrix::from_fn(m, 2, |i, j| if j == 0 { 1.0 } else { bx[i] - window.0 });
    let target = DVector::from_column_slice(&by);
    let u = chol.solve(&trend);
    let v = chol.solve(&target);
    let schur = trend.transpose() * &u;
    let coef = schur
        .lu()
        .solve(&(trend.transpose() * &v))
        .ok_or_else(|| Error::Numeric("trend system is singular".into()))?;
    let weights = v - &u * &coef;
    let (bias, slope) = (coef[0], coef[1]);

    let mut model = SmoothedCurveModel {
        weights: weights.iter().copied().collect(),
        supports: bx,
        kernel_width,
        bias,
        slope,
        orientation,
        window,
        rmse: 0.0,
    };
    let sse: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(&x, &y)| (model.value(x) - y).powi(2))
        .sum();
    model.rmse = (sse / xs.len() as f64).sqrt();

    let y_range = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().copied().fold(f64::INFINITY, f64::min);
    if y_range > 0.0 && model.rmse > config.max_relative_rmse * y_range {
        return Err(Error::Numeric(format!(
            "fit RMSE {:.3e} exceeds {:.1}% of ordinate range {:.3e}",
            model.rmse,
            config.max_relative_rmse * 100.0,
            y_range
        )));
    }
    Ok(model)
}

/// Both orientations of one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveModels {
    pub q_of_v: SmoothedCurveModel,
    pub v_of_q: SmoothedCurveModel,
}

pub fn fit_both(profile: &QVProfile, config: &SmoothingConfig) -> Result<CurveModels> {
    Ok(CurveModels {
        q_of_v: fit_qv_model(profile, Orientation::CapacityOfVoltage, config)?,
        v_of_q: fit_qv_model(profile, Orientation::VoltageOfCapacity, config)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurveKind {
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "DV")]
    Dv,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Ic => "IC",
            CurveKind::Dv => "DV",
        }
    }
}

/// An IC or DV curve on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

impl DifferentialCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::Input("curve needs grid points and matching values".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("curve grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("curve values must be finite".into()));
        }
        Ok(Self { grid, values, kind })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn step(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        (self.grid[self.len() - 1] - self.grid[0]) / (self.len() - 1) as f64
    }

    /// Linear interpolation; `None` outside the grid.
    pub fn at(&self, x: f64) -> Option<f64> {
        let n = self.len();
        if x < self.grid[0] || x > self.grid[n - 1] {
            return None;
        }
        let i = self.grid.partition_point(|&g| g <= x).clamp(1, n - 1);
        let (x0, x1) = (self.grid[i - 1], self.grid[i]);
        let t = (x - x0) / (x1 - x0);
        Some(self.values[i - 1] + t * (self.values[i] - self.values[i - 1]))
    }
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| if i == points - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

fn differentiate(
    model: &SmoothedCurveModel,
    grid: &[f64],
    expected: Orientation,
    kind: CurveKind,
) -> Result<DifferentialCurve> {
    if model.orientation != expected {
        return Err(Error::Input(format!(
            "{} curve needs a {:?} model, got {:?}",
            kind.as_str(),
            expected,
            model.orientation
        )));
    }
    if let Some(x) = grid.iter().find(|&&x| !model.contains(x)) {
        return Err(Error::Domain(format!(
            "grid point {x} outside fit window [{}, {}]",
            model.window.0, model.window.1
        )));
    }
    let values = grid.iter().map(|&x| model.derivative(x)).collect();
    DifferentialCurve::new(grid.to_vec(), values, kind)
}

/// dQ/dV of a Q(V) model on a voltage grid.
pub fn compute_ic_curve(model: &SmoothedCurveModel, grid: &[f64]) -> Result<DifferentialCurve> {
    differentiate(model, grid, Orientation::CapacityOfVoltage, CurveKind::Ic)
}

/// dV/dQ of a V(Q) model on a capacity grid.
pub fn compute_dv_curve(model: &SmoothedCurveModel, grid: &[f64]) -> Result<DifferentialCurve> {
    differentiate(model, grid, Orientation::VoltageOfCapacity, CurveKind::Dv)
}

/// IC and DV curves on the default grid spanning each model's full window.
pub fn default_curves(models: &CurveModels) -> Result<(DifferentialCurve, DifferentialCurve)> {
    let (v0, v1) = models.q_of_v.window;
    let (q0, q1) = models.v_of_q.window;
    Ok((
        compute_ic_curve(&models.q_of_v, &uniform_grid(v0, v1, DEFAULT_GRID_POINTS))?,
        compute_dv_curve(&models.v_of_q, &uniform_grid(q0, q1, DEFAULT_GRID_POINTS))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn line_profile(n: usize, noise: f64, seed: u64) -> QVProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let v = uniform_grid(3.0, 4.2, n);
        let q = v
            .iter()
            .map(|&x| 2.0 * x + 1.0 + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 })
            .collect();
        QVProfile::new(q, v, 0.5).unwrap()
    }

    #[test]
    fn noiseless_line_is_reproduced() {
        let p = line_profile(600, 0.0, 0);
        let m = fit_qv_model(&p, Orientation::CapacityOfVoltage, &SmoothingConfig::default()).unwrap();
        for x in uniform_grid(3.0, 4.2, 301) {
            assert!((m.value(x) - (2.0 * x + 1.0)).abs() < 1e-3, "x = {x}");
        }
        let ic = compute_ic_curve(&m, &uniform_grid(3.06, 4.14, 200)).unwrap();
        assert!(ic.values.iter().all(|v| (v - 2.0).abs() < 1e-2));
        let d = fit_qv_model(&p, Orientation::VoltageOfCapacity, &SmoothingConfig::default()).unwrap();
        let dv = compute_dv_curve(&d, &uniform_grid(7.12, 9.28, 200)).unwrap();
        assert!(dv.values.iter().all(|v| (v - 0.5).abs() < 2.5e-3));
    }

    #[test]
    fn noisy_line_derivative_within_five_percent() {
        let p = line_profile(2000, 0.01, 17);
        let worst = worst_slope_error(&p);
        assert!(worst < 0.05, "worst relative slope error {worst}");
    }

    fn worst_slope_error(p: &QVProfile) -> f64 {
        let m = fit_qv_model(p, Orientation::CapacityOfVoltage, &SmoothingConfig::noisy()).unwrap();
        let ic = compute_ic_curve(&m, &uniform_grid(3.06, 4.14, 300)).unwrap();
        ic.values
            .iter()
            .map(|v| (v - 2.0).abs() / 2.0)
            .fold(0.0, f64::max)
    }

    #[test]
    fn derivative_error_shrinks_with_noise() {
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&s| worst_slope_error(&line_profile(2000, s, 5)))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn quadratic_derivative() {
        let v = uniform_grid(1.0, 2.0, 500);
        let q = v.iter().map(|x| x * x).collect();
        let p = QVProfile::new(q, v, 0.5).unwrap();
        let m = fit_qv_model(&p, Orientation::CapacityOfVoltage, &SmoothingConfig::default()).unwrap();
        let ic = compute_ic_curve(&m, &[1.5]).unwrap();
        assert!((ic.values[0] - 3.0).abs() < 1e-3, "{}", ic.values[0]);
    }

    #[test]
    fn grid_outside_window_is_a_domain_error() {
        let p = line_profile(200, 0.0, 0);
        let m = fit_qv_model(&p, Orientation::CapacityOfVoltage, &SmoothingConfig::default()).unwrap();
        assert!(matches!(compute_ic_curve(&m, &[2.9, 3.5]), Err(Error::Domain(_))));
        assert!(compute_dv_curve(&m, &[3.5]).is_err());
    }

    #[test]
    fn too_few_samples() {
        let p = line_profile(30, 0.0, 0);
        assert!(matches!(
            fit_qv_model(&p, Orientation::CapacityOfVoltage, &SmoothingConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn tiny_ridge_reports_conditioning() {
        let p = line_profile(600, 0.0, 0);
        let config = SmoothingConfig {
            ridge: 1e-18,
            width_factor: 20.0,
            ..SmoothingConfig::default()
        };
        match fit_qv_model(&p, Orientation::CapacityOfVoltage, &config) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("ridge")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn curve_interpolation() {
        let c = DifferentialCurve::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0], CurveKind::Ic).unwrap();
        assert_eq!(c.at(0.5), Some(1.0));
        assert_eq!(c.at(2.0), Some(0.0));
        assert_eq!(c.at(2.5), None);
        assert!(DifferentialCurve::new(vec![0.0, 0.0], vec![1.0, 1.0], CurveKind::Ic).is_err());
    }
}
