//! Browser bindings: each exported function returns a JSON string that the
//! page in `www/` plots on a canvas.

use std::collections::BTreeMap;

use modhealth_core::curves::SmoothingConfig;
use modhealth_core::features::{extract_profile, FeatureConfig};
use modhealth_core::infotheory::{normalized_mi, DEFAULT_K};
use modhealth_core::metrics::{compute_labels, SohLabels};
use modhealth_core::rvr::{self, KernelConfig, TrainingLimits};
use modhealth_core::simulate::{simulate_cc_charge, CellTemplate, ModuleSpec, OcvModel, SolverSettings};
use modhealth_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct ModuleCurves {
    pub labels: SohLabels,
    pub ic: Series,
    pub dv: Series,
    pub features: BTreeMap<String, f64>,
}

/// Charges a module whose cells have the given SoH values and returns its
/// IC and DV curves.
pub fn module_curves(c_soh: &[f64], c_rate: f64) -> Result<ModuleCurves> {
    let labels = compute_labels(c_soh)?;
    let t = CellTemplate::default();
    let cells = c_soh.iter().map(|&s| t.cell(s, 0.0)).collect();
    let module = ModuleSpec::new(cells, t.interconnect_resistance, OcvModel::builtin())?;
    let run = simulate_cc_charge(&module, &SolverSettings::default().at_c_rate(c_rate))?;
    let ex = extract_profile(
        &run.profile,
        &SmoothingConfig::default(),
        &FeatureConfig::default(),
    )?;
    Ok(ModuleCurves {
        labels,
        ic: Series {
            x: ex.ic.grid,
            y: ex.ic.values,
        },
        dv: Series {
            x: ex.dv.grid,
            y: ex.dv.values,
        },
        features: ex.features.values.iter().map(|(k, v)| (k.name(), *v)).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct MiDemo {
    pub rho: f64,
    pub estimate: f64,
    pub analytic: f64,
    pub normalized: f64,
    pub sample: Series,
}

/// kNN mutual information of a bivariate Gaussian sample against its closed form.
pub fn gaussian_mi(rho: f64, n: usize, seed: u64) -> Result<MiDemo> {
    let rho = rho.clamp(-0.999, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    // The conditioning noise must not share a stream with the sample.
    let est = normalized_mi(&x, &y, DEFAULT_K, seed ^ 0x6a09_e667_f3bc_c908)?;
    Ok(MiDemo {
        rho,
        estimate: est.raw,
        analytic: -0.5 * (1.0 - rho * rho).ln(),
        normalized: est.normalized,
        sample: Series { x, y },
    })
}

#[derive(Debug, Serialize)]
pub struct SincDemo {
    pub train: Series,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub relevance_x: Vec<f64>,
    pub rmse: f64,
    pub iterations: usize,
}

/// Relevance vector regression on noisy samples of sin(x)/x.
pub fn sinc_fit(n: usize, noise: f64, width: f64, seed: u64) -> Result<SincDemo> {
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { x.sin() / x };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let e: f64 = StandardNormal.sample(&mut rng);
            sinc(x) + noise * e
        })
        .collect();
    let inputs: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let model = rvr::train(&inputs, &ys, KernelConfig::rbf(width), TrainingLimits::default())?;

    let grid: Vec<f64> = (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect();
    let (mut mean, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    let mut sq = 0.0;
    for &x in &grid {
        let p = model.predict(&[x])?;
        sq += (p.mean - sinc(x)).powi(2);
        mean.push(p.mean);
        lower.push(p.lower);
        upper.push(p.upper);
    }
    Ok(SincDemo {
        relevance_x: model.relevance_vectors.iter().map(|v| v[0]).collect(),
        rmse: (sq / grid.len() as f64).sqrt(),
        iterations: model.diagnostics.iterations,
        train: Series { x: xs, y: ys },
        grid,
        mean,
        lower,
        upper,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = moduleCurves)]
pub fn module_curves_js(c_soh: Vec<f64>, c_rate: f64) -> std::result::Result<String, JsError> {
    to_js(module_curves(&c_soh, c_rate))
}

#[wasm_bindgen(js_name = gaussianMi)]
pub fn gaussian_mi_js(rho: f64, n: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(gaussian_mi(rho, n, seed as u64))
}

#[wasm_bindgen(js_name = sincFit)]
pub fn sinc_fit_js(n: usize, noise: f64, width: f64, seed: u32) -> std::result::Result<String, JsError> {
    to_js(sinc_fit(n, noise, width, seed as u64))
}
