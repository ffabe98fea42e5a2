//! Constant-current charging of modules built from parallel-connected cells.
//!
//! Cells share a terminal node. At each timestep the node voltage is found by
//! 1-D root finding on the current balance `Σ (V − OCV_i) / R_i = I_total`,
//! which is monotone in `V`. State of charge then advances by explicit Euler.
//! Heterogeneous capacities and resistances make the cells drift apart in
//! SoC, which is what distorts the module-level IC/DV curves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::curves::QVProfile;
use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::metrics::{compute_labels, SohLabels};

const BUILTIN_OCV: &str = include_str!("../data/ocv_two_plateau_v1.json");

/// Slope (V per unit SoC) used to continue the OCV curve past full charge.
const OVERCHARGE_SLOPE: f64 = 20.0;
const MAX_SPLIT_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OcvFile {
    name: String,
    version: u32,
    soc: Vec<f64>,
    voltage: Vec<f64>,
}

/// Open-circuit voltage as a function of state of charge.
#[derive(Debug, Clone)]
pub struct OcvModel {
    name: String,
    version: u32,
    curve: MonotoneCubic,
}

impl OcvModel {
    pub fn from_control_points(name: &str, soc: Vec<f64>, voltage: Vec<f64>) -> Result<Self> {
        if soc.len() < 8 {
            return Err(Error::Input("OCV model needs at least 8 control points".into()));
        }
        if voltage.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("OCV must be strictly increasing in SoC".into()));
        }
        if (soc[0] - 0.0).abs() > 1e-12 || (soc[soc.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Input("OCV control points must span SoC 0..1".into()));
        }
        Ok(Self {
            name: name.to_string(),
            version: 1,
            curve: MonotoneCubic::new(soc, voltage)?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: OcvFile = serde_json::from_str(text)?;
        let mut model = Self::from_control_points(&file.name, file.soc, file.voltage)?;
        model.version = file.version;
        Ok(model)
    }

    /// The shipped two-plateau curve.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_OCV).expect("built-in OCV data is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn voltage_range(&self) -> (f64, f64) {
        (self.voltage(0.0), self.voltage(1.0))
    }

    pub fn voltage(&self, soc: f64) -> f64 {
        if soc > 1.0 {
            self.curve.eval(1.0) + OVERCHARGE_SLOPE * (soc - 1.0)
        } else {
            self.curve.eval(soc)
        }
    }

    /// Inverse map, by bisection on the monotone curve.
    pub fn soc_at(&self, voltage: f64) -> Result<f64> {
        let (v0, v1) = self.voltage_range();
        if !(v0..=v1).contains(&voltage) {
            return Err(Error::Domain(format!(
                "voltage {voltage} outside OCV range [{v0}, {v1}]"
            )));
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.voltage(mid) < voltage {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub fresh_capacity: f64,
    pub c_soh: f64,
    pub series_resistance: f64,
}

impl CellSpec {
    pub fn capacity(&self) -> f64 {
        self.fresh_capacity * self.c_soh
    }

    fn validate(&self) -> Result<()> {
        if !(self.fresh_capacity > 0.0) {
            return Err(Error::Input("cell fresh capacity must be positive".into()));
        }
        if !(self.c_soh > 0.0 && self.c_soh <= 1.0) {
            return Err(Error::Input(format!("cell SoH {} outside (0, 1]", self.c_soh)));
        }
        if !(self.series_resistance > 0.0) {
            return Err(Error::Input("cell series resistance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModuleSpec {
    pub cells: Vec<CellSpec>,
    pub interconnect_resistance: f64,
    pub ocv: OcvModel,
}

impl ModuleSpec {
    pub fn new(cells: Vec<CellSpec>, interconnect_resistance: f64, ocv: OcvModel) -> Result<Self> {
        let spec = Self {
            cells,
            interconnect_resistance,
            ocv,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Input("module needs at least one cell".into()));
        }
        if !(self.interconnect_resistance >= 0.0) {
            return Err(Error::Input("interconnect resistance must be >= 0".into()));
        }
        self.cells.iter().try_for_each(CellSpec::validate)
    }

    pub fn parallel_count(&self) -> usize {
        self.cells.len()
    }

    /// Sum of fresh cell capacities; the basis for the C-rate.
    pub fn nominal_capacity(&self) -> f64 {
        self.cells.iter().map(|c| c.fresh_capacity).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub c_rate: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Seconds per Euler step.
    pub timestep: f64,
    /// Voltage residual accepted by the current-split solver.
    pub solver_tolerance: f64,
    /// Keep every n-th step in the output profile.
    pub record_every: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            c_rate: 0.5,
            v_min: 3.0,
            v_max: 4.2,
            timestep: 1.0,
            solver_tolerance: 1e-9,
            record_every: 4,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_rate > 0.0) {
            return Err(Error::Config("c_rate must be positive".into()));
        }
        if !(self.v_min < self.v_max) {
            return Err(Error::Config("v_min must be below v_max".into()));
        }
        if !(self.timestep > 0.0) {
            return Err(Error::Config("timestep must be positive".into()));
        }
        if !(self.solver_tolerance > 0.0) {
            return Err(Error::Config("solver_tolerance must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Node voltage and per-cell currents for one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSplit {
    pub node_voltage: f64,
    pub currents: Vec<f64>,
}

impl CurrentSplit {
    /// Largest deviation from the shared-voltage constraint.
    pub fn voltage_residual(&self, module: &ModuleSpec, socs: &[f64]) -> f64 {
        module
            .cells
            .iter()
            .zip(socs)
            .zip(&self.currents)
            .map(|((c, &s), &i)| {
                (self.node_voltage - (module.ocv.voltage(s) + i * c.series_resistance)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Splits `total_current` among the cells so that all of them see the same
/// terminal voltage.
pub fn solve_current_split(
    module: &ModuleSpec,
    cell_socs: &[f64],
    total_current: f64,
    tolerance: f64,
) -> Result<CurrentSplit> {
    if cell_socs.len() != module.cells.len() {
        return Err(Error::Input("one SoC per cell required".into()));
    }
    if cell_socs.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Input("cell SoC must be finite and >= 0".into()));
    }
    if !(total_current > 0.0) {
        return Err(Error::Input("total current must be positive".into()));
    }
    if cell_socs.iter().all(|&s| s >= 1.0) {
        return Err(Error::ChargeComplete);
    }

    let ocvs: Vec<f64> = cell_socs.iter().map(|&s| module.ocv.voltage(s)).collect();
    let conductance: f64 = module.cells.iter().map(|c| 1.0 / c.series_resistance).sum();
    let balance = |v: f64| -> f64 {
        module
            .cells
            .iter()
            .zip(&ocvs)
            .map(|(c, &e)| (v - e) / c.series_resistance)
            .sum::<f64>()
            - total_current
    };

    let r_max = module
        .cells
        .iter()
        .map(|c| c.series_resistance)
        .fold(0.0, f64::max);
    let mut lo = ocvs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = ocvs.iter().copied().fold(f64::NEG_INFINITY, f64::max) + total_current * r_max;
    let mut v = 0.5 * (lo + hi);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_SPLIT_ITERATIONS {
        let f = balance(v);
        residual = f.abs();
        if f < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        if residual / conductance <= tolerance || hi - lo <= tolerance {
            converged = true;
            break;
        }
        // Newton step, kept inside the bracket.
        let step = v - f / conductance;
        v = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
    }
    if !converged {
        return Err(Error::Solver { residual });
    }

    let mut currents: Vec<f64> = module
        .cells
        .iter()
        .zip(&ocvs)
        .map(|(c, &e)| (v - e) / c.series_resistance)
        .collect();
    // Spread the leftover mismatch in proportion to conductance so that the
    // currents sum to the total exactly.
    let mismatch = total_current - currents.iter().sum::<f64>();
    for (i, c) in currents.iter_mut().zip(&module.cells) {
        *i += mismatch * (1.0 / c.series_resistance) / conductance;
    }
    Ok(CurrentSplit {
        node_voltage: v,
        currents,
    })
}

/// Result of one constant-current charge.
#[derive(Debug, Clone)]
pub struct ChargeRun {
    pub profile: QVProfile,
    /// Charge delivered to each cell (Ah), integrated from its current.
    pub cell_charge: Vec<f64>,
    pub initial_socs: Vec<f64>,
    pub final_socs: Vec<f64>,
    /// Worst shared-voltage violation over all accepted steps (V).
    pub max_voltage_residual: f64,
    /// Worst |Σ I_i − I_total| over all accepted steps (A).
    pub max_current_residual: f64,
}

/// Charges a module at constant current from rest at `v_min` until the
/// terminal voltage reaches `v_max`.
pub fn simulate_cc_charge(module: &ModuleSpec, config: &SimulationConfig) -> Result<ChargeRun> {
    module.validate()?;
    config.validate()?;
    let (ocv_lo, ocv_hi) = module.ocv.voltage_range();
    if config.v_min < ocv_lo || config.v_min >= ocv_hi {
        return Err(Error::Config(format!(
            "v_min {} outside OCV range [{ocv_lo}, {ocv_hi})",
            config.v_min
        )));
    }

    let current = config.c_rate * module.nominal_capacity();
    let rest_soc = module.ocv.soc_at(config.v_min)?;
    let mut socs = vec![rest_soc; module.cells.len()];
    let initial_socs = socs.clone();
    let mut cell_charge = vec![0.0; module.cells.len()];
    let dt_hours = config.timestep / 3600.0;

    let terminal = |split: &CurrentSplit| split.node_voltage + current * module.interconnect_resistance;

    let split = solve_current_split(module, &socs, current, config.solver_tolerance)?;
    let v_start = terminal(&split);
    if v_start >= config.v_max {
        return Err(Error::EmptyProfile(format!(
            "terminal voltage {v_start:.4} V already at or above v_max {} V",
            config.v_max
        )));
    }

    let mut max_voltage_residual = split.voltage_residual(module, &socs);
    let mut max_current_residual = (split.currents.iter().sum::<f64>() - current).abs();
    let mut capacity = vec![0.0];
    let mut voltage = vec![v_start];
    let mut q = 0.0;
    let mut v_prev = v_start;
    let mut split = split;

    // Enough steps to charge the full nominal capacity three times over.
    let max_steps = (3.0 / config.c_rate * 3600.0 / config.timestep).ceil() as usize;
    let mut step = 0usize;
    loop {
        if step >= max_steps {
            return Err(Error::Numeric(format!(
                "terminal voltage did not reach v_max within {max_steps} steps"
            )));
        }
        let applied = split.currents.clone();
        for ((s, cell), (i, acc)) in socs
            .iter_mut()
            .zip(&module.cells)
            .zip(applied.iter().zip(cell_charge.iter_mut()))
        {
            *s += i * dt_hours / cell.capacity();
            *acc += i * dt_hours;
        }
        let q_next = q + current * dt_hours;
        step += 1;

        split = match solve_current_split(module, &socs, current, config.solver_tolerance) {
            Ok(s) => s,
            Err(Error::ChargeComplete) => break,
            Err(e) => return Err(e),
        };
        let v = terminal(&split);
        max_voltage_residual = max_voltage_residual.max(split.voltage_residual(module, &socs));
        max_current_residual = max_current_residual.max((split.currents.iter().sum::<f64>() - current).abs());

        if v >= config.v_max {
            // Interpolate the crossing so the profile ends exactly at v_max.
            let frac = ((config.v_max - v_prev) / (v - v_prev)).clamp(0.0, 1.0);
            let q_end = q + frac * (q_next - q);
            if q_end > *capacity.last().unwrap() {
                capacity.push(q_end);
                voltage.push(config.v_max);
            }
            // Roll per-cell bookkeeping back to the crossing point.
            let back = (1.0 - frac) * dt_hours;
            for ((s, cell), (i, acc)) in socs
                .iter_mut()
                .zip(&module.cells)
                .zip(applied.iter().zip(cell_charge.iter_mut()))
            {
                *s -= i * back / cell.capacity();
                *acc -= i * back;
            }
            break;
        }
        q = q_next;
        v_prev = v;
        if step.is_multiple_of(config.record_every) {
            capacity.push(q);
            voltage.push(v);
        }
    }

    let profile = QVProfile::new(capacity, voltage, config.c_rate)?;
    Ok(ChargeRun {
        profile,
        cell_charge,
        initial_socs,
        final_socs: socs,
        max_voltage_residual,
        max_current_residual,
    })
}

/// How cell SoH values are drawn for each module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SohSampler {
    /// Every cell gets the same value.
    PointMass { value: f64 },
    /// Independent uniform draws per cell.
    Uniform { low: f64, high: f64 },
    /// A module mean drawn uniformly, then per-cell offsets drawn uniformly
    /// in `[-spread, spread]` with `spread` itself uniform in `[0, spread_max]`.
    /// Yields variation that is roughly independent of module SoH.
    Spread {
        mean_low: f64,
        mean_high: f64,
        spread_max: f64,
    },
}

impl Default for SohSampler {
    fn default() -> Self {
        SohSampler::Spread {
            mean_low: 0.82,
            mean_high: 0.99,
            spread_max: 0.14,
        }
    }
}

/// Lowest SoH the spread sampler will clip to.
const SOH_FLOOR: f64 = 0.6;

impl SohSampler {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        match *self {
            SohSampler::PointMass { value } if in_unit(value) => Ok(()),
            SohSampler::PointMass { value } => {
                Err(Error::Config(format!("point-mass SoH {value} outside (0, 1]")))
            }
            SohSampler::Uniform { low, high } => {
                if !(in_unit(low) && in_unit(high)) {
                    Err(Error::Config("uniform sampler bounds must lie in (0, 1]".into()))
                } else if !(high > low) {
                    Err(Error::Config(
                        "uniform sampler has zero support (need low < high)".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            SohSampler::Spread {
                mean_low,
                mean_high,
                spread_max,
            } => {
                if !(in_unit(mean_low) && in_unit(mean_high)) || mean_low < SOH_FLOOR {
                    Err(Error::Config(format!(
                        "spread sampler means must lie in [{SOH_FLOOR}, 1]"
                    )))
                } else if !(mean_high > mean_low) || !(spread_max >= 0.0) {
                    Err(Error::Config(
                        "spread sampler has zero support (need mean_low < mean_high, spread_max >= 0)".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn sample<R: Rng>(&self, n_cells: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            SohSampler::PointMass { value } => vec![value; n_cells],
            SohSampler::Uniform { low, high } => (0..n_cells).map(|_| rng.gen_range(low..=high)).collect(),
            SohSampler::Spread {
                mean_low,
                mean_high,
                spread_max,
            } => {
                let mean = rng.gen_range(mean_low..=mean_high);
                let spread = rng.gen_range(0.0..=spread_max);
                (0..n_cells)
                    .map(|_| (mean + spread * rng.gen_range(-1.0..=1.0)).clamp(SOH_FLOOR, 1.0))
                    .collect()
            }
        }
    }
}

/// Cell parameters shared by every module in a fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellTemplate {
    pub count: usize,
    pub fresh_capacity: f64,
    /// Series resistance of a fresh cell (Ohm).
    pub fresh_resistance: f64,
    /// Relative resistance increase per unit of lost SoH.
    pub resistance_growth: f64,
    /// Relative standard deviation of cell-to-cell resistance scatter.
    pub resistance_jitter: f64,
    pub interconnect_resistance: f64,
}

impl Default for CellTemplate {
    fn default() -> Self {
        Self {
            count: 3,
            fresh_capacity: 3.0,
            fresh_resistance: 0.02,
            resistance_growth: 5.0,
            resistance_jitter: 0.02,
            interconnect_resistance: 0.002,
        }
    }
}

impl CellTemplate {
    pub fn cell(&self, c_soh: f64, jitter_draw: f64) -> CellSpec {
        let scale = (1.0 + self.resistance_jitter * jitter_draw).max(0.5);
        CellSpec {
            fresh_capacity: self.fresh_capacity,
            c_soh,
            series_resistance: self.fresh_resistance * (1.0 + self.resistance_growth * (1.0 - c_soh)) * scale,
        }
    }
}

/// Solver and window settings shared by every charge in a fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub v_min: f64,
    pub v_max: f64,
    pub timestep: f64,
    pub tolerance: f64,
    pub record_every: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self {
            v_min: d.v_min,
            v_max: d.v_max,
            timestep: d.timestep,
            tolerance: d.solver_tolerance,
            record_every: d.record_every,
        }
    }
}

impl SolverSettings {
    pub fn at_c_rate(&self, c_rate: f64) -> SimulationConfig {
        SimulationConfig {
            c_rate,
            v_min: self.v_min,
            v_max: self.v_max,
            timestep: self.timestep,
            solver_tolerance: self.tolerance,
            record_every: self.record_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub n_modules: usize,
    pub cells: CellTemplate,
    pub sampler: SohSampler,
    pub c_rates: Vec<f64>,
    pub seed: u64,
    pub solver: SolverSettings,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            n_modules: 78,
            cells: CellTemplate::default(),
            sampler: SohSampler::default(),
            c_rates: vec![0.5, 0.25],
            seed: 2024,
            solver: SolverSettings::default(),
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_modules == 0 {
            return Err(Error::Config("n_modules must be >= 1".into()));
        }
        if self.cells.count == 0 {
            return Err(Error::Config("cells.count must be >= 1".into()));
        }
        if self.c_rates.is_empty() || self.c_rates.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config(
                "c_rates must be a nonempty list of positive values".into(),
            ));
        }
        self.sampler.validate()?;
        for &c in &self.c_rates {
            self.solver.at_c_rate(c).validate()?;
        }
        Ok(())
    }
}

/// One simulated charge together with its ground truth.
#[derive(Debug, Clone)]
pub struct FleetRecord {
    pub module_index: usize,
    pub profile: QVProfile,
    pub labels: SohLabels,
    /// Module capacity over the window relative to a fresh module charged
    /// under the same conditions.
    pub m_soh_measured: f64,
}

impl FleetRecord {
    pub fn module_id(&self) -> &str {
        &self.profile.module_id
    }

    pub fn c_rate(&self) -> f64 {
        self.profile.c_rate
    }
}

pub fn module_id(index: usize) -> String {
    format!("m{:03}", index + 1)
}

fn module_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Builds the module for fleet slot `index`, deterministic in `(seed, index)`.
pub fn fleet_module(config: &FleetConfig, ocv: &OcvModel, index: usize) -> Result<ModuleSpec> {
    let mut rng = module_rng(config.seed, index);
    let c_soh = config.sampler.sample(config.cells.count, &mut rng);
    let cells = c_soh
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.cells.cell(s, z)
        })
        .collect();
    ModuleSpec::new(cells, config.cells.interconnect_resistance, ocv.clone())
}

/// Simulates every module once per C-rate. Records are ordered by module,
/// then by the order of `c_rates`.
pub fn generate_fleet(config: &FleetConfig) -> Result<Vec<FleetRecord>> {
    config.validate()?;
    let ocv = OcvModel::builtin();

    let reference = ModuleSpec::new(
        vec![config.cells.cell(1.0, 0.0); config.cells.count],
        config.cells.interconnect_resistance,
        ocv.clone(),
    )?;
    let reference_capacity: Vec<f64> = config
        .c_rates
        .iter()
        .map(|&c| {
            simulate_cc_charge(&reference, &config.solver.at_c_rate(c))
                .map(|run| run.profile.total_capacity())
        })
        .collect::<Result<_>>()?;

    let indices: Vec<usize> = (0..config.n_modules).collect();
    let per_module = crate::par_map(&indices, |&index| -> Result<Vec<FleetRecord>> {
        let module = fleet_module(config, &ocv, index)?;
        let c_soh: Vec<f64> = module.cells.iter().map(|c| c.c_soh).collect();
        let labels = compute_labels(&c_soh)?;
        config
            .c_rates
            .iter()
            .zip(&reference_capacity)
            .map(|(&c_rate, &q_ref)| {
                let run = simulate_cc_charge(&module, &config.solver.at_c_rate(c_rate))?;
                let mut profile = run.profile;
                profile.module_id = module_id(index);
                let m_soh_measured = profile.total_capacity() / q_ref;
                Ok(FleetRecord {
                    module_index: index,
                    profile,
                    labels: labels.clone(),
                    m_soh_measured,
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(config.n_modules * config.c_rates.len());
    for records in per_module {
        out.extend(records?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(c_soh: f64, r: f64) -> CellSpec {
        CellSpec {
            fresh_capacity: 3.0,
            c_soh,
            series_resistance: r,
        }
    }

    fn module(cells: Vec<CellSpec>) -> ModuleSpec {
        ModuleSpec::new(cells, 0.0, OcvModel::builtin()).unwrap()
    }

    #[test]
    fn builtin_ocv_is_monotone_and_invertible() {
        let ocv = OcvModel::builtin();
        assert_eq!(ocv.version(), 1);
        let mut prev = f64::MIN;
        for i in 0..=1000 {
            let v = ocv.voltage(i as f64 / 1000.0);
            assert!(v > prev);
            prev = v;
        }
        for s in [0.05, 0.3, 0.55, 0.9] {
            let back = ocv.soc_at(ocv.voltage(s)).unwrap();
            assert!((back - s).abs() < 1e-10);
        }
        assert!(ocv.soc_at(5.0).is_err());
    }

    #[test]
    fn symmetric_cells_share_current_equally() {
        let m = module(vec![cell(0.9, 0.02); 3]);
        let split = solve_current_split(&m, &[0.4; 3], 3.0, 1e-10).unwrap();
        for i in &split.currents {
            assert!((i - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lower_ocv_cell_draws_more_current() {
        let m = module(vec![cell(0.9, 0.02), cell(0.9, 0.02)]);
        let split = solve_current_split(&m, &[0.2, 0.6], 2.0, 1e-10).unwrap();
        assert!(split.currents[0] > split.currents[1]);
    }

    #[test]
    fn split_errors() {
        let m = module(vec![cell(0.9, 0.02); 2]);
        assert!(matches!(
            solve_current_split(&m, &[1.0, 1.2], 1.0, 1e-9),
            Err(Error::ChargeComplete)
        ));
        assert!(solve_current_split(&m, &[0.5, 0.5], 0.0, 1e-9).is_err());
        assert!(solve_current_split(&m, &[0.5], 1.0, 1e-9).is_err());
    }

    #[test]
    fn start_above_v_max_is_an_empty_profile() {
        let m = module(vec![cell(0.9, 0.02)]);
        let config = SimulationConfig {
            v_min: 4.15,
            v_max: 4.16,
            ..Default::default()
        };
        assert!(matches!(
            simulate_cc_charge(&m, &config),
            Err(Error::EmptyProfile(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = module(vec![cell(0.9, 0.02)]);
        for bad in [
            SimulationConfig {
                v_min: 4.0,
                v_max: 3.5,
                ..Default::default()
            },
            SimulationConfig {
                timestep: 0.0,
                ..Default::default()
            },
            SimulationConfig {
                solver_tolerance: -1.0,
                ..Default::default()
            },
        ] {
            assert!(simulate_cc_charge(&m, &bad).unwrap_err().is_config());
        }
    }

    #[test]
    fn samplers_validate_support() {
        assert!(SohSampler::Uniform { low: 0.9, high: 0.9 }.validate().is_err());
        assert!(SohSampler::Uniform { low: 0.8, high: 1.1 }.validate().is_err());
        assert!(SohSampler::PointMass { value: 1.0 }.validate().is_ok());
        assert!(SohSampler::PointMass { value: 0.0 }.validate().is_err());
        assert!(SohSampler::default().validate().is_ok());
    }

    #[test]
    fn sampler_draws_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SohSampler::Spread {
            mean_low: 0.7,
            mean_high: 1.0,
            spread_max: 0.3,
        };
        for _ in 0..500 {
            for v in s.sample(3, &mut rng) {
                assert!(v > 0.0 && v <= 1.0);
            }
        }
    }
}
