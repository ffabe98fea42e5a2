//! IC/DV feature extraction.
//!
//! Peaks and valleys are found by topographic prominence and then forced to
//! alternate. Features are indexed left to right ("IC PH 1" is the leftmost IC
//! peak height). Extrema are searched only on the interior of each curve; the
//! outer `edge_fraction` on both ends carries derivative edge artifacts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curves::{default_curves, fit_both, CurveKind, DifferentialCurve, QVProfile, SmoothingConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExtremumKind {
    Peak,
    Valley,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub kind: ExtremumKind,
    pub location: f64,
    pub height: f64,
    /// Index into the curve grid.
    pub index: usize,
    pub prominence: f64,
}

/// Prominence of the local maximum at `i`: its height above the higher of
/// the two bases, each base being the lowest point between `i` and the
/// nearest higher sample (or the curve end) on that side.
fn peak_prominence(v: &[f64], i: usize) -> f64 {
    let h = v[i];
    let mut left = h;
    for j in (0..i).rev() {
        if v[j] > h {
            break;
        }
        left = left.min(v[j]);
    }
    let mut right = h;
    for &x in &v[i + 1..] {
        if x > h {
            break;
        }
        right = right.min(x);
    }
    h - left.max(right)
}

fn local_maxima(v: &[f64]) -> Vec<usize> {
    let n = v.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if v[i] > v[i - 1] {
            // walk across a flat top
            let mut j = i;
            while j + 1 < n && v[j + 1] == v[i] {
                j += 1;
            }
            if j + 1 < n && v[j + 1] < v[i] {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Interior peaks and valleys whose prominence is at least `prominence`,
/// sorted by abscissa and strictly alternating.
pub fn detect_extrema(curve: &DifferentialCurve, prominence: f64) -> Result<Vec<Extremum>> {
    if !(prominence > 0.0) {
        return Err(Error::Config("prominence must be positive".into()));
    }
    let v = &curve.values;
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let mut found: Vec<Extremum> = Vec::new();
    for (kind, series) in [(ExtremumKind::Peak, v.as_slice()), (ExtremumKind::Valley, &neg)] {
        for i in local_maxima(series) {
            let p = peak_prominence(series, i);
            if p >= prominence {
                found.push(Extremum {
                    kind,
                    location: curve.grid[i],
                    height: v[i],
                    index: i,
                    prominence: p,
                });
            }
        }
    }
    found.sort_by_key(|e| e.index);

    // Collapse runs of the same kind, keeping the most extreme member.
    let mut out: Vec<Extremum> = Vec::with_capacity(found.len());
    for e in found {
        match out.last_mut() {
            Some(last) if last.kind == e.kind => {
                let better = match e.kind {
                    ExtremumKind::Peak => e.height > last.height,
                    ExtremumKind::Valley => e.height < last.height,
                };
                if better {
                    *last = e;
                }
            }
            _ => out.push(e),
        }
    }
    Ok(out)
}

/// Default prominence: a fraction of the curve's ordinate range.
pub fn default_prominence(curve: &DifferentialCurve, fraction: f64) -> f64 {
    let hi = curve.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = curve.values.iter().copied().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if range > 0.0 {
        fraction * range
    } else {
        f64::MIN_POSITIVE
    }
}

/// Trapezoid integral of the piecewise-linear curve over `[a, b]`, clipped to
/// the grid.
pub fn integrate(curve: &DifferentialCurve, a: f64, b: f64) -> f64 {
    let g = &curve.grid;
    let n = g.len();
    let a = a.max(g[0]);
    let b = b.min(g[n - 1]);
    if !(b > a) {
        return 0.0;
    }
    let mut xs = vec![a];
    xs.extend(g.iter().copied().filter(|&x| x > a && x < b));
    xs.push(b);
    xs.windows(2)
        .map(|w| {
            let ya = curve.at(w[0]).unwrap_or(0.0);
            let yb = curve.at(w[1]).unwrap_or(0.0);
            0.5 * (ya + yb) * (w[1] - w[0])
        })
        .sum()
}

/// IC peak areas split at the valley locations: `[start, v1], [v1, v2],
/// [v2, end]` with two valleys, `[start, v1], [v1, end]` with one, and the
/// whole curve with none. Slots without a segment are `None`.
pub fn ic_peak_areas(ic: &DifferentialCurve, valleys: &[f64]) -> [Option<f64>; 3] {
    let start = ic.grid[0];
    let end = ic.grid[ic.len() - 1];
    let mut cuts: Vec<f64> = valleys
        .iter()
        .copied()
        .filter(|v| *v > start && *v < end)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.truncate(2);
    let mut bounds = vec![start];
    bounds.extend(&cuts);
    bounds.push(end);
    let mut areas = [None; 3];
    for (slot, w) in areas.iter_mut().zip(bounds.windows(2)) {
        *slot = Some(integrate(ic, w[0], w[1]));
    }
    areas
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartialAreaMode {
    /// Absolute cutoff height (Ah/V).
    Cutoff { height: f64 },
    /// Cutoff at this fraction of each peak's own height.
    RelativeCutoff { fraction: f64 },
    /// Symmetric voltage window (V) centred on the peak.
    Window { width: f64 },
}

impl Default for PartialAreaMode {
    fn default() -> Self {
        PartialAreaMode::RelativeCutoff { fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialArea {
    pub area: f64,
    /// Set when a window had to be clipped to the curve domain.
    pub clipped: bool,
}

/// Abscissa where the segment `(x0, y0)–(x1, y1)` crosses `level`.
fn crossing(x0: f64, y0: f64, x1: f64, y1: f64, level: f64) -> f64 {
    if y1 == y0 {
        x0
    } else {
        x0 + (level - y0) * (x1 - x0) / (y1 - y0)
    }
}

/// Area of an IC peak, either above a horizontal cutoff or inside a voltage
/// window centred on the peak.
pub fn ic_partial_area(
    ic: &DifferentialCurve,
    peak: &Extremum,
    mode: PartialAreaMode,
) -> Result<PartialArea> {
    if peak.kind != ExtremumKind::Peak {
        return Err(Error::Input("partial area needs a peak".into()));
    }
    let g = &ic.grid;
    let v = &ic.values;
    let n = g.len();
    match mode {
        PartialAreaMode::Window { width } => {
            if !(width > 0.0) {
                return Err(Error::Config("window width must be positive".into()));
            }
            let a = peak.location - 0.5 * width;
            let b = peak.location + 0.5 * width;
            let clipped = a < g[0] || b > g[n - 1];
            Ok(PartialArea {
                area: integrate(ic, a, b),
                clipped,
            })
        }
        PartialAreaMode::Cutoff { height } | PartialAreaMode::RelativeCutoff { fraction: height } => {
            let h = match mode {
                PartialAreaMode::RelativeCutoff { fraction } => fraction * peak.height,
                _ => height,
            };
            let i = peak.index.min(n - 1);
            if v[i] <= h {
                return Ok(PartialArea {
                    area: 0.0,
                    clipped: false,
                });
            }
            let mut lo = i;
            while lo > 0 && v[lo - 1] >= h {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < n && v[hi + 1] >= h {
                hi += 1;
            }
            let a = if lo > 0 {
                crossing(g[lo - 1], v[lo - 1], g[lo], v[lo], h)
            } else {
                g[0]
            };
            let b = if hi + 1 < n {
                crossing(g[hi], v[hi], g[hi + 1], v[hi + 1], h)
            } else {
                g[n - 1]
            };
            let mut xs = vec![a];
            xs.extend_from_slice(&g[lo..=hi]);
            xs.push(b);
            let area = xs
                .windows(2)
                .map(|w| {
                    let ya = (ic.at(w[0]).unwrap_or(h) - h).max(0.0);
                    let yb = (ic.at(w[1]).unwrap_or(h) - h).max(0.0);
                    0.5 * (ya + yb) * (w[1] - w[0])
                })
                .sum();
            Ok(PartialArea {
                area,
                clipped: lo == 0 || hi + 1 == n,
            })
        }
    }
}

/// Feature categories, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureCategory {
    IcPeakHeight,
    IcPeakLocation,
    IcValleyHeight,
    IcValleyLocation,
    DvPeakHeight,
    DvPeakLocation,
    DvValleyHeight,
    DvValleyLocation,
    IcPeakArea,
    IcPartialArea,
    Temperature,
    CRate,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 12] = [
        FeatureCategory::IcPeakHeight,
        FeatureCategory::IcPeakLocation,
        FeatureCategory::IcValleyHeight,
        FeatureCategory::IcValleyLocation,
        FeatureCategory::DvPeakHeight,
        FeatureCategory::DvPeakLocation,
        FeatureCategory::DvValleyHeight,
        FeatureCategory::DvValleyLocation,
        FeatureCategory::IcPeakArea,
        FeatureCategory::IcPartialArea,
        FeatureCategory::Temperature,
        FeatureCategory::CRate,
    ];

    pub fn acronym(self) -> &'static str {
        match self {
            FeatureCategory::IcPeakHeight => "IC PH",
            FeatureCategory::IcPeakLocation => "IC PL",
            FeatureCategory::IcValleyHeight => "IC VH",
            FeatureCategory::IcValleyLocation => "IC VL",
            FeatureCategory::DvPeakHeight => "DV PH",
            FeatureCategory::DvPeakLocation => "DV PL",
            FeatureCategory::DvValleyHeight => "DV VH",
            FeatureCategory::DvValleyLocation => "DV VL",
            FeatureCategory::IcPeakArea => "IC AR",
            FeatureCategory::IcPartialArea => "IC PA",
            FeatureCategory::Temperature => "Temperature",
            FeatureCategory::CRate => "C Rate",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            FeatureCategory::IcPeakHeight | FeatureCategory::IcValleyHeight => "Ah/V",
            FeatureCategory::IcPeakLocation | FeatureCategory::IcValleyLocation => "V",
            FeatureCategory::DvPeakHeight | FeatureCategory::DvValleyHeight => "V/Ah",
            FeatureCategory::DvPeakLocation | FeatureCategory::DvValleyLocation => "Ah",
            FeatureCategory::IcPeakArea | FeatureCategory::IcPartialArea => "Ah",
            FeatureCategory::Temperature => "°C",
            FeatureCategory::CRate => "C",
        }
    }

    fn indexed(self) -> bool {
        !matches!(self, FeatureCategory::Temperature | FeatureCategory::CRate)
    }
}

/// A named feature such as "IC PH 1" or "C Rate".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureDescriptor {
    pub category: FeatureCategory,
    /// 1-based left-to-right ordinal; `None` for charging-condition features.
    pub index: Option<usize>,
}

impl FeatureDescriptor {
    pub fn indexed(category: FeatureCategory, index: usize) -> Self {
        Self {
            category,
            index: Some(index),
        }
    }

    pub fn condition(category: FeatureCategory) -> Self {
        Self {
            category,
            index: None,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} {}", self.category.acronym(), i),
            None => f.write_str(self.category.acronym()),
        }
    }
}

impl std::str::FromStr for FeatureDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        for cat in FeatureCategory::ALL {
            let acr = cat.acronym();
            if !cat.indexed() {
                if s == acr {
                    return Ok(Self::condition(cat));
                }
                continue;
            }
            if let Some(rest) = s.strip_prefix(acr).and_then(|r| r.strip_prefix(' ')) {
                if let Ok(i) = rest.parse::<usize>() {
                    if i >= 1 {
                        return Ok(Self::indexed(cat, i));
                    }
                }
            }
        }
        Err(Error::Input(format!("unknown feature name '{s}'")))
    }
}

impl Serialize for FeatureDescriptor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureDescriptor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Features of one module charge. Absent features are simply missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: BTreeMap<FeatureDescriptor, f64>,
    pub module_id: String,
    pub c_rate: f64,
    pub temperature: f64,
}

impl FeatureVector {
    pub fn get(&self, name: &FeatureDescriptor) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn get_named(&self, name: &str) -> Option<f64> {
        name.parse().ok().and_then(|d| self.get(&d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Extremum prominence as a fraction of the curve ordinate range.
    pub prominence_fraction: f64,
    /// Fraction of the curve excluded from extremum search at each end.
    pub edge_fraction: f64,
    pub partial_area: PartialAreaMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            prominence_fraction: 0.05,
            edge_fraction: 0.05,
            partial_area: PartialAreaMode::default(),
        }
    }
}

/// Charging conditions that accompany a pair of curves.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeMeta {
    pub module_id: String,
    pub c_rate: f64,
    pub temperature: f64,
}

impl From<&QVProfile> for ChargeMeta {
    fn from(p: &QVProfile) -> Self {
        Self {
            module_id: p.module_id.clone(),
            c_rate: p.c_rate,
            temperature: p.temperature,
        }
    }
}

/// The curve with `edge_fraction` of its points removed from each end.
pub fn trim_edges(curve: &DifferentialCurve, edge_fraction: f64) -> DifferentialCurve {
    let n = curve.len();
    let cut = ((n as f64) * edge_fraction.clamp(0.0, 0.49)).floor() as usize;
    DifferentialCurve {
        grid: curve.grid[cut..n - cut].to_vec(),
        values: curve.values[cut..n - cut].to_vec(),
        kind: curve.kind,
    }
}

/// Extrema of the trimmed curve, with indices referring to the trimmed grid.
pub fn curve_extrema(
    curve: &DifferentialCurve,
    config: &FeatureConfig,
) -> Result<(DifferentialCurve, Vec<Extremum>)> {
    let inner = trim_edges(curve, config.edge_fraction);
    let p = default_prominence(&inner, config.prominence_fraction);
    let ext = detect_extrema(&inner, p)?;
    Ok((inner, ext))
}

pub fn assemble_feature_vector(
    ic: &DifferentialCurve,
    dv: &DifferentialCurve,
    meta: &ChargeMeta,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    if ic.kind != CurveKind::Ic || dv.kind != CurveKind::Dv {
        return Err(Error::Input("expected an IC curve and a DV curve".into()));
    }
    let mut values = BTreeMap::new();
    let mut put = |cat, idx, v: f64| {
        values.insert(FeatureDescriptor::indexed(cat, idx), v);
    };

    let (ic_inner, ic_ext) = curve_extrema(ic, config)?;
    let mut valleys = Vec::new();
    let (mut np, mut nv) = (0, 0);
    for e in &ic_ext {
        match e.kind {
            ExtremumKind::Peak => {
                np += 1;
                put(FeatureCategory::IcPeakHeight, np, e.height);
                put(FeatureCategory::IcPeakLocation, np, e.location);
                let pa = ic_partial_area(&ic_inner, e, config.partial_area)?;
                if pa.clipped {
                    log::debug!("partial area of IC peak {np} clipped to the curve window");
                }
                put(FeatureCategory::IcPartialArea, np, pa.area);
            }
            ExtremumKind::Valley => {
                nv += 1;
                put(FeatureCategory::IcValleyHeight, nv, e.height);
                put(FeatureCategory::IcValleyLocation, nv, e.location);
                valleys.push(e.location);
            }
        }
    }
    for (i, a) in ic_peak_areas(ic, &valleys).iter().enumerate() {
        if let Some(a) = a {
            put(FeatureCategory::IcPeakArea, i + 1, *a);
        }
    }

    let (_, dv_ext) = curve_extrema(dv, config)?;
    let (mut np, mut nv) = (0, 0);
    for e in &dv_ext {
        match e.kind {
            ExtremumKind::Peak => {
                np += 1;
                put(FeatureCategory::DvPeakHeight, np, e.height);
                put(FeatureCategory::DvPeakLocation, np, e.location);
            }
            ExtremumKind::Valley => {
                nv += 1;
                put(FeatureCategory::DvValleyHeight, nv, e.height);
                put(FeatureCategory::DvValleyLocation, nv, e.location);
            }
        }
    }

    values.insert(FeatureDescriptor::condition(FeatureCategory::CRate), meta.c_rate);
    values.insert(
        FeatureDescriptor::condition(FeatureCategory::Temperature),
        meta.temperature,
    );
    Ok(FeatureVector {
        values,
        module_id: meta.module_id.clone(),
        c_rate: meta.c_rate,
        temperature: meta.temperature,
    })
}

/// Everything derived from one profile.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub ic: DifferentialCurve,
    pub dv: DifferentialCurve,
    pub features: FeatureVector,
}

/// Smoothing, differentiation and feature assembly for one profile.
pub fn extract_profile(
    profile: &QVProfile,
    smoothing: &SmoothingConfig,
    config: &FeatureConfig,
) -> Result<Extraction> {
    let models = fit_both(profile, smoothing)?;
    let (ic, dv) = default_curves(&models)?;
    let features = assemble_feature_vector(&ic, &dv, &ChargeMeta::from(profile), config)?;
    Ok(Extraction { ic, dv, features })
}
