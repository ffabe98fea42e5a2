//! CSV readers and writers for the on-disk artifacts of each stage.

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::curves::{DifferentialCurve, QVProfile};
use crate::error::{Error, Result};
use crate::featsel::ScoreMatrices;
use crate::metrics::SohLabels;
use crate::pipeline::{EvaluationReport, FeatureTable, LabelTable, RowKey, SweepRow};
use crate::simulate::FleetRecord;

pub const PROFILE_INDEX: &str = "profiles.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_FILE: &str = "features.csv";

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Input(format!("cannot read {}: {e}", path.display())),
        _ => Error::Csv(e),
    })
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Input(format!("{what}: '{field}' is not a number")))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// File stem used for per-charge artifacts, e.g. `m001_c0.5`.
pub fn charge_stem(module_id: &str, c_rate: f64) -> String {
    format!("{module_id}_c{c_rate}")
}

pub fn write_profile(path: &Path, profile: &QVProfile) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["capacity_ah", "voltage_v"])?;
    for (q, v) in profile.capacity.iter().zip(&profile.voltage) {
        w.write_record([fmt(*q), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile(path: &Path, module_id: &str, c_rate: f64, temperature: f64) -> Result<QVProfile> {
    let mut r = reader(path)?;
    let (mut q, mut v) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Input(format!(
                "{}: expected capacity_ah,voltage_v",
                path.display()
            )));
        }
        q.push(parse_f64(&rec[0], "capacity_ah")?);
        v.push(parse_f64(&rec[1], "voltage_v")?);
    }
    let mut p = QVProfile::new(q, v, c_rate)?.with_module_id(module_id);
    p.temperature = temperature;
    Ok(p)
}

/// One line of the profile index written next to the Q-V files.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    pub module_id: String,
    pub c_rate: f64,
    pub temperature: f64,
    /// Relative to the index file.
    pub file: String,
}

/// Writes every profile under `dir/profiles/` plus the index and labels.
pub fn write_fleet(dir: &Path, records: &[FleetRecord]) -> Result<()> {
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        let file = format!("profiles/{}.csv", charge_stem(rec.module_id(), rec.c_rate()));
        write_profile(&dir.join(&file), &rec.profile)?;
        entries.push(ProfileEntry {
            module_id: rec.module_id().to_string(),
            c_rate: rec.c_rate(),
            temperature: rec.profile.temperature,
            file,
        });
    }
    write_profile_index(&dir.join(PROFILE_INDEX), &entries)?;
    write_labels(&dir.join(LABELS_FILE), records)
}

pub fn write_profile_index(path: &Path, entries: &[ProfileEntry]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["module_id", "c_rate", "temperature_c", "file"])?;
    for e in entries {
        w.write_record([
            e.module_id.clone(),
            fmt(e.c_rate),
            fmt(e.temperature),
            e.file.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile_index(path: &Path) -> Result<Vec<ProfileEntry>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Input(format!(
                "{}: expected module_id,c_rate,temperature_c,file",
                path.display()
            )));
        }
        out.push(ProfileEntry {
            module_id: rec[0].to_string(),
            c_rate: parse_f64(&rec[1], "c_rate")?,
            temperature: parse_f64(&rec[2], "temperature_c")?,
            file: rec[3].to_string(),
        });
    }
    Ok(out)
}

/// Reads every profile listed in an index; paths resolve against the index's directory.
pub fn read_profiles(index: &Path) -> Result<Vec<QVProfile>> {
    let base: PathBuf = index.parent().map(Path::to_path_buf).unwrap_or_default();
    read_profile_index(index)?
        .iter()
        .map(|e| read_profile(&base.join(&e.file), &e.module_id, e.c_rate, e.temperature))
        .collect()
}

pub fn write_labels(path: &Path, records: &[FleetRecord]) -> Result<()> {
    let np = records.iter().map(|r| r.labels.c_soh.len()).max().unwrap_or(0);
    if records.iter().any(|r| r.labels.c_soh.len() != np) {
        return Err(Error::Input("all modules must have the same cell count".into()));
    }
    let mut w = writer(path)?;
    let mut header: Vec<String> = ["module_id", "c_rate", "m_soh", "sd", "range", "cv"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=np).map(|i| format!("c_soh_{i}")));
    header.push("m_soh_measured".into());
    w.write_record(&header)?;
    for r in records {
        let l = &r.labels;
        let mut row = vec![
            r.module_id().to_string(),
            fmt(r.c_rate()),
            fmt(l.m_soh),
            fmt(l.sd),
            fmt(l.range),
            fmt(l.cv),
        ];
        row.extend(l.c_soh.iter().map(|v| fmt(*v)));
        row.push(fmt(r.m_soh_measured));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelTable> {
    let mut r = reader(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("{}: missing column {name}", path.display())))
    };
    let (id, c, m, sd, range, cv) = (
        col("module_id")?,
        col("c_rate")?,
        col("m_soh")?,
        col("sd")?,
        col("range")?,
        col("cv")?,
    );
    let cells: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("c_soh_"))
        .map(|(i, _)| i)
        .collect();
    let (mut keys, mut labels) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        keys.push(RowKey::new(&rec[id], parse_f64(&rec[c], "c_rate")?));
        labels.push(SohLabels {
            c_soh: cells
                .iter()
                .map(|&i| parse_f64(&rec[i], "c_soh"))
                .collect::<Result<_>>()?,
            m_soh: parse_f64(&rec[m], "m_soh")?,
            sd: parse_f64(&rec[sd], "sd")?,
            range: parse_f64(&rec[range], "range")?,
            cv: parse_f64(&rec[cv], "cv")?,
        });
    }
    LabelTable::new(keys, labels)
}

pub fn write_curve(path: &Path, curve: &DifferentialCurve) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["abscissa", "value"])?;
    for (x, y) in curve.grid.iter().zip(&curve.values) {
        w.write_record([fmt(*x), fmt(*y)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["module_id".to_string(), "c_rate".to_string()];
    header.extend(table.names().iter().cloned());
    w.write_record(&header)?;
    for (key, row) in table.keys().iter().zip(table.rows()) {
        let mut rec = vec![key.module_id.clone(), fmt(key.c_rate)];
        rec.extend(row.iter().map(|v| v.map(fmt).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_table(path: &Path) -> Result<FeatureTable> {
    let mut r = reader(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "module_id" || &header[1] != "c_rate" {
        return Err(Error::Input(format!(
            "{}: header must start with module_id,c_rate",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let (mut keys, mut rows) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        keys.push(RowKey::new(&rec[0], parse_f64(&rec[1], "c_rate")?));
        let row = rec
            .iter()
            .skip(2)
            .zip(&names)
            .map(|(f, n)| {
                if f.trim().is_empty() {
                    Ok(None)
                } else {
                    parse_f64(f, n).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    FeatureTable::new(names, keys, rows)
}

fn write_square(path: &Path, names: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![String::from("feature")];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `relevance.csv`, `redundancy.csv` and `complementarity.csv` in `dir`.
pub fn write_score_matrices(dir: &Path, scores: &ScoreMatrices) -> Result<()> {
    let mut w = writer(&dir.join("relevance.csv"))?;
    w.write_record(["feature", "relevance"])?;
    for (n, v) in scores.names.iter().zip(&scores.relevance) {
        w.write_record([n.clone(), fmt(*v)])?;
    }
    w.flush()?;
    write_square(&dir.join("redundancy.csv"), &scores.names, &scores.redundancy)?;
    write_square(
        &dir.join("complementarity.csv"),
        &scores.names,
        &scores.complementarity,
    )
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "n_features",
        "mae",
        "avg_three_sigma",
        "n_rv",
        "coverage",
        "pearson_r",
    ])?;
    for r in rows {
        w.write_record([
            r.n_features.to_string(),
            fmt(r.mae),
            fmt(r.avg_three_sigma),
            fmt(r.n_rv),
            fmt(r.coverage),
            fmt(r.pearson_r),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["module_id", "c_rate", "truth", "mean", "lower", "upper", "n_rv"])?;
    for r in &report.rows {
        w.write_record([
            r.module_id.clone(),
            fmt(r.c_rate),
            fmt(r.truth),
            fmt(r.mean),
            fmt(r.lower),
            fmt(r.upper),
            r.n_rv.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
