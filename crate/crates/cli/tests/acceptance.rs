//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to the
//! process stderr (bypassing the harness capture) before asserting.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use modhealth_core::curves::{fit_both, SmoothingConfig};
use modhealth_core::featsel::{select_features, FeatureMatrix, SelectionConfig};
use modhealth_core::features::{extract_profile, FeatureConfig};
use modhealth_core::infotheory::{estimate_cmi, estimate_mi, standardize_values, DEFAULT_K};
use modhealth_core::metrics::{compute_labels, Task};
use modhealth_core::pipeline::{run_sweep, FeatureTable, LabelProvider, LabelTable, RunConfig, RvrPredictor};
use modhealth_core::rvr::{train, KernelConfig, TrainingLimits};
use modhealth_core::simulate::{generate_fleet, FleetConfig, FleetRecord};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] {name}: {detail} ({:.1} s)\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn z(v: &[f64]) -> Vec<f64> {
    standardize_values(v).unwrap()
}

fn dataset(records: &[FleetRecord]) -> (FeatureTable, LabelTable) {
    let vectors: Vec<_> = records
        .iter()
        .map(|r| {
            extract_profile(&r.profile, &SmoothingConfig::default(), &FeatureConfig::default())
                .unwrap()
                .features
        })
        .collect();
    let table = FeatureTable::from_vectors(&vectors);
    let labels = LabelTable::new(
        table.keys().to_vec(),
        records.iter().map(|r| r.labels.clone()).collect(),
    )
    .unwrap();
    (table, labels)
}

/// Serves one task only; any other read fails the run.
struct Guard<'a> {
    inner: &'a LabelTable,
    allowed: Task,
    violations: Mutex<usize>,
}

impl LabelProvider for Guard<'_> {
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn label(&self, row: usize, task: Task) -> modhealth_core::Result<f64> {
        if task != self.allowed {
            *self.violations.lock().unwrap() += 1;
            return Err(modhealth_core::Error::Input(format!(
                "{task} label read during a {} run",
                self.allowed
            )));
        }
        self.inner.label(row, task)
    }
}

#[test]
fn metric_vectors() {
    let t = Instant::now();
    let sd_max = compute_labels(&[0.992, 0.806, 0.785]).unwrap().sd * 100.0;
    let m_med = compute_labels(&[0.919, 0.918, 0.823]).unwrap().m_soh * 100.0;
    let sd_min = compute_labels(&[0.830, 0.819, 0.809]).unwrap().sd * 100.0;
    let pass =
        (sd_max - 9.31).abs() <= 0.05 && (m_med - 88.67).abs() <= 0.05 && (sd_min - 0.84).abs() <= 0.05;
    let el = t.elapsed();
    report(
        "metric vectors",
        pass && el.as_secs_f64() < 1.0,
        &format!("SD {sd_max:.3} %, M-SoH {m_med:.3} %, SD {sd_min:.3} %"),
        el,
    );
}

#[test]
fn mutual_information_accuracy() {
    let t = Instant::now();
    let n = 2000;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for rho in [0.3f64, 0.6, 0.9] {
        let expected = -0.5 * (1.0 - rho * rho).ln();
        let mut total = 0.0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                let a = normal(&mut rng);
                x.push(a);
                y.push(rho * a + (1.0 - rho * rho).sqrt() * normal(&mut rng));
            }
            total += estimate_mi(&z(&x), &z(&y), DEFAULT_K, seed).unwrap();
        }
        let err = total / 10.0 - expected;
        worst = worst.max(err.abs());
        detail.push(format!("ρ={rho}: {:.4} vs {expected:.4}", total / 10.0));
    }
    let el = t.elapsed();
    report(
        "MI estimator accuracy",
        worst <= 0.03 && el.as_secs_f64() < 30.0,
        &detail.join(", "),
        el,
    );
}

#[test]
fn conditional_independence() {
    let t = Instant::now();
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let f: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let h: Vec<f64> = f.iter().map(|x| x + normal(&mut rng)).collect();
    let g: Vec<f64> = h.iter().map(|x| x + normal(&mut rng)).collect();
    let (f, g, h) = (z(&f), z(&g), z(&h));
    let cmi = estimate_cmi(&f, &g, &h, DEFAULT_K).unwrap();
    let mi = estimate_mi(&f, &g, DEFAULT_K, 5).unwrap();
    let el = t.elapsed();
    report(
        "CMI conditional independence",
        cmi.abs() <= 0.03 && mi >= 0.1 && el.as_secs_f64() < 30.0,
        &format!("CMI {cmi:.4} nats, MI {mi:.4} nats"),
        el,
    );
}

fn matrix(cols: Vec<(&str, Vec<f64>)>) -> FeatureMatrix {
    let names = cols.iter().map(|(n, _)| n.to_string()).collect();
    FeatureMatrix::new(names, cols.into_iter().map(|(_, c)| c).collect()).unwrap()
}

#[test]
fn greedy_selection_oracle() {
    let t = Instant::now();
    let n = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut g = || (0..n).map(|_| normal(&mut rng)).collect::<Vec<f64>>();
    let (x1, x2, x3) = (g(), g(), g());
    let (n1, n2, n3) = (g(), g(), g());
    let e = g();
    let y: Vec<f64> = (0..n).map(|i| x1[i] + x2[i] + x3[i] + 0.1 * e[i]).collect();
    let data = matrix(vec![
        ("info 1", x1.clone()),
        ("info 2", x2.clone()),
        ("info 3", x3),
        ("info 1 copy", x1),
        ("info 2 copy", x2),
        ("noise 1", n1),
        ("noise 2", n2),
        ("noise 3", n3),
    ]);
    let result = select_features(&data, &y, &[], SelectionConfig::default()).unwrap();
    let sel = result.selected_names();
    let set = |v: &[String]| v.iter().cloned().collect::<BTreeSet<String>>();
    let expect = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    let eight_ok = sel.len() == 6
        && set(&sel[..3]) == expect(&["info 1", "info 2", "info 3"])
        && set(&sel[3..]) == expect(&["noise 1", "noise 2", "noise 3"])
        && set(&result.removed_names()) == expect(&["info 1 copy", "info 2 copy"]);

    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let a: Vec<f64> = (0..600).map(|_| rng.gen_range(0..2) as f64).collect();
    let b: Vec<f64> = (0..600).map(|_| rng.gen_range(0..2) as f64).collect();
    let noise: Vec<f64> = (0..600).map(|_| normal(&mut rng)).collect();
    let yx: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (p + q) % 2.0).collect();
    let xor = matrix(vec![("x1", a), ("x2", b), ("noise", noise)]);
    let xr = select_features(&xor, &yx, &["x1".into()], SelectionConfig::default()).unwrap();
    let xor_ok = xr.selected_names() == ["x1", "x2", "noise"];
    let el = t.elapsed();
    report(
        "greedy selection oracle",
        eight_ok && xor_ok && el.as_secs_f64() < 120.0,
        &format!(
            "eight-feature ranking {sel:?}, removed {:?}; XOR ranking {:?}",
            result.removed_names(),
            xr.selected_names()
        ),
        el,
    );
}

#[test]
fn rvr_canonical_fixture() {
    let t = Instant::now();
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { x.sin() / x };
    let data = |n: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| sinc(x) + 0.1 * normal(&mut rng)).collect();
        (xs.into_iter().map(|x| vec![x]).collect::<Vec<_>>(), ys)
    };
    let (x, y) = data(100, 2);
    let model = train(&x, &y, KernelConfig::rbf(0.5), TrainingLimits::default()).unwrap();
    let (tx, _) = data(1000, 3);
    let rmse = (tx
        .iter()
        .map(|v| (model.predict(v).unwrap().mean - sinc(v[0])).powi(2))
        .sum::<f64>()
        / tx.len() as f64)
        .sqrt();

    let xs: Vec<Vec<f64>> = x.iter().map(|r| model.input_scaler.transform(r)).collect();
    let tt = DVector::from_iterator(
        y.len(),
        y.iter()
            .map(|v| (v - model.output_scaler.mean[0]) / model.output_scaler.sd[0]),
    );
    let off = model.offset_retained as usize;
    let phi = DMatrix::from_fn(xs.len(), model.n_weights(), |i, j| {
        if j < off {
            1.0
        } else {
            model.kernel.eval(&xs[i], &model.relevance_vectors[j - off])
        }
    });
    let beta = model.noise_precision;
    let a = DMatrix::from_diagonal(&DVector::from_vec(model.alphas.clone()));
    let oracle = (phi.tr_mul(&phi) * beta + a).lu().try_inverse().unwrap();
    let rel_sigma = (model.covariance() - &oracle).norm() / oracle.norm();
    let mu_oracle = &oracle * phi.tr_mul(&tt) * beta;
    let rel_mu = (DVector::from_vec(model.posterior_mean.clone()) - &mu_oracle).norm() / mu_oracle.norm();
    let el = t.elapsed();
    report(
        "RVR canonical fixture",
        rmse <= 0.15
            && model.n_relevance_vectors() <= 20
            && rel_sigma <= 1e-8
            && rel_mu <= 1e-8
            && el.as_secs_f64() < 30.0,
        &format!(
            "RMSE {rmse:.4}, {} relevance vectors, Σ rel. error {rel_sigma:.1e}, μ rel. error {rel_mu:.1e}",
            model.n_relevance_vectors()
        ),
        el,
    );
}

#[test]
fn curve_reciprocity() {
    let t = Instant::now();
    let fleet = generate_fleet(&FleetConfig {
        n_modules: 8,
        ..Default::default()
    })
    .unwrap();
    let mut worst_recip: f64 = 0.0;
    let mut worst_area: f64 = 0.0;
    for r in &fleet {
        let m = fit_both(&r.profile, &SmoothingConfig::default()).unwrap();
        let (v0, v1) = m.q_of_v.window;
        for k in 0..=400 {
            let v = v0 + (v1 - v0) * (0.05 + 0.9 * k as f64 / 400.0);
            let q = m.q_of_v.value(v);
            if m.v_of_q.contains(q) {
                let prod = m.q_of_v.derivative(v) * m.v_of_q.derivative(q);
                worst_recip = worst_recip.max((prod - 1.0).abs());
            }
        }
        let fv = extract_profile(&r.profile, &SmoothingConfig::default(), &FeatureConfig::default())
            .unwrap()
            .features;
        let areas: f64 = (1..=3).filter_map(|i| fv.get_named(&format!("IC AR {i}"))).sum();
        let q = r.profile.total_capacity();
        worst_area = worst_area.max((areas - q).abs() / q);
    }
    let el = t.elapsed();
    report(
        "curve reciprocity",
        worst_recip <= 0.02 && worst_area <= 0.005,
        &format!(
            "{} profiles, worst |IC·DV − 1| {worst_recip:.4}, worst area error {:.3} %",
            fleet.len(),
            100.0 * worst_area
        ),
        el,
    );
}

#[test]
fn end_to_end_synthetic_fleet() {
    let t = Instant::now();
    let fleet = generate_fleet(&FleetConfig::default()).unwrap();
    let (table, labels) = dataset(&fleet);

    let sd_cfg = RunConfig {
        task: Task::Sd,
        ..Default::default()
    };
    let sd_guard = Guard {
        inner: &labels,
        allowed: Task::Sd,
        violations: Mutex::new(0),
    };
    let sd = run_sweep(
        &table,
        &sd_guard,
        &sd_cfg,
        &[1, 3, 6],
        &RvrPredictor::from_config(&sd_cfg),
    )
    .unwrap();

    let m_cfg = RunConfig {
        task: Task::MSoh,
        ..Default::default()
    };
    let m_guard = Guard {
        inner: &labels,
        allowed: Task::MSoh,
        violations: Mutex::new(0),
    };
    let m = run_sweep(&table, &m_guard, &m_cfg, &[6], &RvrPredictor::from_config(&m_cfg)).unwrap();

    let (sd1, sd6, m6) = (&sd[0], &sd[2], &m[0]);
    let rows_ok = sd6.rows.len() + sd6.excluded.len() == 156 && m6.rows.len() + m6.excluded.len() == 156;
    let pass = rows_ok
        && sd6.pearson_r >= 0.8
        && m6.pearson_r >= 0.9
        && sd6.coverage >= 0.95
        && m6.coverage >= 0.95
        && sd6.mae < sd1.mae
        && sd6.n_rv >= 0.5 * sd1.n_rv
        && *sd_guard.violations.lock().unwrap() == 0
        && *m_guard.violations.lock().unwrap() == 0;
    let el = t.elapsed();
    report(
        "end-to-end synthetic fleet",
        pass && el.as_secs_f64() < 900.0,
        &format!(
            "SD: r {:.3}, coverage {:.3}, MAE {:.5} (1 feature) / {:.5} (3) / {:.5} (6); \
             M-SoH: r {:.3}, coverage {:.3}, MAE {:.5}; mean N_rv {:.1} -> {:.1}",
            sd6.pearson_r,
            sd6.coverage,
            sd1.mae,
            sd[1].mae,
            sd6.mae,
            m6.pearson_r,
            m6.coverage,
            m6.mae,
            sd1.n_rv,
            sd6.n_rv
        ),
        el,
    );
}

#[test]
fn task_independence() {
    let t = Instant::now();
    let fleet = generate_fleet(&FleetConfig {
        n_modules: 16,
        ..Default::default()
    })
    .unwrap();
    let (table, labels) = dataset(&fleet);
    let mut reads_ok = true;
    for task in [Task::Sd, Task::MSoh] {
        let cfg = RunConfig {
            task,
            inner_folds: 4,
            kernel_widths: vec![1.0, 2.0],
            ..Default::default()
        };
        let guard = Guard {
            inner: &labels,
            allowed: task,
            violations: Mutex::new(0),
        };
        let ok = run_sweep(&table, &guard, &cfg, &[2], &RvrPredictor::from_config(&cfg)).is_ok();
        reads_ok &= ok && *guard.violations.lock().unwrap() == 0;
    }
    let el = t.elapsed();
    report(
        "task independence",
        reads_ok,
        "SD and M-SoH runs each read only their own labels",
        el,
    );
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_modhealth"))
        .args(args)
        .env("RUST_LOG", "error")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn cli_determinism() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    std::fs::write(
        &config,
        "[simulate]\nn_modules = 16\n[run]\nn_features = 2\nsweep = [1, 2]\ninner_folds = 4\nkernel_widths = [1.0, 2.0]\n",
    )
    .unwrap();
    let c = config.to_str().unwrap();
    let mut all_ok = true;
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = out.to_str().unwrap();
        for stage in [
            vec!["simulate"],
            vec!["extract"],
            vec!["select", "--target", "sd", "--dump-scores"],
            vec!["train", "--target", "sd"],
            vec!["evaluate", "--target", "sd"],
        ] {
            let mut args = stage.clone();
            args.extend(["--config", c, "--out", o, "--seed", "42"]);
            all_ok &= run_cli(&args);
        }
        let model = out.join("model.json");
        all_ok &= run_cli(&[
            "evaluate",
            "--config",
            c,
            "--out",
            o,
            "--seed",
            "42",
            "--model",
            model.to_str().unwrap(),
        ]);
        snapshots.push(files(&out));
    }
    let identical = snapshots[0] == snapshots[1];
    let el = t.elapsed();
    report(
        "CLI determinism",
        all_ok && identical && !snapshots[0].is_empty(),
        &format!(
            "{} output files compared bytewise across two runs",
            snapshots[0].len()
        ),
        el,
    );
}
