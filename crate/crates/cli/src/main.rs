mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modhealth_core::featsel::{score_matrices, SelectionResult};
use modhealth_core::features::extract_profile;
use modhealth_core::io;
use modhealth_core::metrics::Task;
use modhealth_core::pipeline::{
    global_ranking, run_sweep, train_estimator, EvaluationReport, FeatureTable, LabelTable, RvrPredictor,
    SweepRow, TrainedEstimator,
};
use modhealth_core::simulate::generate_fleet;
use modhealth_core::{Error, Result};
use serde::Serialize;

use config::Config;

#[derive(Parser)]
#[command(
    name = "modhealth",
    version,
    about = "Module state of health and cell-to-cell variation from charging curves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// Estimation target: sd, m_soh, range or cv.
    #[arg(long)]
    target: Option<Task>,
    /// Feature table CSV [default: <out>/features.csv].
    #[arg(long)]
    features: Option<PathBuf>,
    /// Label CSV [default: <out>/labels.csv].
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled fleet of parallel-cell modules.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Build IC/DV curves and the feature table from Q-V profiles.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Profile index [default: <out>/profiles.csv].
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Rank features by relevance, redundancy and complementarity.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write pairwise score matrices under <out>/scores.
        #[arg(long)]
        dump_scores: bool,
    },
    /// Train one model on every row.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        n_features: Option<usize>,
    },
    /// Nested cross-validation, or scoring of a trained model with --model.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        n_features: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric()
        || matches!(
            e,
            Error::Domain(_) | Error::EmptyProfile(_) | Error::ChargeComplete | Error::State(_)
        )
    {
        3
    } else {
        2
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn load_data(out: &Path, data: &DataArgs) -> Result<(FeatureTable, LabelTable)> {
    let features = data
        .features
        .clone()
        .unwrap_or_else(|| out.join(io::FEATURES_FILE));
    let labels = data.labels.clone().unwrap_or_else(|| out.join(io::LABELS_FILE));
    let table = io::read_feature_table(&features)?;
    let labels = io::read_labels(&labels)?.aligned_to(table.keys())?;
    Ok((table, labels))
}

fn load_config(common: &Common, data: Option<&DataArgs>) -> Result<Config> {
    let mut config = Config::load(common.config.as_deref(), common.seed)?;
    if let Some(task) = data.and_then(|d| d.target) {
        config.run.task = task;
    }
    Ok(config)
}

fn simulate(common: &Common) -> Result<()> {
    let config = load_config(common, None)?;
    let fleet = generate_fleet(&config.simulate)?;
    io::write_fleet(&common.out, &fleet)?;
    log::info!("wrote {} profiles to {}", fleet.len(), common.out.display());
    Ok(())
}

fn extract(common: &Common, profiles: Option<&Path>) -> Result<()> {
    let config = load_config(common, None)?;
    let index = profiles
        .map(Path::to_path_buf)
        .unwrap_or_else(|| common.out.join(io::PROFILE_INDEX));
    let mut vectors = Vec::new();
    for p in io::read_profiles(&index)? {
        let ex = extract_profile(&p, &config.extract.smoothing, &config.extract.features)?;
        let stem = io::charge_stem(&p.module_id, p.c_rate);
        io::write_curve(&common.out.join(format!("curves/{stem}_ic.csv")), &ex.ic)?;
        io::write_curve(&common.out.join(format!("curves/{stem}_dv.csv")), &ex.dv)?;
        vectors.push(ex.features);
    }
    let table = FeatureTable::from_vectors(&vectors);
    io::write_feature_table(&common.out.join(io::FEATURES_FILE), &table)?;
    log::info!("{} rows, {} features", table.n_rows(), table.names().len());
    Ok(())
}

#[derive(Serialize)]
struct SelectOutput {
    task: Task,
    #[serde(flatten)]
    result: SelectionResult,
}

fn select(common: &Common, data: &DataArgs, threshold: Option<f64>, dump: bool) -> Result<()> {
    let mut config = load_config(common, Some(data))?;
    if let Some(t) = threshold {
        config.run.selection.threshold = t;
        config.run.selection.validate()?;
    }
    let (table, labels) = load_data(&common.out, data)?;
    let result = global_ranking(&table, &labels, &config.run)?;
    if dump {
        let rows: Vec<usize> = (0..table.n_rows()).collect();
        let names = table.usable_columns(&rows, config.run.min_feature_coverage);
        let (kept, matrix) = table.complete_matrix(&rows, &names)?;
        let target: Vec<f64> = kept
            .iter()
            .map(|&r| labels.labels()[r].get(config.run.task))
            .collect();
        let scores = score_matrices(&matrix, &target, config.run.selection)?;
        io::write_score_matrices(&common.out.join("scores"), &scores)?;
    }
    write_json(
        &common.out.join("selection.json"),
        &SelectOutput {
            task: config.run.task,
            result,
        },
    )
}

fn train(common: &Common, data: &DataArgs, n_features: Option<usize>) -> Result<()> {
    let mut config = load_config(common, Some(data))?;
    if let Some(n) = n_features {
        config.run.n_features = n;
        config.run.validate()?;
    }
    let (table, labels) = load_data(&common.out, data)?;
    let est = train_estimator(
        &table,
        &labels,
        &config.run,
        &RvrPredictor::from_config(&config.run),
    )?;
    log::info!(
        "trained on {:?}: {} relevance vectors",
        est.features,
        est.model.n_relevance_vectors()
    );
    let mut text = est.to_json()?;
    text.push('\n');
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("model.json"), text)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluateOutput {
    report: EvaluationReport,
    sweep: Vec<SweepRow>,
    /// Selection on all rows; shown for reference, not used for evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    global_ranking: Option<Vec<String>>,
}

fn evaluate(common: &Common, data: &DataArgs, n_features: Option<usize>, model: Option<&Path>) -> Result<()> {
    let mut config = load_config(common, Some(data))?;
    if let Some(n) = n_features {
        config.run.n_features = n;
        config.run.validate()?;
    }
    let (table, labels) = load_data(&common.out, data)?;
    let output = match model {
        Some(path) => {
            let est = TrainedEstimator::from_json(&std::fs::read_to_string(path)?)?;
            if data.target.is_some_and(|t| t != est.task) {
                return Err(Error::Config(format!("model was trained for {}", est.task)));
            }
            let report = est.evaluate(&table, &labels)?;
            EvaluateOutput {
                sweep: vec![SweepRow::from(&report)],
                report,
                global_ranking: None,
            }
        }
        None => {
            let mut counts = config.run.sweep.clone();
            if !counts.contains(&config.run.n_features) {
                counts.push(config.run.n_features);
            }
            counts.sort_unstable();
            let predictor = RvrPredictor::from_config(&config.run);
            let reports = run_sweep(&table, &labels, &config.run, &counts, &predictor)?;
            let sweep = reports.iter().map(SweepRow::from).collect();
            let report = reports
                .into_iter()
                .find(|r| r.n_features == config.run.n_features)
                .expect("requested count is part of the sweep");
            EvaluateOutput {
                report,
                sweep,
                global_ranking: Some(global_ranking(&table, &labels, &config.run)?.selected_names()),
            }
        }
    };
    let r = &output.report;
    log::info!(
        "{} with {} features: MAE {:.5}, coverage {:.3}, r {:.3}",
        r.task,
        r.n_features,
        r.mae,
        r.coverage,
        r.pearson_r
    );
    io::write_sweep(&common.out.join("mae_vs_nfeatures.csv"), &output.sweep)?;
    io::write_predictions(&common.out.join("pred_vs_truth.csv"), &output.report)?;
    write_json(&common.out.join("report.json"), &output)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::Extract { common, profiles } => extract(common, profiles.as_deref()),
        Command::Select {
            common,
            data,
            threshold,
            dump_scores,
        } => select(common, data, *threshold, *dump_scores),
        Command::Train {
            common,
            data,
            n_features,
        } => train(common, data, *n_features),
        Command::Evaluate {
            common,
            data,
            n_features,
            model,
        } => evaluate(common, data, *n_features, model.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
