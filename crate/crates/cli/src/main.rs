//! `dsw`: simulate, weight, train, track, evaluate and benchmark
//! multi-stream tracking experiments from the command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 parse error, 3 validation
//! error, 4 numerical failure.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dsw_core::error::Error as CoreError;
use dsw_core::eval::{
    cross_validate, run_tracking, summarize, timing_benchmark, write_crmse_csv, write_timing_csv,
    BenchCondition, BenchConfig, CrmseRow, EvalConfig, EvalGroup, RunSummary, WeightPipeline,
};
use dsw_core::filter::{StreamWeights, WeightSource};
use dsw_core::io as dswio;
use dsw_core::learn::{standardize_features, train_sgd, SgdConfig, TrainedPredictor, TrainingRow};
use dsw_core::model::ModelConfig;
use dsw_core::odsw::{odsw_sequence, DirichletPrior, GaussianPriorParams, OdswPrior};
use dsw_core::sim::{simulate_sequence, DisturbanceEntry, DisturbanceKind, ScenarioSpec};

#[derive(Parser)]
#[command(
    name = "dsw",
    version,
    about = "Multi-stream tracking with per-step stream weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum PriorKind {
    Dirichlet,
    Gaussian,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence from a scenario file.
    Simulate {
        /// Scenario description (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output sequence (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed stored in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the weighted filter over a sequence file.
    Track {
        /// Input sequence (JSON Lines).
        #[arg(long = "in")]
        input: PathBuf,
        /// Model configuration (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Weight source: `fixed:<w1,w2,...>`, `file:<weights.jsonl>` or
        /// `predictor:<predictor.json>`.
        #[arg(long)]
        weights: String,
        /// Output belief trajectory (JSON Lines).
        #[arg(long)]
        out: PathBuf,
        /// Grace fraction excluded from the reported error.
        #[arg(long, default_value_t = 0.1)]
        grace: f64,
    },
    /// Estimate oracle stream weights for a fully observed sequence.
    Odsw {
        /// Input sequence with ground truth (JSON Lines).
        #[arg(long = "in")]
        input: PathBuf,
        /// Model configuration (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Prior imposed on the weights.
        #[arg(long, value_enum, default_value_t = PriorKind::Dirichlet)]
        prior: PriorKind,
        /// Dirichlet concentration (must exceed 1).
        #[arg(long, default_value_t = dsw_core::odsw::DEFAULT_ALPHA)]
        alpha: f64,
        /// Gaussian prior mean (two streams only).
        #[arg(long, default_value_t = 0.5)]
        mu: f64,
        /// Gaussian prior variance (two streams only).
        #[arg(long, default_value_t = 0.1)]
        sigma2: f64,
        /// Output weights (JSON Lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a logistic weight predictor on features and weight targets.
    Train {
        /// Combined training rows `{"z":[...],"lambda":[...]}` (JSON Lines).
        #[arg(long = "in", conflicts_with_all = ["sequence", "odsw"])]
        input: Option<PathBuf>,
        /// Sequence file providing the features (pair with --odsw).
        #[arg(long, requires = "odsw")]
        sequence: Option<PathBuf>,
        /// Weights file providing the targets (pair with --sequence).
        #[arg(long, requires = "sequence")]
        odsw: Option<PathBuf>,
        /// Output predictor (JSON).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-validated synthetic study: clean vs degraded conditions.
    Eval {
        /// Number of hold-out groups ("speakers").
        #[arg(long, default_value_t = 4)]
        groups: usize,
        /// Sequences per group.
        #[arg(long, default_value_t = 3)]
        sequences: usize,
        /// Steps per sequence.
        #[arg(long, default_value_t = 300)]
        steps: usize,
        /// SNR-like level applied to stream 1 over each degraded
        /// sequence's second half.
        #[arg(long, default_value_t = 0.0)]
        snr_db: f64,
        /// Process-noise factor of the generated scenarios.
        #[arg(long, default_value_t = 0.05)]
        sigma_v2: f64,
        /// Dirichlet concentration for oracle weights and training targets.
        #[arg(long, default_value_t = dsw_core::odsw::DEFAULT_ALPHA)]
        alpha: f64,
        /// Grace fraction excluded from the error metric.
        #[arg(long, default_value_t = 0.1)]
        grace: f64,
        /// Master seed; scenario (group g, index i) uses
        /// `seed + 1000*g + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving results.csv and summary.txt.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Wall-clock comparison against a standard EKF on stacked
    /// observations.
    Bench {
        /// State dimensions to sweep.
        #[arg(long, value_delimiter = ',', default_value = "5,100")]
        dx: Vec<usize>,
        /// Per-stream observation dimensions to sweep.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        dym: Vec<usize>,
        /// Stream counts to sweep.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        m: Vec<usize>,
        /// Timed repetitions per condition (plus one discarded warm-up).
        #[arg(long, default_value_t = 25)]
        runs: usize,
        /// Filter steps per repetition.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional CSV output; results always print to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Io(String),
    Parse(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Parse(format!("{}: {e}", path.display()))
    }

    fn message(&self) -> String {
        match self {
            CliError::Io(m) => format!("i/o error: {m}"),
            CliError::Parse(m) => format!("parse error: {m}"),
            CliError::Core(e) => e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Core(e) => match e.root() {
                CoreError::InvalidInput(_) => 2,
                CoreError::Validation(_) | CoreError::Unsupported(_) => 3,
                CoreError::Numerical(_) | CoreError::Training(_) => 4,
                CoreError::AtStep { .. } => unreachable!("root() unwraps step wrappers"),
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { spec, out, seed } => cmd_simulate(&spec, &out, seed),
        Command::Track {
            input,
            model,
            weights,
            out,
            grace,
        } => cmd_track(&input, &model, &weights, &out, grace),
        Command::Odsw {
            input,
            model,
            prior,
            alpha,
            mu,
            sigma2,
            out,
        } => cmd_odsw(&input, &model, prior, alpha, mu, sigma2, &out),
        Command::Train {
            input,
            sequence,
            odsw,
            out,
            lr,
            epochs,
            batch,
            seed,
        } => cmd_train(input, sequence, odsw, &out, lr, epochs, batch, seed),
        Command::Eval {
            groups,
            sequences,
            steps,
            snr_db,
            sigma_v2,
            alpha,
            grace,
            seed,
            out_dir,
            lr,
            epochs,
            batch,
        } => cmd_eval(EvalArgs {
            groups,
            sequences,
            steps,
            snr_db,
            sigma_v2,
            alpha,
            grace,
            seed,
            out_dir,
            lr,
            epochs,
            batch,
        }),
        Command::Bench {
            dx,
            dym,
            m,
            runs,
            steps,
            seed,
            out,
        } => cmd_bench(&dx, &dym, &m, runs, steps, seed, out.as_deref()),
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::parse(path, e))
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn cmd_simulate(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec: ScenarioSpec = load_json(spec_path)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let record = simulate_sequence(&spec)?;
    dswio::write_atomic(out, |w| dswio::write_sequence(w, &record))?;
    println!("wrote {} steps to {}", record.len(), out.display());
    Ok(())
}

fn parse_weight_source(arg: &str) -> Result<WeightSource, CliError> {
    if let Some(list) = arg.strip_prefix("fixed:") {
        let parsed: Result<Vec<f64>, _> = list.split(',').map(str::trim).map(str::parse).collect();
        let values = parsed.map_err(|e| CliError::Parse(format!("fixed weights '{list}': {e}")))?;
        Ok(WeightSource::Fixed(StreamWeights::new(values)?))
    } else if let Some(path) = arg.strip_prefix("file:") {
        let path = PathBuf::from(path);
        let weights = dswio::read_weights(open_reader(&path)?)?;
        Ok(WeightSource::PerStep(weights))
    } else if let Some(path) = arg.strip_prefix("predictor:") {
        let predictor: TrainedPredictor = load_json(&PathBuf::from(path))?;
        Ok(WeightSource::Predictor(predictor))
    } else {
        Err(CliError::Parse(format!(
            "weight source '{arg}' must start with fixed:, file: or predictor:"
        )))
    }
}

fn cmd_track(
    input: &Path,
    model_path: &Path,
    weights: &str,
    out: &Path,
    grace: f64,
) -> Result<(), CliError> {
    let config: ModelConfig = load_json(model_path)?;
    let model = config.build()?;
    let labels = model.stream_labels();
    let record = dswio::read_sequence(open_reader(input)?, &labels)?;
    let source = parse_weight_source(weights)?;
    let cfg = EvalConfig::new(grace)?;

    let outcome = run_tracking(&record, &model, &source, &cfg)?;
    dswio::write_atomic(out, |w| dswio::write_estimates(w, &outcome.estimates))?;
    match outcome.crmse_deg {
        Some(err) => println!("cRMSE: {err:.4} deg over {} steps", record.len()),
        None => println!("no ground truth present; skipped error metric"),
    }
    Ok(())
}

fn cmd_odsw(
    input: &Path,
    model_path: &Path,
    prior: PriorKind,
    alpha: f64,
    mu: f64,
    sigma2: f64,
    out: &Path,
) -> Result<(), CliError> {
    let config: ModelConfig = load_json(model_path)?;
    let model = config.build()?;
    let record = dswio::read_sequence(open_reader(input)?, &model.stream_labels())?;
    let prior = match prior {
        PriorKind::Dirichlet => OdswPrior::Dirichlet(DirichletPrior::new(alpha)?),
        PriorKind::Gaussian => OdswPrior::Gaussian(GaussianPriorParams::new(mu, sigma2)?),
    };
    let weights = odsw_sequence(&record.truth_states()?, &record.frames(), &model, &prior)?;
    dswio::write_atomic(out, |w| dswio::write_weights(w, &weights))?;
    println!(
        "wrote {} weight vectors to {}",
        weights.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrainRowLine {
    z: Vec<f64>,
    lambda: Vec<f64>,
}

fn read_training_rows(path: &Path) -> Result<Vec<TrainingRow>, CliError> {
    use std::io::BufRead;
    let mut rows = Vec::new();
    for (idx, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrainRowLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Parse(format!("{}: line {}: {e}", path.display(), idx + 1)))?;
        rows.push(TrainingRow {
            features: parsed.z,
            target: StreamWeights::new(parsed.lambda)?,
        });
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    input: Option<PathBuf>,
    sequence: Option<PathBuf>,
    odsw: Option<PathBuf>,
    out: &Path,
    lr: f64,
    epochs: usize,
    batch: usize,
    seed: u64,
) -> Result<(), CliError> {
    let rows = match (input, sequence, odsw) {
        (Some(path), _, _) => read_training_rows(&path)?,
        (None, Some(seq_path), Some(odsw_path)) => {
            let record = dswio::read_sequence_auto(open_reader(&seq_path)?)?;
            let weights = dswio::read_weights(open_reader(&odsw_path)?)?;
            if weights.len() != record.len() {
                return Err(CoreError::Validation(format!(
                    "{} weight vectors for {} sequence steps",
                    weights.len(),
                    record.len()
                ))
                .into());
            }
            record
                .steps
                .iter()
                .zip(weights)
                .map(|(step, target)| TrainingRow {
                    features: step.features.clone(),
                    target,
                })
                .collect()
        }
        _ => {
            return Err(CliError::Parse(
                "provide either --in, or --sequence together with --odsw".into(),
            ))
        }
    };

    let cfg = SgdConfig {
        learning_rate: lr,
        epochs,
        batch_size: batch,
        seed,
    };
    let report = train_sgd(&standardize_features(&rows)?, &cfg)?;
    let json = serde_json::to_string(&report.predictor)
        .map_err(|e| CliError::Parse(format!("predictor serialization: {e}")))?;
    dswio::write_atomic(out, |w| {
        writeln!(w, "{json}").map_err(|e| CoreError::Validation(e.to_string()))
    })?;
    println!(
        "trained on {} rows; final loss {:.6}; wrote {}",
        rows.len(),
        report.epoch_loss.last().unwrap(),
        out.display()
    );
    Ok(())
}

struct EvalArgs {
    groups: usize,
    sequences: usize,
    steps: usize,
    snr_db: f64,
    sigma_v2: f64,
    alpha: f64,
    grace: f64,
    seed: u64,
    out_dir: PathBuf,
    lr: f64,
    epochs: usize,
    batch: usize,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;

    let base_config = {
        let mut config = ModelConfig::cv_rvm_two_stream(0.1);
        config.sigma_v2 = args.sigma_v2;
        config
    };
    let model = base_config.build()?;
    let eval_cfg = EvalConfig::new(args.grace)?;
    let dirichlet = DirichletPrior::new(args.alpha)?;

    // One record set per condition; scenario (g, i) uses seed
    // `seed + 1000*g + i` so groups never share sequences.
    let mut conditions: Vec<(String, Vec<EvalGroup>)> = Vec::new();
    for degraded in [false, true] {
        let label = if degraded { "degraded" } else { "clean" };
        let mut groups = Vec::with_capacity(args.groups);
        for g in 0..args.groups {
            let mut records = Vec::with_capacity(args.sequences);
            for i in 0..args.sequences {
                let mut spec = ScenarioSpec {
                    length: args.steps,
                    seed: args.seed + 1000 * g as u64 + i as u64,
                    model: base_config.clone(),
                    disturbances: vec![],
                };
                if degraded {
                    spec.disturbances.push(DisturbanceEntry {
                        stream: 0,
                        start: args.steps / 2 + 1,
                        end: args.steps,
                        kind: DisturbanceKind::NoiseInflation,
                        magnitude: args.snr_db,
                    });
                }
                records.push(simulate_sequence(&spec)?);
            }
            groups.push(EvalGroup {
                id: format!("speaker-{g}"),
                records,
            });
        }
        conditions.push((label.to_string(), groups));
    }

    let sgd = SgdConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
    };
    let pipelines: Vec<(&str, WeightPipeline)> = vec![
        (
            "ekf-fixed",
            WeightPipeline::Fixed(StreamWeights::uniform(2)),
        ),
        (
            "odsw-dirichlet",
            WeightPipeline::OdswReplay(OdswPrior::Dirichlet(dirichlet)),
        ),
        (
            "odsw-gaussian",
            WeightPipeline::OdswReplay(OdswPrior::Gaussian(GaussianPriorParams::default())),
        ),
        (
            "dsw-predictor",
            WeightPipeline::Trained {
                prior: OdswPrior::Dirichlet(dirichlet),
                sgd,
            },
        ),
    ];

    let mut csv_rows: Vec<CrmseRow> = Vec::new();
    let mut table_rows: Vec<(String, Vec<RunSummary>)> = Vec::new();
    for (method, pipeline) in &pipelines {
        let mut summaries = Vec::new();
        for (condition, groups) in &conditions {
            let report = cross_validate(groups, &model, pipeline, &eval_cfg)?;
            for fold in &report.folds {
                for (i, err) in fold.per_sequence_crmse.iter().enumerate() {
                    csv_rows.push(CrmseRow {
                        condition: format!("{condition}/{method}"),
                        sequence_id: format!("{}-{i}", fold.held_out),
                        crmse_deg: *err,
                    });
                }
            }
            summaries.push(summarize(
                &report
                    .folds
                    .iter()
                    .flat_map(|f| f.per_sequence_crmse.iter().cloned())
                    .collect::<Vec<_>>(),
                &format!("{condition}/{method}"),
            )?);
        }
        table_rows.push((method.to_string(), summaries));
    }

    let csv_path = args.out_dir.join("results.csv");
    dswio::write_atomic(&csv_path, |w| write_crmse_csv(w, &csv_rows))?;

    let condition_names: Vec<&str> = conditions.iter().map(|(c, _)| c.as_str()).collect();
    let table = dsw_core::eval::format_summary_table(&condition_names, &table_rows);
    let summary_path = args.out_dir.join("summary.txt");
    dswio::write_atomic(&summary_path, |w| {
        w.write_all(table.as_bytes())
            .map_err(|e| CoreError::Validation(e.to_string()))
    })?;

    print!("{table}");
    println!(
        "wrote {} and {}",
        csv_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn cmd_bench(
    dx: &[usize],
    dym: &[usize],
    m: &[usize],
    runs: usize,
    steps: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut conditions = Vec::new();
    for &state_dim in dx {
        for &obs_dim in dym {
            for &streams in m {
                conditions.push(BenchCondition {
                    state_dim,
                    obs_dim,
                    streams,
                });
            }
        }
    }
    let results = timing_benchmark(&conditions, &BenchConfig { runs, steps, seed })?;

    println!("dx,dym,m,ratio_mean,ratio_std,ratio_median");
    for r in &results {
        println!(
            "{},{},{},{:.4},{:.4},{:.4}",
            r.state_dim, r.obs_dim, r.streams, r.ratio_mean, r.ratio_std, r.ratio_median
        );
    }
    if let Some(path) = out {
        dswio::write_atomic(path, |w| write_timing_csv(w, &results))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
