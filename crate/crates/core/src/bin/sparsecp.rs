use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sparse_conformal::activations::{entmax, EntmaxConfig};
use sparse_conformal::conformal::{calibrate, predict_sets, CalibratedPredictor};
use sparse_conformal::harness::{
    emit_plot_data, load_dataset, parse_logits, run_experiment, ExperimentConfig, HarnessError,
    HarnessResult,
};
use sparse_conformal::metrics::{EvaluationRun, MetricsReport, SizeBins};
use sparse_conformal::scores::{RapsParams, ScoreKind};

#[derive(Parser)]
#[command(
    name = "sparsecp",
    version,
    about = "Conformal prediction with sparse activations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    Sparsemax,
    Entmax,
    #[value(name = "log_margin", alias = "log-margin")]
    LogMargin,
    #[value(name = "inv_prob", alias = "inv-prob")]
    InvProb,
    Raps,
}

#[derive(Subcommand)]
enum Command {
    /// Print γ-entmax(β·z) for each row of a logits CSV read from stdin.
    Transform {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Calibrate a predictor on a labeled logits CSV.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        score: Score,
        /// Required for `--score entmax`.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: f64,
        /// Seed of the RAPS randomization stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        lambda_reg: f64,
        #[arg(long, default_value_t = 5)]
        k_reg: usize,
        /// Use the randomized RAPS score.
        #[arg(long)]
        randomized: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a calibrated predictor to a labeled logits CSV and report metrics.
    Evaluate {
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full multi-split experiment from a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Directory for report.json and plotdata.csv; defaults to the
        /// config's `output_path`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    predictor: &'a CalibratedPredictor,
    metrics: MetricsReport,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> HarnessResult<()> {
    match command {
        Command::Transform { gamma, beta } => transform(gamma, beta),
        Command::Calibrate {
            input,
            score,
            gamma,
            alpha,
            seed,
            lambda_reg,
            k_reg,
            randomized,
            out,
        } => {
            let kind = match score {
                Score::Sparsemax => ScoreKind::Sparsemax,
                Score::Entmax => {
                    let g = gamma.ok_or_else(|| {
                        HarnessError::Config("--score entmax requires --gamma".into())
                    })?;
                    if g == 2.0 {
                        ScoreKind::Sparsemax
                    } else {
                        ScoreKind::entmax(g)?
                    }
                }
                Score::LogMargin => ScoreKind::LogMargin,
                Score::InvProb => ScoreKind::InvProb,
                Score::Raps => {
                    let mut p = RapsParams::new(lambda_reg, k_reg)?;
                    p.rng_seed = seed;
                    p.randomized = randomized;
                    ScoreKind::Raps(p)
                }
            };
            let data = load_dataset(&input)?;
            let pred = calibrate(&data, kind, alpha)?;
            write_json(&out, &pred)
        }
        Command::Evaluate {
            predictor,
            input,
            out,
        } => {
            let text = fs::read_to_string(&predictor).map_err(|e| HarnessError::Io {
                path: predictor.display().to_string(),
                source: e,
            })?;
            let mut pred: CalibratedPredictor = serde_json::from_str(&text)?;
            let data = load_dataset(&input)?;
            if pred.classes == 0 {
                pred = pred.with_classes(data.num_classes());
            }
            let sets = predict_sets(data.logits(), &pred)?;
            let run = EvaluationRun::new(sets, data.labels(), pred.alpha, pred.score_kind.tag())?;
            let metrics = MetricsReport::compute(&run, &SizeBins::default_for(data.num_classes()))?;
            write_json(
                &out,
                &EvaluationReport {
                    predictor: &pred,
                    metrics,
                },
            )
        }
        Command::Sweep { config, out_dir } => {
            let text = fs::read_to_string(&config).map_err(|e| HarnessError::Io {
                path: config.display().to_string(),
                source: e,
            })?;
            let cfg: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", config.display())))?;
            let dir = match (out_dir, &cfg.output_path) {
                (Some(d), _) => d,
                (None, Some(p)) => PathBuf::from(p),
                (None, None) => {
                    return Err(HarnessError::Config(
                        "no --out-dir given and config has no output_path".into(),
                    ))
                }
            };
            let report = run_experiment(&cfg)?;
            fs::create_dir_all(&dir).map_err(|e| HarnessError::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            write_json(&dir.join("report.json"), &report)?;
            emit_plot_data(&report, dir.join("plotdata.csv"))
        }
    }
}

fn transform(gamma: f64, beta: f64) -> HarnessResult<()> {
    let cfg = EntmaxConfig::new(gamma)?;
    let rows = parse_logits(io::stdin().lock())?;
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let io_err = |e| HarnessError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    if let Some(first) = rows.first() {
        let header: Vec<String> = (0..first.len()).map(|k| format!("p{k}")).collect();
        writeln!(w, "{},support_size", header.join(",")).map_err(io_err)?;
    }
    for z in &rows {
        let p = entmax(&z.scale(beta)?, &cfg)?;
        let cells: Vec<String> = p.probs.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{},{}", cells.join(","), p.support_size()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
