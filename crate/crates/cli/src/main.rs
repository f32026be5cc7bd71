//! `energy-ood`: score logits, calibrate and apply detectors, evaluate,
//! train on the synthetic benchmark, and fit GDA heads.
//!
//! Every run writes a JSON manifest next to its primary output (override
//! with `--manifest`). `energy-ood replay MANIFEST` re-runs it.
//!
//! Exit codes: 0 success, 2 usage/parse/I-O errors, 3 numerical failure,
//! 1 anything else.

mod commands;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use energy_ood::bench::TableFormat;
use energy_ood::detector::DetectorScore;
use energy_ood::scores::ScoreKind;
use energy_ood::Error;

use manifest::{RunManifest, RunRecord};

#[derive(Parser, Debug)]
#[command(
    name = "energy-ood",
    version,
    about = "Energy-based out-of-distribution detection"
)]
struct Cli {
    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a logit file, one `row,score` line per logit row.
    Score(ScoreArgs),
    /// Dump a checkpoint's logits for the rows of a table.
    Logits(LogitsArgs),
    /// Pick the threshold that keeps the target TPR on in-distribution scores.
    Calibrate(CalibrateArgs),
    /// Reject or classify each logit row with a calibrated detector.
    Filter(FilterArgs),
    /// FPR at the target TPR, AUROC and AUPR for two score files.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic dataset (train.csv, test.csv, manifest.json).
    Generate(GenerateArgs),
    /// Train a classifier (`pretrain`) or energy fine-tune one (`finetune`).
    Train(TrainArgs),
    /// Negative-energy detection metrics over a list of temperatures.
    SweepTemperature(SweepArgs),
    /// Gaussian discriminant head: `fit` on labeled features, `score` rows.
    #[command(subcommand)]
    Gda(GdaCommand),
    /// Re-run the command recorded in a run manifest.
    Replay { manifest: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ScoreArg {
    Energy,
    NegEnergy,
    Msp,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::Energy => ScoreKind::Energy,
            ScoreArg::NegEnergy => ScoreKind::NegEnergy,
            ScoreArg::Msp => ScoreKind::Msp,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DetectorArg {
    NegEnergy,
    Msp,
    NegEnergyGda,
    Mahalanobis,
}

impl From<DetectorArg> for DetectorScore {
    fn from(s: DetectorArg) -> Self {
        match s {
            DetectorArg::NegEnergy => DetectorScore::NegEnergy,
            DetectorArg::Msp => DetectorScore::Msp,
            DetectorArg::NegEnergyGda => DetectorScore::NegEnergyGda,
            DetectorArg::Mahalanobis => DetectorScore::Mahalanobis,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FormatArg {
    Csv,
    Raw64,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Raw64 => TableFormat::Raw64,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SplitArg {
    In,
    Out,
    All,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    temp: f64,
    #[arg(long, value_enum, default_value_t = ScoreArg::NegEnergy)]
    score: ScoreArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LogitsArgs {
    /// MLP checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Table of inputs (`split,label,v0,...`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// In-distribution `row,score` file.
    #[arg(long)]
    in_scores: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    tpr: f64,
    /// Score kind recorded in the detector file.
    #[arg(long, value_enum, default_value_t = DetectorArg::NegEnergy)]
    score_kind: DetectorArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    logits: PathBuf,
    /// Detector JSON from `calibrate`.
    #[arg(long)]
    detector: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    temp: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// In-distribution `row,score` file.
    #[arg(long = "in")]
    in_scores: PathBuf,
    /// Outlier `row,score` file.
    #[arg(long = "out")]
    out_scores: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    tpr: f64,
    /// Report JSON path.
    #[arg(long)]
    json: PathBuf,
    /// Also report AUPR with outliers as the positive class.
    #[arg(long)]
    both_orientations: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Benchmark spec JSON; missing fields take the defaults.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Pretrain,
    Finetune,
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false, args = ["bench", "data"])]
struct DataSource {
    /// Generate the data from this benchmark spec JSON.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Read a dataset directory written by `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(value_enum)]
    stage: Stage,
    #[command(flatten)]
    source: DataSource,
    /// Training config JSON, overlaid on the stage defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization and shuffling (overrides the config's).
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer widths for `pretrain`.
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    hidden: Vec<usize>,
    /// Pretrained checkpoint to start `finetune` from.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Set the fine-tuning margins from the starting model's energies.
    #[arg(long)]
    auto_margins: bool,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-step training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: DataSource,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,100,1000")]
    temps: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    tpr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeatureSource {
    /// Table of rows (`split,label,v0,...`).
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Map rows through this MLP checkpoint's penultimate layer first.
    #[arg(long)]
    mlp: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum GdaCommand {
    /// Fit class means, shared covariance and priors on the `in` rows.
    Fit {
        #[command(flatten)]
        source: FeatureSource,
        /// One class index per `in` row; defaults to the table's label column.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = energy_ood::gda::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write `row,split,energy_u,mahalanobis` for every table row.
    Score {
        #[command(flatten)]
        source: FeatureSource,
        /// GDA model JSON from `gda fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::InvalidInput(_)
        | Error::IndexOutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Json(_) => 2,
    }
}

fn report(e: &dyn std::error::Error) {
    eprintln!("error: {e}");
    let mut src = e.source();
    while let Some(s) = src {
        eprintln!("  caused by: {s}");
        src = s.source();
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ENERGY_OOD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("ENERGY_OOD_THREADS must be a non-negative integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot start thread pool: {e}"))
}

enum Failure {
    Lib(Error),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn execute(args: Vec<String>, replaying: bool) -> Result<(), Failure> {
    let argv = std::iter::once("energy-ood".to_string()).chain(args.iter().cloned());
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Command::Replay { manifest } = &cli.command {
        if replaying {
            return Err(Failure::Other(
                "a manifest cannot replay another replay".into(),
            ));
        }
        let m = RunManifest::load(manifest)?;
        return execute(m.args, true);
    }

    let start = Instant::now();
    let (name, record) = commands::run(&cli.command)?;
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(&record.outputs[0]));
    RunManifest::new(name, args, record, start.elapsed().as_secs_f64()).save(&path)?;
    Ok(())
}

fn main() -> ExitCode {
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match execute(std::env::args().skip(1).collect(), false) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Keeps the manifest plumbing out of the per-command code.
pub(crate) fn record(
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
) -> RunRecord {
    RunRecord {
        config,
        seed,
        inputs,
        outputs,
    }
}
