//! Command-line harness: dataset generation, single runs, benchmark grids
//! and metric reports.

pub mod bench;
pub mod config;
pub mod error;
pub mod report;
pub mod runner;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use smica::baselines::Nonlinearity;
use smica::data::read_signal_csv;
use smica::smica::DynamicsMode;

use crate::bench::BenchConfig;
use crate::config::{parse_dynamics, AlgoTag, MixingChoice, Overrides, RunConfig};
use crate::error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "smica", version, about = "Blind source separation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset: sources.csv, mixture.csv, model.json.
    Gen(GenArgs),
    /// Train one algorithm on one dataset.
    Run(RunArgs),
    /// Run an algorithm × scenario × seed grid.
    Bench(BenchArgs),
    /// Compare an outputs file against a truth file.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Benchmark scenario 1-4.
    #[arg(long)]
    pub scenario: Option<u8>,
    /// Generator spec, e.g. `sine,laplace`.
    #[arg(long)]
    pub sources: Option<String>,
    #[arg(long, value_enum)]
    pub mixing: Option<MixingChoice>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keep generated samples in time order.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_shuffle: Option<bool>,
    /// PCM16 mono WAV clips; a uniform-noise channel is appended.
    #[arg(long, value_delimiter = ',')]
    pub audio: Option<Vec<PathBuf>>,
    /// 8-bit grayscale images, one source each.
    #[arg(long, value_delimiter = ',')]
    pub images: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DataArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            scenario: self.scenario,
            sources: self.sources.clone(),
            mixing: self.mixing,
            samples: self.samples,
            no_shuffle: self.no_shuffle,
            audio: self.audio.clone(),
            images: self.images.clone(),
            seed: self.seed,
            ..Overrides::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file of settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Euler step of the neural dynamics.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambda: Option<Vec<f64>>,
    /// Read the --lambda values as 1/λ.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lambda_is_inverse: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = parse_dynamics)]
    pub dynamics: Option<DynamicsMode>,
    #[arg(long)]
    pub nonlinearity: Option<Nonlinearity>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub extended_infomax: Option<bool>,
    /// Reshuffle the sample order every epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shuffle_epochs: Option<bool>,
    /// Approximate number of points in the error curve; 0 disables it.
    #[arg(long)]
    pub curve_points: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, ov: Overrides) -> Overrides {
        Overrides {
            eta: self.eta,
            tau: self.tau,
            gamma: self.gamma,
            lambda: self.lambda.clone(),
            lambda_is_inverse: self.lambda_is_inverse,
            epochs: self.epochs,
            dynamics: self.dynamics,
            nonlinearity: self.nonlinearity,
            extended_infomax: self.extended_infomax,
            shuffle_epochs: self.shuffle_epochs,
            curve_points: self.curve_points,
            ..ov
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub algo: Option<AlgoTag>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Mixture CSV (channels as columns).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Source CSV used to score the outputs.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', value_enum)]
    pub algos: Option<Vec<AlgoTag>>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub scenarios: Vec<u8>,
    /// Number of seeds per cell, counted up from --seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub truth: PathBuf,
    /// Outputs CSV to score.
    #[arg(long)]
    pub input: PathBuf,
}

fn with_file(flags: Overrides, file: &Option<PathBuf>) -> CliResult<Overrides> {
    match file {
        Some(p) => Ok(flags.over(Overrides::from_file(p)?)),
        None => Ok(flags),
    }
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let ov = with_file(args.data.overrides(), &args.config)?;
    let spec = ov.dataset()?;
    if matches!(spec, config::DatasetSpec::Files { .. }) {
        return Err(CliError::Usage("gen needs a scenario, generator, audio or image dataset".into()));
    }
    let data = runner::load_dataset(&spec, ov.seed.unwrap_or(0))?;
    runner::write_dataset(&args.out, &data)
}

pub fn run_config(args: &RunArgs) -> CliResult<RunConfig> {
    let flags = Overrides { algo: args.algo, input: args.input.clone(), truth: args.truth.clone(), ..args.data.overrides() };
    RunConfig::resolve(with_file(args.train.apply(flags), &args.config)?)
}

/// Runs and writes the artifacts; returns the report's exit code.
pub fn cmd_run(args: &RunArgs, stdout: &mut impl Write) -> CliResult<i32> {
    let cfg = run_config(args)?;
    let outcome = runner::execute(&cfg);
    runner::write_run(&args.out, &outcome)?;
    let r = &outcome.report;
    match (&r.error, r.final_mse) {
        (Some(e), _) => writeln!(stdout, "{}: failed: {e}", cfg.algorithm)?,
        (None, Some(m)) => writeln!(stdout, "{}: final mse {m:.6e} ({:.2}s)", cfg.algorithm, r.wall_clock_seconds)?,
        (None, None) => writeln!(stdout, "{}: done ({:.2}s)", cfg.algorithm, r.wall_clock_seconds)?,
    }
    Ok(r.exit_code())
}

pub fn bench_config(args: &BenchArgs) -> CliResult<BenchConfig> {
    let shared = args.train.apply(Overrides { samples: args.samples, ..Overrides::default() });
    let shared = with_file(shared, &args.config)?;
    if args.seeds == 0 || args.scenarios.is_empty() {
        return Err(CliError::Usage("the grid is empty".into()));
    }
    Ok(BenchConfig {
        algos: args.algos.clone().unwrap_or_else(|| AlgoTag::BENCH.to_vec()),
        scenarios: args.scenarios.clone(),
        seeds: (args.seed..args.seed + args.seeds).collect(),
        shared,
    })
}

pub fn cmd_bench(args: &BenchArgs, stdout: &mut impl Write) -> CliResult<i32> {
    let cfg = bench_config(args)?;
    let cells = bench::run_grid(&cfg)?;
    bench::write_bench(&args.out, &cells)?;
    let failed = cells.iter().filter(|c| c.report.error.is_some()).count();
    writeln!(stdout, "{} cells, {failed} failed; results in {}", cells.len(), args.out.display())?;
    Ok(bench::exit_code(&cells))
}

pub fn cmd_metrics(args: &MetricsArgs, stdout: &mut impl Write) -> CliResult<()> {
    let (truth, _) = read_signal_csv(&args.truth)?;
    let (outputs, _) = read_signal_csv(&args.input)?;
    let cmp = report::compare(&truth, &outputs)?;
    writeln!(stdout, "{}", serde_json::to_string_pretty(&cmp)?)?;
    Ok(())
}

/// Parses `argv` and dispatches; returns the process exit code.
pub fn main_with<I, T>(argv: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|()| EXIT_OK),
        Command::Run(a) => cmd_run(a, stdout),
        Command::Bench(a) => cmd_bench(a, stdout),
        Command::Metrics(a) => cmd_metrics(a, stdout).map(|()| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
