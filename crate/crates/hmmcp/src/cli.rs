//! Command-line front end.
//!
//! Every parameter can come from a flag or from a `--config` file; flags win,
//! then the file, then the built-in default. Exit codes: 0 success, 1 usage,
//! 2 data or IO error, 3 internal error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmmcp_core::backtest::{BacktestConfig, WindowMode};
use hmmcp_core::conformal::{predict_hmm, ConformalConfig};
use hmmcp_core::exchangeability::{PermutationBudget, TerminalBlock};
use hmmcp_core::hmm::simulate;

use crate::config::{layered, ConfigFile};
use crate::error::Error;
use crate::experiments::{
    default_budget, grid_sweep, read_rows, rows_to_json, three_state_grid, two_state_grid, CsvSink, ExperimentConfig,
    Preset, ReportRow, SweepOptions, DEFAULT_ALPHA, DEFAULT_ITERATIONS,
};
use crate::ingest::{load_series, run_backtest, write_backtest_csv, BacktestSummary, SeriesFormat, StateRule};
use crate::io::{augmented_json, read_augmented, read_observations, write_augmented, PredictionReport};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hmmcp",
    version,
    about = "Conformal prediction sets for hidden Markov models"
)]
pub struct Cli {
    /// key = value file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for experiments (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a preset HMM and write its state,observation pairs.
    Simulate(SimulateArgs),
    /// Prediction set for the hidden states behind test observations.
    Predict(PredictArgs),
    /// Monte-Carlo coverage experiments over preset grids.
    Experiment(ExperimentArgs),
    /// Rolling one-step-ahead backtest on a real-valued series.
    Backtest(BacktestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelPreset {
    TwoState,
    ThreeState,
    ThreeStateIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridPreset {
    /// Full two-state grid (135 rows).
    Fig1,
    /// Full three-state grid, Markov and IID (30 rows).
    Fig2,
    TwoState,
    ThreeState,
    ThreeStateIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Terminal {
    Fixed,
    Movable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Window {
    Rolling,
    Expanding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Column,
    Ohlc,
}

/// `unlimited` or a positive permutation count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget(pub PermutationBudget);

impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("unlimited") {
            return Ok(Budget(PermutationBudget::Unlimited));
        }
        match s.parse::<u64>() {
            Ok(n) if n > 0 => Ok(Budget(PermutationBudget::Limited(n))),
            _ => Err(format!("expected `unlimited` or a positive count, got {s:?}")),
        }
    }
}

/// Comma-separated cut points.
#[derive(Debug, Clone, PartialEq)]
pub struct Cuts(pub Vec<f64>);

impl FromStr for Cuts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| format!("bad cut point {c:?}")))
            .collect::<Result<_, _>>()
            .map(Cuts)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<ModelPreset>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// state,observation pairs.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// One observation index per row; their count is the horizon.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// State count (default: largest state index + 1).
    #[arg(long)]
    pub states: Option<usize>,
    /// Observation count (default: largest observation index + 1).
    #[arg(long)]
    pub obs: Option<usize>,
    #[arg(long)]
    pub budget: Option<Budget>,
    #[arg(long, value_enum)]
    pub terminal: Option<Terminal>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub preset: Option<GridPreset>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long = "T")]
    pub calibration_len: Option<usize>,
    #[arg(long = "m")]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub budget: Option<Budget>,
    #[arg(long, value_enum)]
    pub terminal: Option<Terminal>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Keep rows already present in --output instead of recomputing them.
    #[arg(long)]
    pub resume: bool,
    /// Fill the wall_ms column (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
    /// Value column for column input.
    #[arg(long)]
    pub column: Option<String>,
    /// Close column for OHLC input (default "close").
    #[arg(long)]
    pub close_column: Option<String>,
    /// Number of standard-deviation bands.
    #[arg(long)]
    pub states: Option<usize>,
    /// Explicit z-score cut points, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub cuts: Option<Cuts>,
    /// Gain/loss states instead of bands.
    #[arg(long)]
    pub sign: bool,
    #[arg(long = "T")]
    pub calibration_len: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub window: Option<Window>,
    #[arg(long)]
    pub budget: Option<Budget>,
    #[arg(long, value_enum)]
    pub terminal: Option<Terminal>,
    /// Summary JSON (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Per-step records in --format (csv by default).
    #[arg(long)]
    pub steps: Option<PathBuf>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: format!("error: {message}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        use hmmcp_core::Error as Core;
        let code = match &e {
            Error::Config(_) | Error::EmptyGrid => EXIT_USAGE,
            Error::Core(Core::InvalidParameter(_) | Core::CandidateExplosion { .. } | Core::PathExplosion { .. }) => {
                EXIT_USAGE
            }
            Error::Json(_) => EXIT_INTERNAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: format!("error: {e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

const COMMON_KEYS: [&str; 3] = ["format", "workers", "seed"];

struct Ctx {
    file: Option<ConfigFile>,
    format: Option<Format>,
    workers: Option<usize>,
    seed: u64,
}

impl Ctx {
    fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        Ok(layered(flag, self.file.as_ref(), key)?)
    }

    fn choice<T: ValueEnum>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.as_ref().and_then(|f| f.raw(key)) {
            None => Ok(None),
            Some(raw) => T::from_str(raw, true)
                .map(Some)
                .map_err(|_| CliError::usage(format!("config: invalid value {raw:?} for {key}"))),
        }
    }

    fn switch(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.value(None::<bool>, key)?.unwrap_or(false))
    }

    fn required<T: FromStr>(&self, flag: Option<T>, key: &str, why: &str) -> CliResult<T> {
        self.value(flag, key)?
            .ok_or_else(|| CliError::usage(format!("missing --{key} ({why})")))
    }

    fn path(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.file.as_ref().and_then(|f| f.raw(key)).map(PathBuf::from))
    }

    fn budget(&self, flag: Option<Budget>) -> CliResult<Option<PermutationBudget>> {
        Ok(self.value(flag, "budget")?.map(|b| b.0))
    }

    fn terminal(&self, flag: Option<Terminal>) -> CliResult<TerminalBlock> {
        Ok(match self.choice(flag, "terminal")? {
            Some(Terminal::Movable) => TerminalBlock::Movable,
            _ => TerminalBlock::Fixed,
        })
    }

    fn alpha(&self, flag: Option<f64>) -> CliResult<f64> {
        let alpha = self.value(flag, "alpha")?.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::usage(format!(
                "--alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
        Ok(alpha)
    }

    fn check_keys(&self, keys: &[&str]) -> CliResult {
        if let Some(file) = &self.file {
            let all: Vec<&str> = COMMON_KEYS.iter().chain(keys).copied().collect();
            file.check_known(&all)?;
        }
        Ok(())
    }
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I) -> CliResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            return Err(CliError {
                code: EXIT_USAGE,
                message: e.render().to_string().trim_end().to_owned(),
            })
        }
    };
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let mut ctx = Ctx {
        file,
        format: None,
        workers: None,
        seed: 0,
    };
    ctx.format = ctx.choice(cli.format, "format")?;
    ctx.workers = ctx.value(cli.workers, "workers")?;
    if ctx.workers == Some(0) {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    ctx.seed = ctx.value(cli.seed, "seed")?.unwrap_or(0);
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Predict(a) => cmd_predict(&ctx, a),
        Command::Experiment(a) => cmd_experiment(&ctx, a),
        Command::Backtest(a) => cmd_backtest(&ctx, a),
    }
}

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    let label = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_owned);
    let mut out = open_output(path)?;
    out.write_all(bytes)
        .and_then(|()| out.flush())
        .map_err(|e| Error::io(label, e))?;
    Ok(())
}

fn model_preset(ctx: &Ctx, preset: ModelPreset, p: Option<f64>, b: Option<f64>) -> CliResult<Preset> {
    let preset = match preset {
        ModelPreset::TwoState => Preset::TwoState {
            p: ctx.required(p, "p", "required by the two-state preset")?,
            b: ctx.required(b, "b", "required by the two-state preset")?,
        },
        ModelPreset::ThreeState | ModelPreset::ThreeStateIid => Preset::ThreeState {
            b: ctx.required(b, "b", "required by the three-state presets")?,
            iid: preset == ModelPreset::ThreeStateIid,
        },
    };
    let in_range = |v: Option<f64>| v.is_none_or(|v| (0.0..=1.0).contains(&v));
    if !in_range(preset.p()) || !in_range(preset.b()) {
        return Err(CliError::usage("--p and --b must lie in [0, 1]"));
    }
    Ok(preset)
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> CliResult {
    ctx.check_keys(&["preset", "p", "b", "length", "output"])?;
    let preset = ctx
        .choice(a.preset, "preset")?
        .ok_or_else(|| CliError::usage("missing --preset (two-state, three-state or three-state-iid)"))?;
    let preset = model_preset(ctx, preset, a.p, a.b)?;
    let length = ctx.required(a.length, "length", "number of pairs to simulate")?;
    if length == 0 {
        return Err(CliError::usage("--length must be at least 1"));
    }
    let output = ctx.path(a.output, "output");
    let params = preset.params()?;
    let seq = simulate(&params, length, ctx.seed).map_err(Error::from)?;
    let bytes = match ctx.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut buf = Vec::new();
            write_augmented(&seq, &mut buf).map_err(|e| Error::io("<buffer>", e))?;
            buf
        }
        Format::Json => augmented_json(&seq)?.into_bytes(),
    };
    emit(output.as_deref(), &bytes)
}

fn cmd_predict(ctx: &Ctx, a: PredictArgs) -> CliResult {
    ctx.check_keys(&[
        "calibration",
        "observations",
        "alpha",
        "states",
        "obs",
        "budget",
        "terminal",
        "output",
    ])?;
    let calibration = ctx
        .path(a.calibration, "calibration")
        .ok_or_else(|| CliError::usage("missing --calibration (state,observation CSV)"))?;
    let observations = ctx
        .path(a.observations, "observations")
        .ok_or_else(|| CliError::usage("missing --observations (one observation per row)"))?;
    let alpha = ctx.alpha(a.alpha)?;
    let budget = ctx.budget(a.budget)?;
    let terminal = ctx.terminal(a.terminal)?;
    let states = ctx.value(a.states, "states")?;
    let obs = ctx.value(a.obs, "obs")?;
    let output = ctx.path(a.output, "output");

    let calib = read_augmented(&calibration)?;
    let test = read_observations(&observations)?;
    let n_states = states.unwrap_or_else(|| calib.pairs().iter().map(|p| p.state).max().unwrap_or(0) + 1);
    let n_obs = obs.unwrap_or_else(|| {
        let seen = calib.pairs().iter().map(|p| p.obs).chain(test.iter().copied());
        seen.max().unwrap_or(0) + 1
    });
    let config = ConformalConfig::new(alpha, test.len())
        .map_err(Error::from)?
        .with_budget(budget.unwrap_or_else(|| default_budget(n_states)))
        .with_terminal(terminal)
        .with_seed(ctx.seed);
    let set = predict_hmm(&calib, &test, n_states, n_obs, &config).map_err(Error::from)?;
    let report = PredictionReport::new(&set, calib.len(), n_obs);
    let bytes = match ctx.format.unwrap_or(Format::Json) {
        Format::Json => report.to_json()?.into_bytes(),
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
    };
    emit(output.as_deref(), &bytes)
}

fn experiment_grid(ctx: &Ctx, a: &ExperimentArgs) -> CliResult<Vec<ExperimentConfig>> {
    let preset = ctx
        .choice(a.preset, "preset")?
        .ok_or_else(|| CliError::usage("missing --preset (fig1, fig2, two-state, three-state or three-state-iid)"))?;
    let alpha = ctx.alpha(a.alpha)?;
    let iterations = ctx.value(a.iterations, "iterations")?.unwrap_or(DEFAULT_ITERATIONS);
    if iterations == 0 {
        return Err(CliError::usage("--iterations must be at least 1"));
    }
    let grid_wide = matches!(preset, GridPreset::Fig1 | GridPreset::Fig2);
    if grid_wide && (a.p.is_some() || a.b.is_some() || a.calibration_len.is_some() || a.horizon.is_some()) {
        return Err(CliError::usage(
            "--p, --b, --T and --m select a single preset; fig1 and fig2 run a whole grid",
        ));
    }
    let mut grid = match preset {
        GridPreset::Fig1 => two_state_grid(alpha, iterations, ctx.seed),
        GridPreset::Fig2 => three_state_grid(alpha, iterations, ctx.seed),
        single => {
            let model = match single {
                GridPreset::TwoState => ModelPreset::TwoState,
                GridPreset::ThreeState => ModelPreset::ThreeState,
                _ => ModelPreset::ThreeStateIid,
            };
            let preset = model_preset(ctx, model, a.p, a.b)?;
            let t = ctx.required(a.calibration_len, "T", "calibration length")?;
            let m = ctx.required(a.horizon, "m", "prediction horizon")?;
            vec![ExperimentConfig::new(preset, t, m)
                .with_alpha(alpha)
                .with_iterations(iterations)
                .with_seed(ctx.seed)]
        }
    };
    let budget = ctx.budget(a.budget)?;
    let terminal = ctx.terminal(a.terminal)?;
    for config in &mut grid {
        config.budget = budget;
        config.terminal = terminal;
        config.validate().map_err(CliError::from)?;
    }
    Ok(grid)
}

fn cmd_experiment(ctx: &Ctx, a: ExperimentArgs) -> CliResult {
    ctx.check_keys(&[
        "preset",
        "p",
        "b",
        "T",
        "m",
        "alpha",
        "iterations",
        "budget",
        "terminal",
        "output",
        "resume",
        "timing",
    ])?;
    let grid = experiment_grid(ctx, &a)?;
    let output = ctx.path(a.output.clone(), "output");
    let resume = ctx.switch(a.resume, "resume")?;
    let options = SweepOptions {
        workers: ctx.workers,
        timing: ctx.switch(a.timing, "timing")?,
    };
    let format = ctx.format.unwrap_or(Format::Csv);
    let mut previous = HashMap::new();
    if resume {
        let Some(path) = output.as_deref() else {
            return Err(CliError::usage("--resume needs --output"));
        };
        if format == Format::Json {
            return Err(CliError::usage("--resume works with CSV output only"));
        }
        if path.exists() {
            previous = read_rows(path)?.into_iter().map(|r| (r.key(), r)).collect();
        }
    }

    let rows = match format {
        Format::Csv => {
            let out = open_output(output.as_deref())?;
            let label = output.clone().unwrap_or_else(|| "<stdout>".into());
            let mut sink = CsvSink::new(out, label)?;
            grid_sweep(&grid, options, &previous, |row| sink.push(row))?
        }
        Format::Json => {
            let rows = grid_sweep(&grid, options, &previous, |_| Ok(()))?;
            let done: Vec<ReportRow> = rows.iter().filter_map(|r| r.result.as_ref().ok().cloned()).collect();
            emit(output.as_deref(), rows_to_json(&done)?.as_bytes())?;
            rows
        }
    };
    let failed: Vec<_> = rows.iter().filter(|r| r.result.is_err()).collect();
    for row in &failed {
        if let Err(e) = &row.result {
            eprintln!("error: row {}: {e}", row.key);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_DATA,
            message: format!("error: {} of {} rows failed", failed.len(), rows.len()),
        })
    }
}

fn cmd_backtest(ctx: &Ctx, a: BacktestArgs) -> CliResult {
    ctx.check_keys(&[
        "input",
        "input-format",
        "column",
        "close-column",
        "states",
        "cuts",
        "sign",
        "T",
        "alpha",
        "window",
        "budget",
        "terminal",
        "output",
        "steps",
    ])?;
    let input = ctx
        .path(a.input, "input")
        .ok_or_else(|| CliError::usage("missing --input (CSV series)"))?;
    let format = match ctx
        .choice(a.input_format, "input-format")?
        .unwrap_or(InputFormat::Column)
    {
        InputFormat::Column => SeriesFormat::CsvColumn {
            column: ctx.value(a.column, "column")?,
        },
        InputFormat::Ohlc => SeriesFormat::CsvOhlc {
            close: ctx
                .value(a.close_column, "close-column")?
                .unwrap_or_else(|| "close".into()),
        },
    };
    let states = ctx.value(a.states, "states")?;
    let cuts = ctx.value(a.cuts, "cuts")?;
    let sign = ctx.switch(a.sign, "sign")?;
    let rule = match (states, cuts, sign) {
        (Some(n), None, false) if n >= 1 => StateRule::SigmaBands(n),
        (None, Some(c), false) => StateRule::Cuts(c.0),
        (None, None, true) => StateRule::Sign,
        (Some(0), None, false) => return Err(CliError::usage("--states must be at least 1")),
        (None, None, false) => {
            return Err(CliError::usage(
                "choose the states with one of --states, --cuts or --sign",
            ))
        }
        _ => return Err(CliError::usage("--states, --cuts and --sign are mutually exclusive")),
    };
    if let StateRule::Cuts(c) = &rule {
        hmmcp_core::discretize::QuantizationScheme::new(c.clone()).map_err(Error::from)?;
    }
    let calibration_len = ctx.required(a.calibration_len, "T", "calibration window length")?;
    let mut config = BacktestConfig::new(calibration_len, ctx.alpha(a.alpha)?);
    config.window = match ctx.choice(a.window, "window")?.unwrap_or(Window::Rolling) {
        Window::Rolling => WindowMode::Rolling,
        Window::Expanding => WindowMode::Expanding,
    };
    config.budget = ctx.budget(a.budget)?.unwrap_or_else(|| default_budget(rule.n_states()));
    config.terminal = ctx.terminal(a.terminal)?;
    config.seed = ctx.seed;
    let output = ctx.path(a.output, "output");
    let steps = ctx.path(a.steps, "steps");

    let series = load_series(&input, &format)?;
    let report = run_backtest(&series, &rule, &config)?;
    if let Some(path) = steps.as_deref() {
        let bytes = match ctx.format.unwrap_or(Format::Csv) {
            Format::Csv => {
                let mut buf = Vec::new();
                write_backtest_csv(&report, &mut buf)?;
                buf
            }
            Format::Json => {
                let mut text = serde_json::to_string_pretty(&report.records).map_err(Error::from)?;
                text.push('\n');
                text.into_bytes()
            }
        };
        emit(Some(path), &bytes)?;
    }
    let summary = BacktestSummary::new(&report, series.source.clone());
    let mut text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    text.push('\n');
    emit(output.as_deref(), text.as_bytes())
}
