//! Monte-Carlo coverage experiments over the two- and three-state presets.
//!
//! Each iteration `i` draws its own seed `derive_seed(master_seed, i)`, so the
//! result does not depend on how iterations are spread over threads. Records
//! are collected in iteration order before any averaging.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hmmcp_core::conformal::{candidate_count, ConformalConfig};
use hmmcp_core::exchangeability::{PermutationBudget, TerminalBlock};
use hmmcp_core::presets::{
    setup_three_state, setup_two_state, THREE_STATE_B_GRID, THREE_STATE_HORIZON, THREE_STATE_T_GRID, TWO_STATE_B_GRID,
    TWO_STATE_M_GRID, TWO_STATE_P_GRID, TWO_STATE_T_GRID,
};
use hmmcp_core::rng::{derive_seed, splitmix64};
use hmmcp_core::trial::{run_trial, TrialRecord};
use hmmcp_core::HmmParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_ITERATIONS: u64 = 500;
/// Budget used when the state space is larger than three.
pub const LARGE_STATE_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    TwoState {
        p: f64,
        b: f64,
    },
    ThreeState {
        b: f64,
        iid: bool,
    },
    Custom {
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
    },
}

impl Preset {
    pub fn params(&self) -> Result<HmmParams> {
        Ok(match self {
            Preset::TwoState { p, b } => setup_two_state(*p, *b)?,
            Preset::ThreeState { b, iid } => setup_three_state(*b, *iid)?,
            Preset::Custom { transition, emission } => HmmParams::new(transition, emission)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::TwoState { .. } => "two_state",
            Preset::ThreeState { iid: false, .. } => "three_state",
            Preset::ThreeState { iid: true, .. } => "three_state_iid",
            Preset::Custom { .. } => "custom",
        }
    }

    pub fn p(&self) -> Option<f64> {
        match self {
            Preset::TwoState { p, .. } => Some(*p),
            _ => None,
        }
    }

    pub fn b(&self) -> Option<f64> {
        match self {
            Preset::TwoState { b, .. } | Preset::ThreeState { b, .. } => Some(*b),
            Preset::Custom { .. } => None,
        }
    }

    /// True when the parameters are among the published grid values.
    pub fn in_reference_grid(&self) -> bool {
        let has = |grid: &[f64], v: f64| grid.iter().any(|&g| (g - v).abs() < 1e-12);
        match self {
            Preset::TwoState { p, b } => has(&TWO_STATE_P_GRID, *p) && has(&TWO_STATE_B_GRID, *b),
            Preset::ThreeState { b, .. } => has(&THREE_STATE_B_GRID, *b),
            Preset::Custom { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    #[serde(rename = "T")]
    pub calibration_len: usize,
    #[serde(rename = "m")]
    pub horizon: usize,
    pub alpha: f64,
    pub iterations: u64,
    pub master_seed: u64,
    /// `None` picks [`default_budget`] for the preset's state count.
    pub budget: Option<PermutationBudget>,
    #[serde(default)]
    pub terminal: TerminalBlock,
}

impl ExperimentConfig {
    pub fn new(preset: Preset, calibration_len: usize, horizon: usize) -> Self {
        Self {
            preset,
            calibration_len,
            horizon,
            alpha: DEFAULT_ALPHA,
            iterations: DEFAULT_ITERATIONS,
            master_seed: 0,
            budget: None,
            terminal: TerminalBlock::Fixed,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_iterations(mut self, iterations: u64) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalBlock) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn validate(&self) -> Result<HmmParams> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.calibration_len < 2 {
            return Err(Error::Config("calibration length T must be at least 2".into()));
        }
        let params = self.preset.params()?;
        self.conformal(params.n_states())?;
        Ok(params)
    }

    pub fn budget_for(&self, n_states: usize) -> PermutationBudget {
        self.budget.unwrap_or_else(|| default_budget(n_states))
    }

    fn conformal(&self, n_states: usize) -> Result<ConformalConfig> {
        Ok(ConformalConfig::new(self.alpha, self.horizon)?
            .with_budget(self.budget_for(n_states))
            .with_terminal(self.terminal))
    }

    /// Identifies a grid row; equal to the first eight CSV columns.
    pub fn key(&self) -> String {
        let row = ReportRow::from_config(self);
        row_key(&row)
    }
}

/// Full enumeration for up to three states, a fixed subsample otherwise.
pub fn default_budget(n_states: usize) -> PermutationBudget {
    if n_states <= 3 {
        PermutationBudget::Unlimited
    } else {
        PermutationBudget::Limited(LARGE_STATE_BUDGET)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub coverage: f64,
    pub scaled_set_size: f64,
    pub mean_blocks: f64,
    pub mean_perms: f64,
    pub records: Vec<TrialRecord>,
    /// Only filled when timing is requested; wall time is not reproducible.
    pub wall_ms: Option<u64>,
}

impl ExperimentReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            coverage: self.coverage,
            scaled_set_size: self.scaled_set_size,
            mean_blocks: self.mean_blocks,
            mean_perms: self.mean_perms,
            wall_ms: self.wall_ms,
            ..ReportRow::from_config(&self.config)
        }
    }
}

/// Runs every iteration of `config` on the current rayon pool.
pub fn run_coverage_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let params = config.validate()?;
    let n = params.n_states();
    let base = config.conformal(n)?;
    let records = (0..config.iterations)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(config.master_seed, i);
            let conformal = base.with_seed(splitmix64(seed));
            run_trial(&params, config.calibration_len, &conformal, seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(config.clone(), n, records))
}

fn summarize(config: ExperimentConfig, n_states: usize, records: Vec<TrialRecord>) -> ExperimentReport {
    let k = records.len() as f64;
    let candidates = candidate_count(n_states, config.horizon) as f64;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / k;
    ExperimentReport {
        coverage: mean(&|r| f64::from(u8::from(r.hit))),
        scaled_set_size: mean(&|r| r.set_size as f64) / candidates,
        mean_blocks: mean(&|r| r.blocks as f64),
        mean_perms: mean(&|r| r.permutations as f64),
        records,
        wall_ms: None,
        config,
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool for `None`.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// One line of the sweep CSV. Field names and order are the file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub preset: String,
    pub p: Option<f64>,
    pub b: Option<f64>,
    #[serde(rename = "T")]
    pub calibration_len: usize,
    #[serde(rename = "m")]
    pub horizon: usize,
    pub alpha: f64,
    pub iterations: u64,
    pub master_seed: u64,
    pub coverage: f64,
    pub scaled_set_size: f64,
    pub mean_blocks: f64,
    pub mean_perms: f64,
    pub wall_ms: Option<u64>,
}

pub const CSV_HEADER: &str =
    "preset,p,b,T,m,alpha,iterations,master_seed,coverage,scaled_set_size,mean_blocks,mean_perms,wall_ms";

impl ReportRow {
    fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            preset: config.preset.name().to_owned(),
            p: config.preset.p(),
            b: config.preset.b(),
            calibration_len: config.calibration_len,
            horizon: config.horizon,
            alpha: config.alpha,
            iterations: config.iterations,
            master_seed: config.master_seed,
            coverage: f64::NAN,
            scaled_set_size: f64::NAN,
            mean_blocks: f64::NAN,
            mean_perms: f64::NAN,
            wall_ms: None,
        }
    }

    pub fn key(&self) -> String {
        row_key(self)
    }
}

fn row_key(row: &ReportRow) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{}",
        row.preset,
        opt(row.p),
        opt(row.b),
        row.calibration_len,
        row.horizon,
        row.alpha,
        row.iterations,
        row.master_seed
    )
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub workers: Option<usize>,
    pub timing: bool,
}

/// Outcome of one grid entry. `resumed` rows were taken from a previous run.
#[derive(Debug)]
pub struct SweepRow {
    pub key: String,
    pub result: Result<ReportRow>,
    pub resumed: bool,
}

/// Runs each configuration in order and hands every finished row to `sink`.
///
/// Rows whose key is in `previous` are not recomputed. A failing
/// configuration or a failing `sink` call is recorded on that row and the
/// sweep moves on.
pub fn grid_sweep<S>(
    grid: &[ExperimentConfig],
    options: SweepOptions,
    previous: &HashMap<String, ReportRow>,
    mut sink: S,
) -> Result<Vec<SweepRow>>
where
    S: FnMut(&ReportRow) -> Result<()>,
{
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut out = Vec::with_capacity(grid.len());
    for config in grid {
        let key = config.key();
        let (computed, resumed) = match previous.get(&key) {
            Some(row) => (Ok(row.clone()), true),
            None => (run_row(config, options), false),
        };
        let result = computed.and_then(|row| sink(&row).map(|()| row));
        out.push(SweepRow { key, result, resumed });
    }
    Ok(out)
}

fn run_row(config: &ExperimentConfig, options: SweepOptions) -> Result<ReportRow> {
    let start = Instant::now();
    let mut report = with_workers(options.workers, || run_coverage_experiment(config))??;
    if options.timing {
        report.wall_ms = Some(start.elapsed().as_millis() as u64);
    }
    Ok(report.row())
}

/// Every `(p, b, T, m)` combination of the two-state grid.
pub fn two_state_grid(alpha: f64, iterations: u64, master_seed: u64) -> Vec<ExperimentConfig> {
    let mut grid = Vec::new();
    for p in TWO_STATE_P_GRID {
        for b in TWO_STATE_B_GRID {
            for t in TWO_STATE_T_GRID {
                for m in TWO_STATE_M_GRID {
                    grid.push(
                        ExperimentConfig::new(Preset::TwoState { p, b }, t, m)
                            .with_alpha(alpha)
                            .with_iterations(iterations)
                            .with_seed(master_seed),
                    );
                }
            }
        }
    }
    grid
}

/// Every `(b, T)` combination of the three-state grid, Markov and IID.
pub fn three_state_grid(alpha: f64, iterations: u64, master_seed: u64) -> Vec<ExperimentConfig> {
    let mut grid = Vec::new();
    for b in THREE_STATE_B_GRID {
        for t in THREE_STATE_T_GRID {
            for iid in [false, true] {
                grid.push(
                    ExperimentConfig::new(Preset::ThreeState { b, iid }, t, THREE_STATE_HORIZON)
                        .with_alpha(alpha)
                        .with_iterations(iterations)
                        .with_seed(master_seed),
                );
            }
        }
    }
    grid
}

/// Writes the header on creation and flushes after every row, so an
/// interrupted sweep leaves a readable prefix.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    path: PathBuf,
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(file), path)
    }
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W, label: impl Into<PathBuf>) -> Result<Self> {
        let path = label.into();
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(inner);
        writer
            .write_record(CSV_HEADER.split(','))
            .and_then(|()| writer.flush().map_err(Into::into))
            .map_err(|e| Error::csv(&path, e))?;
        Ok(Self { writer, path })
    }

    pub fn push(&mut self, row: &ReportRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| Error::csv(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn into_inner(self) -> Result<W> {
        let path = self.path;
        self.writer
            .into_inner()
            .map_err(|e| Error::io(path, io::Error::other(e.to_string())))
    }
}

/// Rows of a sweep CSV written earlier, for resuming.
pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_owned(),
            row: 1,
            message: format!("expected header {CSV_HEADER}"),
        });
    }
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(|e| Error::csv(path, e))
}

pub fn rows_to_json(rows: &[ReportRow]) -> Result<String> {
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    Ok(text)
}
