//! Acceptance suite. Prints one PASS/FAIL line per criterion; INFO lines are
//! not gating. The exit status is nonzero on a FAIL only when
//! `HMMCP_ACCEPTANCE_STRICT` is set, so a plain workspace test run still
//! reaches the other test targets.
//!
//! Set `HMMCP_DELHI_CSV` (and optionally `HMMCP_DELHI_COLUMN`) to a load
//! series to run the informational real-data check.

use std::collections::HashMap;
use std::hint::black_box;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hmmcp::experiments::{
    grid_sweep, run_coverage_experiment, with_workers, CsvSink, ExperimentConfig, Preset, SweepOptions,
};
use hmmcp::hmmcp_core::backtest::{backtest, BacktestConfig};
use hmmcp::hmmcp_core::conformal::{classical_predict, emission_score, window_score, ConformalConfig, RankRule};
use hmmcp::hmmcp_core::exchangeability::{
    apply_permutation, arrangement_count, block_arrangements, check_partial_exchangeability, partition_blocks,
    PermutationBudget, TerminalBlock,
};
use hmmcp::hmmcp_core::hmm::{brute_force_posterior, filter_posteriors, simulate};
use hmmcp::hmmcp_core::presets::setup_two_state;
use hmmcp::hmmcp_core::rng::{derive_seed, rng_from_seed};
use hmmcp::hmmcp_core::trial::{simulate_trial, true_candidate_analysis};
use hmmcp::hmmcp_core::{AugmentedSequence, HmmParams, Pair};
use hmmcp::ingest::{load_series, run_backtest, write_backtest_csv, SeriesFormat, StateRule, TimeSeries};
use rand::seq::SliceRandom;
use rand::Rng;

const SEED: u64 = 42;
const ALPHA: f64 = 0.2;
const ITERATIONS: u64 = 500;
/// 0.99 quantile of chi-square with 9 degrees of freedom.
const CHI2_9_P01: f64 = 21.666;

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn random_params(rng: &mut impl Rng, n: usize, m: usize) -> HmmParams {
    let mut rows = |r: usize, c: usize| -> Vec<Vec<f64>> {
        (0..r)
            .map(|_| {
                let row: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|v| v / s).collect()
            })
            .collect()
    };
    let p = rows(n, n);
    let b = rows(n, m);
    HmmParams::new(&p, &b).expect("normalized rows")
}

fn filter_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(SEED);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        let params = random_params(&mut rng, n, m);
        let len = rng.random_range(1..=6);
        let obs: Vec<usize> = (0..len).map(|_| rng.random_range(0..m)).collect();
        let from = rng.random_range(0..n);
        let fast = filter_posteriors(&params, from, &obs).unwrap();
        let slow = brute_force_posterior(&params, from, &obs).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let took = start.elapsed();
    Outcome {
        id: "c1",
        title: "filter oracle equivalence",
        pass: worst <= 1e-10 && took < Duration::from_secs(10),
        detail: format!("200 models, max |diff| {worst:.2e} <= 1e-10, {} < 10 s", secs(took)),
    }
}

fn block_machinery() -> Outcome {
    let start = Instant::now();
    let digits = |s: &str| -> Vec<usize> { s.bytes().map(|b| (b - b'0') as usize).collect() };
    let states = digits("7521781663513421");
    let example = AugmentedSequence::from_parts(&states, &vec![0; states.len()]).unwrap();
    let part = partition_blocks(&example);
    let as_states = |pairs: &[Pair]| -> Vec<usize> { pairs.iter().map(|p| p.state).collect() };
    let blocks: Vec<Vec<usize>> = part.blocks().map(as_states).collect();
    let example_ok = as_states(part.prefix()) == digits("752")
        && blocks == vec![digits("178"), digits("16635"), digits("1342"), digits("1")];

    let mut rng = rng_from_seed(derive_seed(SEED, 2));
    let mut failures = 0usize;
    for _ in 0..1000 {
        let len = rng.random_range(1..=80);
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let pairs: Vec<Pair> = (0..len)
            .map(|_| Pair::new(rng.random_range(0..n), rng.random_range(0..m)))
            .collect();
        let seq = AugmentedSequence::new(pairs).unwrap();
        let part = partition_blocks(&seq);
        let rebuilt: Vec<Pair> = part
            .prefix()
            .iter()
            .copied()
            .chain(part.blocks().flatten().copied())
            .collect();
        if rebuilt != seq.pairs() {
            failures += 1;
            continue;
        }
        // a full shuffle of the complete blocks, then one engine arrangement
        let d = part.block_count();
        let mut shuffle: Vec<usize> = (0..d - 1).collect();
        shuffle.shuffle(&mut rng);
        shuffle.push(d - 1);
        let engine = block_arrangements(
            &part,
            rng.random_range(1..=4),
            TerminalBlock::Fixed,
            PermutationBudget::Limited(8),
            rng.random(),
        )
        .unwrap();
        let picked = &engine.perms[rng.random_range(0..engine.len())];
        for perm in [&shuffle, picked] {
            let permuted = apply_permutation(&part, perm).unwrap();
            if !check_partial_exchangeability(&seq, &permuted) {
                failures += 1;
            }
        }
    }
    let took = start.elapsed();
    Outcome {
        id: "c2",
        title: "block machinery",
        pass: example_ok && failures == 0 && took < Duration::from_secs(10),
        detail: format!(
            "example partition {}, 1000 random sequences with {failures} failures, {} < 10 s",
            if example_ok { "exact" } else { "WRONG" },
            secs(took)
        ),
    }
}

fn rank_chi_square(terminal: TerminalBlock, trials: u64) -> f64 {
    let params = setup_two_state(0.7, 0.75).unwrap();
    let config = ConformalConfig::new(ALPHA, 1).unwrap().with_terminal(terminal);
    let mut bins = [0u64; 10];
    let mut rng = rng_from_seed(derive_seed(SEED, 3));
    for i in 0..trials {
        let analysis = true_candidate_analysis(&params, 60, &config, derive_seed(SEED, i)).unwrap();
        let d = &analysis.distribution;
        let v: f64 = rng.random();
        let u = (d.count_below() as f64 + v * d.count_tied() as f64) / d.total as f64;
        bins[((u * 10.0) as usize).min(9)] += 1;
    }
    let expected = trials as f64 / 10.0;
    bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum()
}

fn rank_uniformity(info: &mut Vec<String>) -> Outcome {
    let trials = 2000;
    let start = Instant::now();
    let chi = rank_chi_square(TerminalBlock::Fixed, trials);
    let took = start.elapsed();
    let movable = rank_chi_square(TerminalBlock::Movable, trials);
    info.push(format!(
        "c3  movable terminal block: chi-square {movable:.2} ({} at 0.01)",
        if movable <= CHI2_9_P01 {
            "not rejected"
        } else {
            "rejected"
        }
    ));
    Outcome {
        id: "c3",
        title: "rank uniformity",
        pass: chi <= CHI2_9_P01 && took < Duration::from_secs(120),
        detail: format!(
            "{trials} trials, 10 bins, chi-square {chi:.2} <= {CHI2_9_P01}, {} < 120 s",
            secs(took)
        ),
    }
}

fn coverage_run(preset: Preset, t: usize, m: usize, terminal: TerminalBlock) -> (f64, f64, Duration) {
    let config = ExperimentConfig::new(preset, t, m)
        .with_alpha(ALPHA)
        .with_iterations(ITERATIONS)
        .with_seed(SEED)
        .with_terminal(terminal);
    let start = Instant::now();
    let report = run_coverage_experiment(&config).expect("experiment runs");
    (report.coverage, report.scaled_set_size, start.elapsed())
}

fn coverage_two_state() -> Outcome {
    let (cov, size, took) = coverage_run(Preset::TwoState { p: 0.9, b: 0.9 }, 200, 2, TerminalBlock::Fixed);
    Outcome {
        id: "c4",
        title: "coverage band, two-state",
        pass: within(cov, 0.75, 0.88) && took < Duration::from_secs(600),
        detail: format!(
            "coverage {cov:.3} in [0.75, 0.88] (size {size:.3}), {} < 600 s",
            secs(took)
        ),
    }
}

fn uninformative() -> Outcome {
    let (cov, size, took) = coverage_run(Preset::TwoState { p: 0.5, b: 0.5 }, 200, 3, TerminalBlock::Fixed);
    Outcome {
        id: "c5",
        title: "uninformative IID case",
        pass: within(size, 0.74, 0.86) && within(cov, 0.75, 0.88),
        detail: format!(
            "size {size:.3} in [0.74, 0.86], coverage {cov:.3} in [0.75, 0.88], {}",
            secs(took)
        ),
    }
}

fn markov_advantage() -> Outcome {
    let (cov, size, took) = coverage_run(Preset::TwoState { p: 0.9, b: 0.5 }, 200, 3, TerminalBlock::Fixed);
    Outcome {
        id: "c6",
        title: "Markov advantage",
        pass: within(size, 0.30, 0.50) && cov >= 0.75,
        detail: format!(
            "size {size:.3} in [0.30, 0.50], coverage {cov:.3} >= 0.75, {}",
            secs(took)
        ),
    }
}

fn three_state(info: &mut Vec<String>) -> Outcome {
    let preset = Preset::ThreeState { b: 0.9, iid: false };
    let (cov, size, took) = coverage_run(preset.clone(), 180, 3, TerminalBlock::Fixed);
    let (mcov, msize, _) = coverage_run(preset, 180, 3, TerminalBlock::Movable);
    info.push(format!(
        "c7  movable terminal block: coverage {mcov:.3}, size {msize:.3}"
    ));
    Outcome {
        id: "c7",
        title: "three-state preset",
        pass: within(cov, 0.75, 0.87) && size <= 0.25 && took < Duration::from_secs(1200),
        detail: format!(
            "coverage {cov:.3} in [0.75, 0.87], size {size:.3} <= 0.25, {} < 1200 s",
            secs(took)
        ),
    }
}

fn classical_coverage(rule: RankRule) -> f64 {
    let params = setup_two_state(0.5, 0.75).unwrap();
    let mut hits = 0u64;
    for i in 0..ITERATIONS {
        let data = simulate_trial(&params, 100, 1, derive_seed(SEED, i)).unwrap();
        let score = emission_score(data.calibration.pairs(), 2, 2).unwrap();
        let set = classical_predict(data.calibration.pairs(), data.test_obs[0], 2, ALPHA, score, rule).unwrap();
        hits += u64::from(set.contains(&data.truth[0]));
    }
    hits as f64 / ITERATIONS as f64
}

fn classical(info: &mut Vec<String>) -> Outcome {
    let cov = classical_coverage(RankRule::TiesIncluded);
    let counted = classical_coverage(RankRule::TiesCounted);
    info.push(format!(
        "c8  ties counted against the test point: coverage {counted:.3}"
    ));
    Outcome {
        id: "c8",
        title: "classical baseline validity",
        pass: cov >= 0.76,
        detail: format!("coverage {cov:.3} >= 0.76"),
    }
}

fn known_chain_states(len: usize) -> Vec<usize> {
    let transition = [vec![0.8, 0.1, 0.1], vec![0.2, 0.6, 0.2], vec![0.15, 0.15, 0.7]];
    let emission = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let params = HmmParams::new(&transition, &emission).unwrap();
    simulate(&params, len, derive_seed(SEED, 9)).unwrap().states()
}

/// Mean of `1/|Π|` over the true extended sequences of a rolling backtest.
fn mean_inverse_perms(states: &[usize], big_t: usize) -> f64 {
    let lagged: Vec<Pair> = states.windows(2).map(|w| Pair::new(w[1], w[0])).collect();
    let steps = big_t + 1..states.len();
    let count = steps.len() as f64;
    steps
        .map(|t| {
            let seq = AugmentedSequence::new(lagged[t - big_t - 1..t].to_vec()).unwrap();
            1.0 / arrangement_count(&partition_blocks(&seq), 1, TerminalBlock::Fixed) as f64
        })
        .sum::<f64>()
        / count
}

fn synthetic_backtest(info: &mut Vec<String>) -> Outcome {
    let big_t = 100;
    let states = known_chain_states(big_t + 1 + 1000);
    let start = Instant::now();
    let report = backtest(&states, 3, &BacktestConfig::new(big_t, ALPHA)).unwrap();
    let took = start.elapsed();
    let slack = mean_inverse_perms(&states, big_t);
    let mut movable = BacktestConfig::new(big_t, ALPHA);
    movable.terminal = TerminalBlock::Movable;
    let alt = backtest(&states, 3, &movable).unwrap();
    info.push(format!(
        "c9  movable terminal block: coverage {:.3}, size {:.3}",
        alt.coverage, alt.scaled_set_size
    ));
    let (lo, hi) = (1.0 - ALPHA - 0.05, 1.0 - ALPHA + slack + 0.05);

    if let Some(path) = std::env::var_os("HMMCP_DELHI_CSV") {
        let column = std::env::var("HMMCP_DELHI_COLUMN").ok();
        let line = load_series(&PathBuf::from(path), &SeriesFormat::CsvColumn { column })
            .and_then(|series| run_backtest(&series, &StateRule::SigmaBands(5), &BacktestConfig::new(300, ALPHA)))
            .map(|r| {
                format!(
                    "c9  Delhi load, 5 states, T=300: coverage {:.3} ({} 0.81 +- 0.07), size {:.3}, {} steps",
                    r.coverage,
                    if (r.coverage - 0.81).abs() <= 0.07 {
                        "within"
                    } else {
                        "outside"
                    },
                    r.scaled_set_size,
                    r.records.len()
                )
            })
            .unwrap_or_else(|e| format!("c9  Delhi load check skipped: {e}"));
        info.push(line);
    } else {
        info.push("c9  Delhi load check skipped: HMMCP_DELHI_CSV not set".into());
    }

    Outcome {
        id: "c9",
        title: "synthetic lagged-state backtest",
        pass: within(report.coverage, lo, hi),
        detail: format!(
            "{} steps, coverage {:.3} in [{lo:.3}, {hi:.3}] (size {:.3}), {}",
            report.records.len(),
            report.coverage,
            report.scaled_set_size,
            secs(took)
        ),
    }
}

fn sweep_bytes(workers: Option<usize>) -> Vec<u8> {
    let grid: Vec<ExperimentConfig> = [(0.9, 0.75, 60, 2), (0.5, 0.9, 80, 1), (0.7, 0.6, 40, 3)]
        .into_iter()
        .map(|(p, b, t, m)| {
            ExperimentConfig::new(Preset::TwoState { p, b }, t, m)
                .with_alpha(ALPHA)
                .with_iterations(40)
                .with_seed(SEED)
        })
        .chain([ExperimentConfig::new(Preset::ThreeState { b: 0.6, iid: false }, 60, 2)
            .with_iterations(20)
            .with_seed(SEED)])
        .collect();
    let mut sink = CsvSink::new(Vec::new(), "memory").unwrap();
    let options = SweepOptions { workers, timing: false };
    let rows = grid_sweep(&grid, options, &HashMap::new(), |row| sink.push(row)).unwrap();
    assert!(rows.iter().all(|r| r.result.is_ok()));
    sink.into_inner().unwrap()
}

fn backtest_bytes(workers: Option<usize>) -> Vec<u8> {
    let states = known_chain_states(260);
    let series = TimeSeries::new(states.iter().map(|&s| s as f64 + 0.5).collect(), "synthetic").unwrap();
    let report = with_workers(workers, || {
        run_backtest(
            &series,
            &StateRule::Cuts(vec![1.0, 2.0]),
            &BacktestConfig::new(120, ALPHA),
        )
    })
    .unwrap()
    .unwrap();
    let mut out = Vec::new();
    write_backtest_csv(&report, &mut out).unwrap();
    out
}

fn determinism() -> Outcome {
    let sweep = [None, Some(1), Some(4)].map(sweep_bytes);
    let tests = [None, Some(1), Some(4)].map(backtest_bytes);
    let same_sweep = sweep.iter().all(|s| s == &sweep[0]);
    let same_tests = tests.iter().all(|s| s == &tests[0]);
    Outcome {
        id: "c10",
        title: "determinism",
        pass: same_sweep && same_tests,
        detail: format!(
            "experiment CSV ({} bytes) {}, backtest CSV ({} bytes) {} across default, 1 and 4 workers",
            sweep[0].len(),
            if same_sweep { "identical" } else { "DIFFERS" },
            tests[0].len(),
            if same_tests { "identical" } else { "DIFFERS" }
        ),
    }
}

/// A sequence with exactly `blocks` complete blocks of length `block_len`
/// anchored on `(0, 0)`.
fn fixed_shape_sequence(rng: &mut impl Rng, n: usize, blocks: usize, block_len: usize) -> AugmentedSequence {
    let mut pairs: Vec<Pair> = (0..3).map(|_| filler(rng, n)).collect();
    for _ in 0..blocks {
        pairs.push(Pair::new(0, 0));
        pairs.extend((1..block_len).map(|_| filler(rng, n)));
    }
    pairs.push(Pair::new(0, 0));
    AugmentedSequence::new(pairs).unwrap()
}

fn filler(rng: &mut impl Rng, n: usize) -> Pair {
    loop {
        let p = Pair::new(rng.random_range(0..n), rng.random_range(0..2));
        if p != Pair::new(0, 0) {
            return p;
        }
    }
}

/// Seconds to score every arrangement of one candidate.
fn candidate_time(n: usize, horizon: usize) -> (f64, usize) {
    let mut rng = rng_from_seed(derive_seed(SEED, n as u64));
    let params = random_params(&mut rng, n, 2);
    let seq = fixed_shape_sequence(&mut rng, n, 12, 10);
    let part = partition_blocks(&seq);
    let perms = block_arrangements(&part, horizon, TerminalBlock::Fixed, PermutationBudget::Unlimited, 0).unwrap();
    let mut samples: Vec<f64> = (0..15)
        .map(|_| {
            let start = Instant::now();
            let mut acc = 0.0;
            for perm in &perms.perms {
                let window = part.tail_window(perm, horizon + 1).unwrap();
                acc += window_score(&params, black_box(&window));
            }
            black_box(acc);
            start.elapsed().as_secs_f64()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    (samples[samples.len() / 2], perms.len())
}

fn complexity() -> Outcome {
    let horizon = 3;
    let ns = [2usize, 4, 8];
    let measured: Vec<(f64, usize)> = ns.iter().map(|&n| candidate_time(n, horizon)).collect();
    let same_perms = measured.iter().all(|&(_, k)| k == measured[0].1);
    // weighted least squares for t = a + c n^2 with weights 1/t^2
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&n, &(t, _)) in ns.iter().zip(&measured) {
        let (x, w) = ((n * n) as f64, 1.0 / (t * t));
        sw += w;
        sx += w * x;
        sy += w * t;
        sxx += w * x * x;
        sxy += w * x * t;
    }
    let c = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    let a = (sy - c * sx) / sw;
    let worst = ns
        .iter()
        .zip(&measured)
        .map(|(&n, &(t, _))| {
            let fit = a + c * (n * n) as f64;
            if fit <= 0.0 {
                f64::INFINITY
            } else {
                (t / fit).max(fit / t)
            }
        })
        .fold(1.0f64, f64::max);
    let points: Vec<String> = ns
        .iter()
        .zip(&measured)
        .map(|(n, (t, _))| format!("n={n}: {:.3} ms", t * 1e3))
        .collect();
    Outcome {
        id: "c11",
        title: "complexity scaling",
        pass: same_perms && worst <= 3.0,
        detail: format!(
            "|perms|={} m={horizon}, {}; fit a={:.3} ms c={:.4} ms, worst factor {worst:.2} <= 3",
            measured[0].1,
            points.join(", "),
            a * 1e3,
            c * 1e3
        ),
    }
}

fn main() -> ExitCode {
    let mut info = Vec::new();
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!(
            "{} {:<4} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail
        );
        outcomes.push((o.id, o.pass));
    };
    report(filter_oracle());
    report(block_machinery());
    report(rank_uniformity(&mut info));
    report(coverage_two_state());
    report(uninformative());
    report(markov_advantage());
    report(three_state(&mut info));
    report(classical(&mut info));
    report(synthetic_backtest(&mut info));
    report(determinism());
    report(complexity());
    for line in &info {
        println!("INFO {line}");
    }
    let failed: Vec<&str> = outcomes.iter().filter(|(_, p)| !p).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; FAILED: {}", failed.join(", "))
        }
    );
    if failed.is_empty() || std::env::var_os("HMMCP_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
