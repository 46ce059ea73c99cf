//! Strategy comparisons: run trials, rank them against a random-search
//! baseline, and write `results.csv` and `summary.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bo::{evaluate_record, initial_design, mix_seed, run_trials_parallel, Problem, TrialSettings, TrialTrace};
use crate::composite::Strategy;
use crate::error::{Error, Result};
use crate::problems::elastic::generate_elastic_data;
use crate::problems::{ElasticNetTuning, ExternalObjective, IllustrativeObjective};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProblemSelector {
    Illustrative,
    Elastic,
    External(PathBuf),
}

impl FromStr for ProblemSelector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "illustrative" => Ok(Self::Illustrative),
            "elastic" => Ok(Self::Elastic),
            _ => match s.strip_prefix("external:") {
                Some(path) if !path.is_empty() => Ok(Self::External(PathBuf::from(path))),
                _ => Err(format!(
                    "unknown problem `{s}` (expected illustrative, elastic or external:<descriptor.json>)"
                )),
            },
        }
    }
}

impl std::fmt::Display for ProblemSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Illustrative => f.write_str("illustrative"),
            Self::Elastic => f.write_str("elastic"),
            Self::External(p) => write!(f, "external:{}", p.display()),
        }
    }
}

/// `problem_seed` only matters for generated problems (the elastic-net data).
pub fn build_problem(selector: &ProblemSelector, problem_seed: u64) -> Result<Box<dyn Problem>> {
    Ok(match selector {
        ProblemSelector::Illustrative => Box::new(IllustrativeObjective::default()),
        ProblemSelector::Elastic => Box::new(ElasticNetTuning::new(generate_elastic_data(problem_seed))),
        ProblemSelector::External(path) => Box::new(ExternalObjective::from_path(path)?),
    })
}

/// Strategy set given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyList(pub Vec<Strategy>);

impl FromStr for StrategyList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_strategies(s).map(StrategyList)
    }
}

fn parse_strategies(s: &str) -> std::result::Result<Vec<Strategy>, String> {
    if s == "all" {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for label in s.split(',') {
        let strategy = Strategy::from_label(label.trim())
            .ok_or_else(|| format!("unknown strategy `{label}` (expected standard, decomp, decomp-mono or all)"))?;
        if !out.contains(&strategy) {
            out.push(strategy);
        }
    }
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(name = "monobo", version, about = "Bayesian optimization of decomposed objectives with monotone components")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Compare strategies over seeded trials and write results.csv and summary.json.
    Run(RunArgs),
    /// Print the sorted totals of a random-search baseline.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub problem: ProblemSelector,
    /// Comma-separated subset of standard,decomp,decomp-mono, or `all`.
    #[arg(long, default_value = "all")]
    pub strategies: StrategyList,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long = "init", default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub n_init: u64,
    #[arg(long, default_value_t = 8)]
    pub budget: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Virtual points per dimension (default depends on the dimension).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub grid: Option<u64>,
    /// Size of the random-search baseline used for ranks.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub baseline: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Seed for generated problem data.
    #[arg(long, default_value_t = 0)]
    pub problem_seed: u64,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub problem: ProblemSelector,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Same meaning as `run --seed`: reproduces the baseline of that run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub problem_seed: u64,
}

pub fn parse_cli<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub problem: ProblemSelector,
    pub problem_seed: u64,
    pub strategies: Vec<Strategy>,
    pub n_trials: usize,
    pub n_init: usize,
    pub budget: usize,
    pub base_seed: u64,
    pub grid_resolution: Option<usize>,
    pub baseline_size: usize,
    pub jobs: usize,
    pub out: PathBuf,
}

impl From<RunArgs> for RunConfig {
    fn from(a: RunArgs) -> Self {
        Self {
            problem: a.problem,
            problem_seed: a.problem_seed,
            strategies: a.strategies.0,
            n_trials: a.trials as usize,
            n_init: a.n_init as usize,
            budget: a.budget as usize,
            base_seed: a.seed,
            grid_resolution: a.grid.map(|g| g as usize),
            baseline_size: a.baseline as usize,
            jobs: a.jobs as usize,
            out: a.out,
        }
    }
}

impl RunConfig {
    /// Defaults of the `run` subcommand.
    pub fn new(problem: ProblemSelector, out: impl Into<PathBuf>) -> Self {
        Self {
            problem,
            problem_seed: 0,
            strategies: Strategy::ALL.to_vec(),
            n_trials: 10,
            n_init: 4,
            budget: 8,
            base_seed: 0,
            grid_resolution: None,
            baseline_size: 100,
            jobs: 1,
            out: out.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 || self.n_init == 0 || self.baseline_size == 0 || self.jobs == 0 {
            return Err(Error::usage("trials, init, baseline and jobs must be at least 1"));
        }
        if self.strategies.is_empty() {
            return Err(Error::usage("no strategies selected"));
        }
        if self.grid_resolution.is_some_and(|g| g < 2) {
            return Err(Error::usage("grid resolution must be at least 2"));
        }
        Ok(())
    }
}

/// Seed of the random-search baseline shared by all strategies of a run.
pub fn baseline_seed(base_seed: u64) -> u64 {
    mix_seed(base_seed, u64::MAX, 3)
}

/// Totals at `n` uniform points, sorted descending.
pub fn random_search_baseline(problem: &dyn Problem, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::usage("baseline needs at least one point"));
    }
    let mut totals = initial_design(problem.dimension(), n, seed)
        .into_iter()
        .map(|x| evaluate_record(problem, x).map(|r| r.total))
        .collect::<Result<Vec<_>>>()?;
    totals.sort_by(|a, b| b.total_cmp(a));
    Ok(totals)
}

/// `1 +` the number of baseline values strictly greater than `best`.
pub fn rank_of(best: f64, baseline: &[f64]) -> usize {
    1 + baseline.iter().filter(|v| **v > best).count()
}

pub fn mean_square(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub mean_best_so_far: f64,
    pub mean_rank: f64,
    pub mean_square_rank: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureSummary {
    pub trial: usize,
    pub seed: u64,
    pub completed_evaluations: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub trials_completed: usize,
    /// Averages over completed trials only.
    pub iterations: Vec<IterationSummary>,
    pub failures: Vec<FailureSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSummary {
    pub problem: String,
    pub problem_seed: u64,
    pub dimension: usize,
    pub components: Vec<String>,
    pub transforms: Vec<String>,
    pub n_trials: usize,
    pub n_init: usize,
    pub budget: usize,
    pub base_seed: u64,
    pub grid_resolution: Option<usize>,
    pub baseline_seed: u64,
    pub baseline: Vec<f64>,
    pub strategies: Vec<StrategySummary>,
}

impl BenchmarkSummary {
    pub fn failure_count(&self) -> usize {
        self.strategies.iter().map(|s| s.failures.len()).sum()
    }

    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

/// Per-trial traces of each strategy plus the file-ready summary.
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub traces: Vec<(Strategy, Vec<TrialTrace>)>,
    pub summary: BenchmarkSummary,
}

fn summarize(traces: &[TrialTrace], baseline: &[f64], len: usize) -> Vec<IterationSummary> {
    if traces.is_empty() {
        return Vec::new();
    }
    (0..len)
        .map(|i| {
            let best: Vec<f64> = traces.iter().map(|t| t.best_so_far[i]).collect();
            let ranks: Vec<f64> = best.iter().map(|b| rank_of(*b, baseline) as f64).collect();
            IterationSummary {
                iteration: i,
                mean_best_so_far: mean(&best),
                mean_rank: mean(&ranks),
                mean_square_rank: mean_square(&ranks),
            }
        })
        .collect()
}

fn csv_header(d: usize, k: usize) -> String {
    let mut cols = vec!["strategy".to_string(), "trial".into(), "iteration".into()];
    cols.extend((0..d).map(|i| format!("x{i}")));
    cols.extend((0..k).map(|i| format!("c{i}")));
    cols.extend(["total".into(), "best_so_far".into(), "rank".into()]);
    cols.join(",") + "\n"
}

fn csv_rows(out: &mut String, strategy: Strategy, trial: usize, records: &[crate::bo::EvaluationRecord], baseline: &[f64]) {
    let mut best = f64::NEG_INFINITY;
    for (i, r) in records.iter().enumerate() {
        best = best.max(r.total);
        let _ = write!(out, "{},{trial},{i}", strategy.label());
        for v in r.x.iter().chain(&r.components) {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{:?},{best:?},{}", r.total, rank_of(best, baseline));
    }
}

/// Runs every configured strategy and returns traces and summary without
/// touching the filesystem.
pub fn run_comparison(config: &RunConfig, problem: &dyn Problem) -> Result<(BenchmarkOutcome, String)> {
    config.validate()?;
    let bseed = baseline_seed(config.base_seed);
    let baseline = random_search_baseline(problem, config.baseline_size, bseed)?;
    let settings = TrialSettings {
        n_init: config.n_init,
        budget: config.budget,
        grid_resolution: config.grid_resolution,
    };
    let len = config.n_init + config.budget;
    let mut csv = csv_header(problem.dimension(), problem.components().len());
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    for &strategy in &config.strategies {
        let results = run_trials_parallel(
            problem,
            strategy,
            &settings,
            config.n_trials,
            config.base_seed,
            config.jobs,
        );
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for (trial, result) in results.into_iter().enumerate() {
            match result {
                Ok(trace) => {
                    csv_rows(&mut csv, strategy, trial, &trace.records, &baseline);
                    ok.push(trace);
                }
                Err(e) => {
                    csv_rows(&mut csv, strategy, trial, &e.completed, &baseline);
                    failures.push(FailureSummary {
                        trial,
                        seed: e.seed,
                        completed_evaluations: e.completed.len(),
                        message: e.to_string(),
                    });
                }
            }
        }
        summaries.push(StrategySummary {
            strategy,
            trials_completed: ok.len(),
            iterations: summarize(&ok, &baseline, len),
            failures,
        });
        traces.push((strategy, ok));
    }
    let summary = BenchmarkSummary {
        problem: problem.name().to_string(),
        problem_seed: config.problem_seed,
        dimension: problem.dimension(),
        components: problem.components().iter().map(|c| c.name.clone()).collect(),
        transforms: problem.transform_descriptions(),
        n_trials: config.n_trials,
        n_init: config.n_init,
        budget: config.budget,
        base_seed: config.base_seed,
        grid_resolution: config.grid_resolution,
        baseline_seed: bseed,
        baseline,
        strategies: summaries,
    };
    Ok((BenchmarkOutcome { traces, summary }, csv))
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Builds the problem, runs the comparison and writes both result files to
/// `config.out`. Nothing is written when the configuration or problem is
/// invalid. Trial failures are recorded in the summary; callers decide the
/// exit status from [`BenchmarkSummary::failure_count`].
pub fn run_benchmark(config: &RunConfig) -> Result<BenchmarkOutcome> {
    let problem = build_problem(&config.problem, config.problem_seed)?;
    let (outcome, csv) = run_comparison(config, problem.as_ref())?;
    write_outputs(&config.out, &csv, &outcome.summary)?;
    Ok(outcome)
}

fn write_outputs(dir: &Path, csv: &str, summary: &BenchmarkSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RESULTS_FILE), csv)?;
    let mut json = serde_json::to_string_pretty(summary).map_err(|e| Error::numeric(e.to_string()))?;
    json.push('\n');
    std::fs::write(dir.join(SUMMARY_FILE), json)?;
    Ok(())
}
