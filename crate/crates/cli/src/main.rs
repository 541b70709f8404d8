//! `winodds`: covariate-adjusted win odds from the command line.
//!
//! Exit codes: 0 success, 2 data error, 3 fit or inference failure,
//! 4 simulation study aborted, 64 usage error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use winodds::io::{
    load_csv, report_to_json, report_to_table, write_dataset_csv, write_incidence_csv,
    write_study_csv, CategoricalSpec, CsvSchema,
};
use winodds::sim::{
    emit_incidence_curve, incidence_grid, run_study_with_progress, simulate_trial, FlipMode,
    Scenario, StudyConfig, TrialSettings, N_COVARIATES,
};
use winodds::{analyze, AnalysisOptions, BootstrapRequest, Error, Sided, StudyError};

const EXIT_DATA: u8 = 2;
const EXIT_FIT: u8 = 3;
const EXIT_STUDY: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "winodds", version, about = "Covariate-adjusted win odds for hierarchical composite endpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unadjusted and covariate-adjusted win odds for a trial dataset.
    Analyze(AnalyzeArgs),
    /// Write one synthetic trial as CSV.
    Simulate(SimulateArgs),
    /// Monte-Carlo rejection rates over covariate adjustment sets.
    Power(PowerArgs),
    /// Observed-event cumulative incidence curves of a dataset.
    Incidence(IncidenceArgs),
}

#[derive(Args)]
struct Workers {
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "WINODDS_WORKERS", default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum SidedArg {
    One,
    Two,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// CSV with columns id, arm, u1, d1, u2, d2 and covariates.
    #[arg(long)]
    input: PathBuf,
    /// Covariate columns to adjust for.
    #[arg(long, value_delimiter = ',')]
    adjust: Vec<String>,
    /// Categorical column, optionally with levels: `col` or `col=ref|l2|...`.
    #[arg(long)]
    categorical: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "two")]
    sided: SidedArg,
    /// Stratified bootstrap replicates for a variance cross-check.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Seed for the bootstrap.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Include wall-clock stage timings in the report.
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    scenario: Scenario,
    #[arg(long, default_value_t = 0.3)]
    effect: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Detach treatment labels from outcomes.
    #[arg(long)]
    null_flip: bool,
    /// With --null-flip, permute the labels instead of redrawing them.
    #[arg(long, requires = "null_flip")]
    permute_flip: bool,
    #[arg(long, default_value_t = 0.35)]
    event_fraction: f64,
    #[arg(long, default_value_t = 7500.0)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    scenario: Scenario,
    #[arg(long)]
    reps: usize,
    /// One-sided level for H0: win odds ≤ 1.
    #[arg(long, default_value_t = 0.025)]
    alpha: f64,
    /// Covariate prefix sizes: a range `a..b` (inclusive) or a list `0,1,5`.
    #[arg(long, default_value = "0..10", value_parser = parse_prefixes)]
    adjust_prefixes: Prefixes,
    #[arg(long)]
    null_flip: bool,
    #[arg(long, requires = "null_flip")]
    permute_flip: bool,
    #[arg(long, default_value_t = 0.3)]
    effect: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.35)]
    event_fraction: f64,
    #[arg(long, default_value_t = 7500.0)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args)]
struct IncidenceArgs {
    #[arg(long)]
    input: PathBuf,
    /// Number of evenly spaced grid times from 0 to the last follow-up.
    #[arg(long, default_value_t = 101)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct Prefixes(Vec<usize>);

fn parse_prefixes(s: &str) -> Result<Prefixes, String> {
    let bad = |v: &str| format!("invalid prefix size '{v}'");
    let sizes = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad(a))?;
        let b: usize = b.trim().parse().map_err(|_| bad(b))?;
        if a > b {
            return Err(format!("empty range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad(v)))
            .collect::<Result<Vec<usize>, _>>()?
    };
    if let Some(k) = sizes.iter().find(|&&k| k > N_COVARIATES) {
        return Err(format!("prefix size {k} exceeds {N_COVARIATES}"));
    }
    Ok(Prefixes(sizes))
}

fn parse_categorical(s: &str) -> CategoricalSpec {
    match s.split_once('=') {
        Some((name, levels)) => CategoricalSpec {
            name: name.to_string(),
            levels: Some(levels.split('|').map(str::to_string).collect()),
        },
        None => CategoricalSpec::new(s),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match &e {
            Error::Data(_) => EXIT_DATA,
            Error::Fit(_) | Error::Inference(_) => EXIT_FIT,
            Error::Study(StudyError::InvalidConfig(_)) | Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Study(_) => EXIT_STUDY,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<winodds::DataError> for Failure {
    fn from(e: winodds::DataError) -> Failure {
        Error::from(e).into()
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Failure {
        Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => with_workers(a.workers.workers, || cmd_analyze(&a)),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Power(a) => with_workers(a.workers.workers, || cmd_power(&a)),
        Command::Incidence(a) => cmd_incidence(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("winodds: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn with_workers<F>(workers: usize, f: F) -> Result<(), Failure>
where
    F: FnOnce() -> Result<(), Failure> + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::usage(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn output(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let io_failure = |e: io::Error| Failure {
        code: EXIT_DATA,
        message: match path {
            Some(p) => format!("cannot write {}: {e}", p.display()),
            None => format!("cannot write output: {e}"),
        },
    };
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io_failure)?);
            write(&mut w).and_then(|_| w.flush()).map_err(io_failure)
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w).and_then(|_| w.flush()).map_err(io_failure)
        }
    }
}

fn to_io(e: winodds::DataError) -> io::Error {
    io::Error::other(e.to_string())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), Failure> {
    let categorical: Vec<CategoricalSpec> = a.categorical.iter().map(|s| parse_categorical(s)).collect();
    let adjust: Vec<String> = a.adjust.iter().filter(|s| !s.is_empty()).cloned().collect();
    if let Some(c) = categorical.iter().find(|c| !adjust.contains(&c.name)) {
        return Err(Failure::usage(format!(
            "categorical column '{}' is not listed in --adjust",
            c.name
        )));
    }
    let schema = CsvSchema {
        covariates: Some(
            adjust
                .iter()
                .filter(|n| !categorical.iter().any(|c| &c.name == *n))
                .cloned()
                .collect(),
        ),
        categorical,
    };
    let ds = load_csv(&a.input, &schema)?;
    let opts = AnalysisOptions {
        alpha: a.alpha,
        sided: match a.sided {
            SidedArg::One => Sided::One,
            SidedArg::Two => Sided::Two,
        },
        bootstrap: a.bootstrap.map(|replicates| BootstrapRequest {
            replicates,
            seed: a.seed,
        }),
        timings: a.timings,
        ..AnalysisOptions::default()
    };
    let all: Vec<usize> = (0..ds.p()).collect();
    let report = analyze(&ds, &all, &opts)?;
    if let Some(b) = &report.bootstrap {
        if b.failed > 0 {
            eprintln!("winodds: {} of {} bootstrap refits failed", b.failed, b.replicates);
        }
    }
    let text = match a.format {
        Format::Json => report_to_json(&report),
        Format::Table => report_to_table(&report),
    };
    output(a.out.as_deref(), |w| w.write_all(text.as_bytes()))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    if a.n < 4 {
        return Err(Failure::usage(format!("--n must be at least 4, got {}", a.n)));
    }
    if !(a.event_fraction > 0.0 && a.event_fraction < 1.0) {
        return Err(Failure::usage("--event-fraction must lie in (0, 1)"));
    }
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        return Err(Failure::usage("--scale must be positive"));
    }
    let settings = TrialSettings {
        effect: a.effect,
        null_flip: a.null_flip,
        flip_mode: flip_mode(a.permute_flip),
        event_fraction: a.event_fraction,
        scale: a.scale,
        ..TrialSettings::new(a.n, a.scenario)
    };
    let ds = simulate_trial(&settings, a.seed);
    output(a.out.as_deref(), |w| write_dataset_csv(&ds, w).map_err(to_io))
}

fn flip_mode(permute: bool) -> FlipMode {
    if permute {
        FlipMode::Permute
    } else {
        FlipMode::Redraw
    }
}

fn cmd_power(a: &PowerArgs) -> Result<(), Failure> {
    let cfg = StudyConfig {
        treatment_effect: a.effect,
        null_flip: a.null_flip,
        flip_mode: flip_mode(a.permute_flip),
        alpha: a.alpha,
        adjustment_sets: a.adjust_prefixes.0.clone(),
        seed: a.seed,
        event_fraction: a.event_fraction,
        scale: a.scale,
        ..StudyConfig::new(a.n, a.reps, a.scenario)
    };
    let step = a.reps.div_ceil(20).max(1);
    let progress = |done: usize, total: usize| {
        if done.is_multiple_of(step) || done == total {
            eprintln!("progress: {done}/{total} replicates ({}%)", 100 * done / total);
        }
    };
    let result = run_study_with_progress(&cfg, &progress)?;
    for row in result.rows.iter().filter(|r| r.failures > 0) {
        eprintln!(
            "winodds: adjustment size {}: {} of {} replicates failed and were skipped",
            row.adjustment_size, row.failures, cfg.reps
        );
    }
    output(a.out.as_deref(), |w| write_study_csv(&result, w).map_err(to_io))
}

fn cmd_incidence(a: &IncidenceArgs) -> Result<(), Failure> {
    let ds = load_csv(&a.input, &CsvSchema {
        covariates: Some(vec![]),
        categorical: vec![],
    })?;
    let grid = incidence_grid(&ds, a.points);
    let curve = emit_incidence_curve(&ds, &grid);
    output(a.out.as_deref(), |w| write_incidence_csv(&curve, w).map_err(to_io))
}
