//! `eolab`: run experiments, compare gap samples, and check the library's
//! invariants from the shell.

mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eolab::dominance::{icx_dominates, DominancePolicy, EmpiricalSample, Verdict};
use eolab::harness::{read_report, run_experiment_with_jobs, write_report, ExperimentConfig, OutputFormat};
use eolab::model::{catalog_ids, problem_by_id};
use eolab::Error;

const EXIT_DOMAIN: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "eolab", version, about = "Empirical optimization against its expanded alternatives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Suite {
    Conjugates,
    Gradients,
    Expansions,
    Limits,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report.
    Run {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to all cores.
        #[arg(long, env = "EOLAB_JOBS")]
        jobs: Option<usize>,
        /// Report path; defaults to the config's output path, then
        /// `report.csv` or `report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report format; defaults to the config's.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Summarize raw gaps instead of n-scaled gaps.
        #[arg(long)]
        raw: bool,
    },
    /// Test whether sample A is dominated by sample B in increasing convex
    /// order. Exit 0 dominated, 1 not dominated, 3 inconclusive.
    Dominance {
        /// File with one value per line.
        a: PathBuf,
        /// File with one value per line.
        b: PathBuf,
        /// Band width in standard errors.
        #[arg(long, default_value_t = 3.0)]
        z: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 512)]
        grid: usize,
    },
    /// Run an invariant suite; exit 0 iff every check passes.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Catalog problem (all problems for `gradients` when omitted).
        #[arg(long)]
        problem: Option<String>,
    },
    /// List the built-in problems.
    ListProblems,
    /// Print the per-cell summary of a JSON report.
    Report {
        /// Report written with `--format json`.
        report: PathBuf,
        /// Summarize raw gaps instead of n-scaled gaps.
        #[arg(long)]
        raw: bool,
    },
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
    match cli.command {
        Command::Run {
            config,
            seed,
            jobs,
            out,
            format,
            raw,
        } => cmd_run(&config, seed, jobs, out, format, raw),
        Command::Dominance { a, b, z, grid } => cmd_dominance(&a, &b, z, grid),
        Command::Verify { suite, problem } => verify::run(suite, problem.as_deref()),
        Command::ListProblems => {
            for id in catalog_ids() {
                match problem_by_id(id) {
                    Ok(p) => println!("{id}\t{}", p.describe()),
                    Err(e) => println!("{id}\t<{e}>"),
                }
            }
            ExitCode::SUCCESS
        }
        Command::Report { report, raw } => match read_report(&report) {
            Ok(r) => {
                for line in r.summary_lines(raw) {
                    println!("{line}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("eolab: cannot read report {}: {e}", report.display());
                ExitCode::from(EXIT_USAGE)
            }
        },
    }
}

fn cmd_run(
    path: &Path,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
    raw: bool,
) -> ExitCode {
    let mut config = match ExperimentConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("eolab: bad config {}: {e}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let format = match format {
        Some(Format::Csv) => OutputFormat::Csv,
        Some(Format::Json) => OutputFormat::Json,
        None => config.output.format,
    };
    let out = out
        .or_else(|| config.output.path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| match format {
            OutputFormat::Csv => PathBuf::from("report.csv"),
            OutputFormat::Json => PathBuf::from("report.json"),
        });
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = match run_experiment_with_jobs(&config, jobs) {
        Ok(r) => r,
        Err(e @ (Error::UnknownProblem(_) | Error::InvalidConfig(_) | Error::UnknownDivergence(_))) => {
            eprintln!("eolab: bad config {}: {e}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            eprintln!("eolab: {e}");
            return ExitCode::from(EXIT_DOMAIN);
        }
    };
    for line in report.summary_lines(raw) {
        println!("{line}");
    }
    if let Err(e) = write_report(&report, &out, format) {
        eprintln!("eolab: cannot write {}: {e}", out.display());
        return ExitCode::from(EXIT_DOMAIN);
    }
    ExitCode::SUCCESS
}

fn read_sample(path: &Path) -> Result<EmpiricalSample, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let values = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| format!("{}: {l:?}: {e}", path.display()))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    EmpiricalSample::new(path.display().to_string(), values).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_dominance(a: &Path, b: &Path, z: f64, grid: usize) -> ExitCode {
    if !(z >= 0.0) || grid < 2 {
        eprintln!("eolab: need --z >= 0 and --grid >= 2");
        return ExitCode::from(EXIT_USAGE);
    }
    let (sa, sb) = match (read_sample(a), read_sample(b)) {
        (Ok(sa), Ok(sb)) => (sa, sb),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("eolab: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let policy = DominancePolicy {
        z,
        grid_points: grid,
        ..DominancePolicy::default()
    };
    let verdict = icx_dominates(&sa, &sb, &policy);
    println!("{}", verdict.to_json());
    match verdict.verdict {
        Verdict::Dominated => ExitCode::SUCCESS,
        Verdict::NotDominated => ExitCode::from(EXIT_DOMAIN),
        Verdict::Inconclusive => ExitCode::from(EXIT_INCONCLUSIVE),
    }
}
