//! Command-line front end: simulate datasets, estimate effects, run
//! Monte Carlo grids, print the enumerated truth, and verify the analytic
//! identities.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use intermed::harness::{
    dataset_from_csv, dataset_to_csv, oracle_report, run_grids, verify_identities, Scenario,
    ScenarioSpec,
};
use intermed::{decompose_effects, sample_dataset, DgpSpec, EstimatorKind};

#[derive(Parser)]
#[command(
    name = "intermed",
    version,
    about = "Interventional mediation effects under a treatment-induced confounder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from the standard law and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate the effect decomposition from a dataset CSV.
    Estimate(EstimateArgs),
    /// Run Monte Carlo scenario grids and write replication and summary CSVs.
    Grid(GridArgs),
    /// Print the enumerated truth of the standard law.
    Oracle,
    /// Check the analytic identities by exact enumeration (exits nonzero if
    /// any identity fails).
    Verify,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of observations.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input dataset CSV (columns w1,w2,w3,a,z,m,y).
    #[arg(long)]
    data: PathBuf,
    /// Estimator: onestep, onestep_stabilized, tmle, or plugin.
    #[arg(long, default_value = "tmle")]
    estimator: String,
    /// Nuisance scenario (which components to fit intercept-only).
    #[arg(long, default_value = "all_consistent")]
    scenario: String,
    /// Cross-fitting folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fold-assignment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GridArgs {
    /// Output directory for replications.csv and summary.csv.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// JSON file holding a list of scenario specs (overrides the shape
    /// flags below).
    #[arg(
        long,
        conflicts_with_all = ["scenario", "quick", "reps", "sizes", "seed", "folds", "estimator"]
    )]
    config: Option<PathBuf>,
    /// Scenarios to run (repeatable; default: all).
    #[arg(long)]
    scenario: Vec<String>,
    /// Use the reduced smoke grid instead of the full study grid.
    #[arg(long)]
    quick: bool,
    /// Override the replication count per sample size.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Override the estimators to run (repeatable).
    #[arg(long)]
    estimator: Vec<String>,
    /// Worker threads (0 = one per core; default from INTERMED_JOBS).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(&args),
        Command::Estimate(args) => estimate(&args),
        Command::Grid(args) => grid(&args),
        Command::Oracle => {
            print!("{}", oracle_report(&DgpSpec::default())?);
            Ok(())
        }
        Command::Verify => verify(),
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let data = sample_dataset(&DgpSpec::default(), args.n, args.seed);
    dataset_to_csv(&data, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote {} observations to {}", data.n(), args.out.display());
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let estimator: EstimatorKind = args.estimator.parse()?;
    let scenario: Scenario = args.scenario.parse()?;
    let data = dataset_from_csv(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let cfg = scenario.nuisance_config(args.folds);
    let report = decompose_effects(&data, &cfg, estimator, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn grid(args: &GridArgs) -> Result<()> {
    let specs = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str::<Vec<ScenarioSpec>>(&text)
            .with_context(|| format!("parsing {}", path.display()))?
    } else {
        let scenarios: Vec<Scenario> = if args.scenario.is_empty() {
            Scenario::ALL.to_vec()
        } else {
            args.scenario
                .iter()
                .map(|s| s.parse())
                .collect::<intermed::Result<_>>()?
        };
        let estimators: Vec<EstimatorKind> = args
            .estimator
            .iter()
            .map(|s| s.parse())
            .collect::<intermed::Result<_>>()?;
        scenarios
            .into_iter()
            .map(|scenario| {
                let mut spec = if args.quick {
                    ScenarioSpec::quick(scenario)
                } else {
                    ScenarioSpec::standard(scenario)
                };
                if let Some(reps) = args.reps {
                    spec.replications = reps;
                }
                if let Some(sizes) = &args.sizes {
                    spec.sample_sizes = sizes.clone();
                }
                if let Some(seed) = args.seed {
                    spec.base_seed = seed;
                }
                if let Some(folds) = args.folds {
                    spec.folds = folds;
                }
                if !estimators.is_empty() {
                    spec.estimators = estimators.clone();
                }
                spec
            })
            .collect()
    };
    let jobs = args.jobs.unwrap_or_else(|| {
        std::env::var("INTERMED_JOBS")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0)
    });
    let report = run_grids(&specs, &args.out, jobs)?;
    eprintln!(
        "wrote {} and {}",
        report.replications_csv.display(),
        report.summary_csv.display()
    );
    if report.failures > 0 {
        bail!(
            "{} replication/estimator pairs failed (see the error column in {})",
            report.failures,
            report.replications_csv.display()
        );
    }
    Ok(())
}

fn verify() -> Result<()> {
    let report = verify_identities(&DgpSpec::default())?;
    print!("{report}");
    if !report.passed() {
        let failed = report.entries.iter().filter(|e| !e.passed).count();
        bail!("{failed} identity check(s) failed");
    }
    Ok(())
}
