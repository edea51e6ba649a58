//! `bats` command-line harness.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bats_core::agent::Mode;
use bats_core::bench::manifest::RunManifest;
use bats_core::bench::{emit_report, mock_dataset, regrade_file, run_benchmark, write_dataset, GradeMode};
use bats_core::ledger::{BROWSE, SEARCH};
use bats_core::providers::live::{EndpointConfig, HttpChat};
use bats_core::scaling::Scaling;

#[derive(Parser)]
#[command(name = "bats", version, about = "Budget-constrained tool-use agent benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark described by a manifest.
    Run(RunArgs),
    /// Grade (or re-grade) a records file in place.
    Grade(GradeArgs),
    /// Aggregate records into a cost/accuracy CSV.
    Report(ReportArgs),
    /// Write a synthetic dataset for mock runs.
    MockDataset(MockArgs),
}

#[derive(Args)]
struct RunArgs {
    manifest: PathBuf,
    /// react, react_tracker or bats
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    budget_search: Option<u64>,
    #[arg(long)]
    budget_browse: Option<u64>,
    /// Parallel scaling with N independent runs.
    #[arg(long, value_name = "N", conflicts_with = "sequential")]
    parallel: Option<usize>,
    /// Sequential scaling (budget forcing).
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    early_stop: bool,
    /// Synthetic worlds instead of the manifest's providers, e.g. `7,8`.
    #[arg(long, value_name = "SEED,DEPTH", value_parser = parse_world)]
    mock_world: Option<(u64, u32)>,
    #[arg(long)]
    resume: bool,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GradeArgs {
    records: PathBuf,
    /// Chat-completions endpoint of the judge; exact matching when absent.
    #[arg(long)]
    judge_url: Option<String>,
    #[arg(long, requires = "judge_url")]
    judge_model: Option<String>,
    /// Environment variable holding the judge API key.
    #[arg(long, requires = "judge_url")]
    judge_key_env: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    judge_temperature: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    depth: u32,
    #[arg(long, default_value_t = 5)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    branching: u32,
    #[arg(long)]
    out: PathBuf,
}

fn parse_world(s: &str) -> Result<(u64, u32), String> {
    let (seed, depth) = s.split_once(',').ok_or("expected SEED,DEPTH")?;
    let seed = seed.trim().parse().map_err(|e| format!("seed: {e}"))?;
    let depth = depth.trim().parse().map_err(|e| format!("depth: {e}"))?;
    Ok((seed, depth))
}

fn run(args: RunArgs) -> Result<()> {
    let mut m = RunManifest::load(&args.manifest).with_context(|| format!("loading {}", args.manifest.display()))?;
    if let Some(mode) = args.mode {
        m.set_mode(mode);
    }
    if let Some(n) = args.budget_search {
        m.policy.budgets.limits.insert(SEARCH.into(), n);
    }
    if let Some(n) = args.budget_browse {
        m.policy.budgets.limits.insert(BROWSE.into(), n);
    }
    if let Some(n) = args.parallel {
        m.policy.scaling = Scaling::Parallel;
        m.policy.parallel_n = n;
    }
    if args.sequential {
        m.policy.scaling = Scaling::Sequential;
    }
    if args.early_stop {
        m.policy.early_stop = true;
    }
    if let Some((seed, depth)) = args.mock_world {
        m.set_mock_world(seed, depth);
    }
    if args.resume {
        m.resume = true;
    }
    if let Some(dir) = args.output_dir {
        m.output_dir = dir;
    }
    m.validate()?;
    let summary = run_benchmark(&m)?;
    println!("{summary}");
    Ok(())
}

fn grade(args: GradeArgs) -> Result<()> {
    let (graded, ungraded) = match &args.judge_url {
        Some(url) => {
            let mut cfg = EndpointConfig::new(url.clone());
            cfg.model = args.judge_model.clone();
            cfg.api_key_env = args.judge_key_env.clone();
            if let Some(var) = &cfg.api_key_env {
                if std::env::var(var).map(|v| v.is_empty()).unwrap_or(true) {
                    bail!("environment variable {var} is not set");
                }
            }
            let judge = HttpChat::new(cfg)?;
            regrade_file(&args.records, &GradeMode::Judge { llm: &judge, temperature: args.judge_temperature })?
        }
        None => regrade_file(&args.records, &GradeMode::Exact)?,
    };
    println!("graded {graded} ungraded {ungraded}");
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let rows = emit_report(&args.records, args.out.as_deref())?;
    if let Some(out) = &args.out {
        println!("{} rows -> {}", rows.len(), out.display());
    }
    Ok(())
}

fn mock(args: MockArgs) -> Result<()> {
    let (items, _) = mock_dataset(args.seed, args.depth, args.count, args.branching);
    write_dataset(&args.out, &items)?;
    println!("{} items -> {}", items.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Grade(a) => grade(a),
        Command::Report(a) => report(a),
        Command::MockDataset(a) => mock(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
