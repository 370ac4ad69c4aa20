use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serp_audit::commands::{cmd_analyze, cmd_replay, cmd_run, AnalyzeOptions, RunOverrides};
use serp_audit::compare::Metric;
use serp_audit::{Execution, QueryId};

/// Synchronised-agent audits of search engine results.
#[derive(Debug, Parser)]
#[command(name = "serp-audit", version)]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a fleet config and write a run directory.
    Run(RunArgs),
    /// Compute similarity matrices, census, source profiles and tests for a run.
    Analyze(AnalyzeArgs),
    /// Re-parse a fixture corpus and compare against its sidecars.
    Replay {
        corpus: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Results collected per session (default 50).
    #[arg(long)]
    depth: Option<usize>,
    /// Seconds between session starts (default 420).
    #[arg(long)]
    cadence: Option<u32>,
    /// Minimum seconds between sessions (default 240).
    #[arg(long)]
    gap: Option<u32>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    run: PathBuf,
    /// Restrict matrices and tests to one of ji_overall, ji_top10, rbo_95, rbo_80.
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    query: Option<String>,
    /// Cut-off for the top-k Jaccard column (default 10).
    #[arg(long)]
    topk: Option<usize>,
    /// Persistence for the two RBO columns, e.g. `0.95,0.8`.
    #[arg(long, value_parser = parse_pair)]
    rbo_p: Option<[f64; 2]>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Domain ruleset replacing the built-in one.
    #[arg(long)]
    ruleset: Option<PathBuf>,
    /// Output directory (default RUN/analysis).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 2]>::try_from(v).map_err(|v| format!("expected two values, got {}", v.len()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let execution = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(
            &a.config,
            &a.out,
            &RunOverrides {
                seed: a.seed,
                depth: a.depth,
                cadence_seconds: a.cadence,
                gap_seconds: a.gap,
            },
            execution,
        )
        .map(|s| {
            print!("{}", s.completion.render());
            println!(
                "{}: {} sessions ({} completed, {} failed)",
                s.dir.display(),
                s.counts.sessions,
                s.counts.completed,
                s.counts.failed
            );
            0
        }),
        Command::Analyze(a) => cmd_analyze(
            &a.run,
            &AnalyzeOptions {
                metric: a.metric,
                query: a.query.map(QueryId::new),
                topk: a.topk,
                rbo_p: a.rbo_p,
                permutations: a.permutations,
                ruleset: a.ruleset,
                out: a.out,
                execution,
            },
        )
        .map(|s| {
            println!(
                "{}: {} records, {} matrices, {} tests ({} significant)",
                s.out.display(),
                s.records,
                s.matrices,
                s.tests,
                s.significant
            );
            0
        }),
        Command::Replay { corpus } => cmd_replay(&corpus).map(|o| {
            print!("{}", o.text);
            o.exit_code()
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
