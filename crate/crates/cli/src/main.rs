use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overlap_core::analysis::Verdict;
use overlap_core::verify::VerifyOptions;
use overlap_lab::commands::format_checks;
use overlap_lab::{cmd_bound, cmd_run, cmd_sweep, cmd_verify, CliError, CommandOptions};

#[derive(Parser)]
#[command(
    name = "overlap-lab",
    version,
    about = "Overlap-Local-SGD experiments on synthetic objectives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for each of its seeds.
    Run(Common),
    /// Run the Cartesian product of the configuration's sweep axes.
    Sweep(Common),
    /// Run the built-in identity and property checks.
    Verify(VerifyArgs),
    /// Check the convergence bound empirically over the configured seeds.
    Bound(BoundArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `out`, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep every N-th metrics row.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    common: Common,
    /// Run even when K is below the bound's iteration threshold.
    #[arg(long)]
    override_kmin: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Offset added to the pullback coefficient of the per-worker path in the
    /// equivalence check; a nonzero value must make that check fail.
    #[arg(long, default_value_t = 0.0, hide = true)]
    perturb_pullback: f64,
}

fn options(c: Common, override_kmin: bool) -> (PathBuf, CommandOptions) {
    (
        c.config,
        CommandOptions {
            out: c.out,
            jobs: c.jobs,
            stride: c.stride,
            override_kmin,
            seeds: None,
        },
    )
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(c) => {
            let (path, opts) = options(c, false);
            match cmd_run(&path, &opts) {
                Ok(s) => {
                    for r in &s.runs {
                        println!(
                            "{} seed {}: {:?}, F = {:.6e}",
                            r.run_id, r.seed, r.summary.status, r.summary.final_objective
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep(c) => {
            let (path, opts) = options(c, false);
            match cmd_sweep(&path, &opts) {
                Ok(s) => {
                    println!("{} runs over {} grid points", s.rows.len(), s.points.len());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify(v) => {
            let outcomes = cmd_verify(&VerifyOptions {
                seed: v.seed,
                pullback_perturbation: v.perturb_pullback,
            });
            print!("{}", format_checks(&outcomes));
            if outcomes.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Bound(b) => {
            let (path, opts) = options(b.common, b.override_kmin);
            match cmd_bound(&path, &opts) {
                Ok(r) => {
                    println!(
                        "mean LHS {:.6e} vs RHS {:.6e} (slack {:.2}x): {:?}",
                        r.mean_lhs, r.rhs, r.slack, r.verdict
                    );
                    if r.verdict == Verdict::BoundHolds {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => fail(e),
            }
        }
    }
}
