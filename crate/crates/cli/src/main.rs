//! `evo` — hypothesis checking, solving and verification for evolutionary
//! inclusions on weighted time grids.
//!
//! Subcommands map onto the library's run pipeline:
//!
//! * `check`  — run every hypothesis check, print the table, write
//!   `reports.json`;
//! * `solve`  — solve and write `solution.csv` + `diagnostics.json` (and the
//!   physical time series for application problems);
//! * `verify` — solve, then confirm the Lipschitz bound and causality on
//!   seeded perturbations, writing `verify.json`;
//! * `demo`   — run a built-in desk-scale configuration (`wave` or
//!   `friction`).
//!
//! Exit codes: `0` when everything passed, `1` on scientific failure
//! (hypothesis violation, divergence, bound violation), `2` on usage or
//! configuration errors.  Runs are deterministic: identical configuration
//! and seed give byte-identical artifacts; `EVO_THREADS` caps the worker
//! pool without changing results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evo_core::runner::{self, RunConfig, RunOutcome};
use evo_core::solver::Backend;
use evo_core::CoreError;

#[derive(Parser)]
#[command(name = "evo", version, about = "Evolutionary inclusion solver")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every hypothesis check on the configured problem.
    Check(CommonArgs),
    /// Solve the configured problem and write solution artifacts.
    Solve(CommonArgs),
    /// Solve, then confirm the Lipschitz and causality bounds.
    Verify(CommonArgs),
    /// Run a built-in desk-scale demonstration.
    Demo(DemoArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Proceed past failed hypothesis gates, recording them as witnesses.
    #[arg(long)]
    force: bool,
    /// Override the configured solver backend.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
}

#[derive(Args)]
struct DemoArgs {
    /// Which demonstration to run.
    #[arg(value_enum)]
    which: DemoKind,
    /// Override the built-in seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the solver backend.
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoKind {
    Wave,
    Friction,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Fb,
    Dr,
}

impl From<BackendArg> for Backend {
    fn from(value: BackendArg) -> Backend {
        match value {
            BackendArg::Fb => Backend::Fb,
            BackendArg::Dr => Backend::Dr,
        }
    }
}

fn apply_overrides(
    cfg: &mut RunConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    backend: Option<BackendArg>,
) {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(backend) = backend {
        cfg.solver.backend = backend.into();
    }
}

fn run() -> Result<RunOutcome, CoreError> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Check(args) => {
            let mut cfg = runner::load_config(&args.config)?;
            apply_overrides(&mut cfg, args.seed, args.out, args.backend);
            runner::cmd_check(&cfg)
        }
        Cmd::Solve(args) => {
            let mut cfg = runner::load_config(&args.config)?;
            apply_overrides(&mut cfg, args.seed, args.out, args.backend);
            runner::cmd_solve(&cfg, args.force)
        }
        Cmd::Verify(args) => {
            let mut cfg = runner::load_config(&args.config)?;
            apply_overrides(&mut cfg, args.seed, args.out, args.backend);
            runner::cmd_verify(&cfg, args.force)
        }
        Cmd::Demo(args) => {
            let mut cfg = runner::demo_run_config(matches!(args.which, DemoKind::Wave));
            apply_overrides(&mut cfg, args.seed, args.out, args.backend);
            runner::cmd_solve(&cfg, false)
        }
    }
}

/// Usage and configuration problems exit 2; scientific failures exit 1.
fn exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::InvalidConfig(_)
        | CoreError::Io(_)
        | CoreError::Json(_)
        | CoreError::Csv(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("artifacts: {}", outcome.run_dir.display());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
