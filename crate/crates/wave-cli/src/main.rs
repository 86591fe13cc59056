//! `wave`: template-bank lifecycle pipeline over a JSON run configuration.
//!
//! Exit codes: 0 success, 2 input/validation, 3 shape incompatibility,
//! 4 training divergence, 5 I/O or container format failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wave_core::Error;

use commands::Ctx;

#[derive(Parser)]
#[command(name = "wave", version, about = "Weight-template model initialization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run seed. Generated from OS entropy and echoed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel grid cells. Reserved; execution is sequential.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Worker threads. 1 is the bit-exact mode and the only implemented one.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher from scratch and write its checkpoint.
    Teach {
        #[command(flatten)]
        common: Common,
    },
    /// Distill a teacher checkpoint into a template bank.
    Condense {
        #[command(flatten)]
        common: Common,
        /// Teacher checkpoint produced by `teach`.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Fit scalers against a frozen bank and compose an initial checkpoint.
    Init {
        #[command(flatten)]
        common: Common,
        /// Bank file produced by `condense`.
        #[arg(long)]
        bank: PathBuf,
        /// Target depth; defaults to the config's model depth.
        #[arg(long)]
        depth: Option<usize>,
        /// Target embedding width; defaults to the config's model width.
        #[arg(long)]
        width: Option<usize>,
        /// Scaler-fit steps; defaults to `decompress.fit_iterations`.
        #[arg(long = "fit-iters")]
        fit_iters: Option<usize>,
    },
    /// Train an existing checkpoint with the config's budget.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a depth or width grid over initialization methods.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Bank file; required when the method list includes wave.
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Run every component-mask subset at the base shape.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bank: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Teach { common }
            | Command::Condense { common, .. }
            | Command::Init { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::Ablate { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Teach { .. } => "teach",
            Command::Condense { .. } => "condense",
            Command::Init { .. } => "init",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = cli.command.common();
    if common.jobs == 0 || common.threads == 0 {
        return Err(Error::Input("--jobs and --threads must be at least 1".into()));
    }
    let ctx = Ctx::new(
        cli.command.name(),
        &common.config,
        common.seed,
        common.out.clone(),
        common.threads,
    )?;
    match &cli.command {
        Command::Teach { .. } => commands::cmd_teach(&ctx),
        Command::Condense { teacher, .. } => commands::cmd_condense(&ctx, teacher),
        Command::Init { bank, depth, width, fit_iters, .. } => {
            commands::cmd_init(&ctx, bank, *depth, *width, *fit_iters)
        }
        Command::Train { checkpoint, .. } => commands::cmd_train(&ctx, checkpoint),
        Command::Eval { checkpoint, .. } => commands::cmd_eval(&ctx, checkpoint),
        Command::Sweep { bank, .. } => commands::cmd_sweep(&ctx, bank.as_deref()),
        Command::Ablate { bank, .. } => commands::cmd_ablate(&ctx, bank),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) => 2,
        Error::Shape(_) | Error::Incompatible(_) => 3,
        Error::Training { .. } => 4,
        Error::Format(_) | Error::Io { .. } => 5,
        Error::State(_) => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
