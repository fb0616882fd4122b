#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

use run::{CliError, Format};

#[derive(Parser, Debug)]
#[command(name = "decoykit", version, about = "Finite-size decoy-state key rates for biased-basis BB84")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// JSON run configuration (channel, analysis, k_max, format).
    #[arg(long, global = true, env = "DECOYKIT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Fiber length in km.
    #[arg(long, global = true)]
    pub distance: Option<f64>,

    /// Total number of pulses sent.
    #[arg(long, global = true)]
    pub ntot: Option<f64>,

    /// Failure probability of each fluctuation bound.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,

    /// Grid points per vacuum-yield axis.
    #[arg(long, global = true)]
    pub grid: Option<usize>,

    /// Ignore statistical fluctuations.
    #[arg(long, global = true)]
    pub fluct_free: bool,

    /// Use the Z-key phase error in the X-key rate term.
    #[arg(long, global = true)]
    pub rx2_literal: bool,

    /// Bound the single-photon error rate with the observed error yield (default).
    #[arg(long, global = true, conflicts_with = "conservative_e1")]
    pub eq18_literal: bool,

    /// Bound the single-photon error rate with the upper fluctuation of the error yield.
    #[arg(long, global = true)]
    pub conservative_e1: bool,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expected observations for a protocol spec.
    Simulate {
        /// Protocol spec file (JSON).
        #[arg(long)]
        protocol: PathBuf,
    },
    /// Worst-case key rate of a protocol spec.
    Rate {
        #[arg(long)]
        protocol: PathBuf,
    },
    /// Optimize a family's parameters at one distance.
    Optimize {
        /// Protocol family, e.g. 4Int-2.
        #[arg(long)]
        protocol: String,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Optimized rate over a range of distances.
    Sweep {
        #[arg(long)]
        protocol: String,
        #[arg(long = "from")]
        from_km: f64,
        #[arg(long = "to")]
        to_km: f64,
        #[arg(long = "step")]
        step_km: f64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Key rate across the vacuum-yield interval of the X basis.
    S0scan {
        #[arg(long)]
        protocol: PathBuf,
        /// Vacuum yield used for Z: lower, upper or a number.
        #[arg(long = "s0-z", default_value = "lower")]
        s0_z: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("decoykit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let ctx = run::Context::load(&cli.global)?;
    let text = match cli.command {
        Command::Simulate { protocol } => commands::simulate(&ctx, &protocol)?,
        Command::Rate { protocol } => commands::rate(&ctx, &protocol)?,
        Command::Optimize { protocol, restarts, seed } => commands::optimize(&ctx, &protocol, restarts, seed)?,
        Command::Sweep {
            protocol,
            from_km,
            to_km,
            step_km,
            restarts,
            seed,
        } => commands::sweep(&ctx, &protocol, from_km, to_km, step_km, restarts, seed)?,
        Command::S0scan { protocol, s0_z } => commands::s0scan(&ctx, &protocol, &s0_z)?,
    };
    ctx.emit(&text)
}
