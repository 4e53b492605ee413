use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfg_cli::{
    cmd_compare, cmd_run, cmd_sweep, parse_algorithms, parse_list, CliError, ConfigSource,
    SweepArgs, EXIT_ERROR,
};

/// Policy-iteration and fixed-point solvers for congestion mean field games.
#[derive(Parser)]
#[command(name = "mfgpi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set beta=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; takes precedence over `output_dir` in the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl From<Common> for ConfigSource {
    fn from(c: Common) -> Self {
        ConfigSource {
            path: c.config,
            overrides: c.overrides,
            output_dir: c.output_dir,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write density, value, policy and history CSVs.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run several algorithms on one scenario and compare gaps and timings.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list out of pi1, pi2, fixed_point.
        #[arg(long, default_value = "pi1,pi2,fixed_point")]
        algorithms: String,
    },
    /// Largest converging horizon over a grid of (beta, zeta).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "1.5,1.2,1.0,0.8")]
        betas: String,
        #[arg(long, default_value = "0.8,0.6,0.4,0.2")]
        zetas: String,
        /// Increasing list of horizons to try.
        #[arg(long, default_value = "0.5,1,1.5,2,3,4,5")]
        ladder: String,
        /// Worker threads for independent cells.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { common } => cmd_run(&common.into()),
        Command::Compare { common, algorithms } => {
            cmd_compare(&common.into(), &parse_algorithms(&algorithms)?)
        }
        Command::Sweep {
            common,
            betas,
            zetas,
            ladder,
            jobs,
        } => {
            let args = SweepArgs {
                betas: parse_list(&betas)?,
                zetas: parse_list(&zetas)?,
                ladder: parse_list(&ladder)?,
                jobs,
            };
            cmd_sweep(&common.into(), &args)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { 0 });
        }
    };
    let code = dispatch(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
