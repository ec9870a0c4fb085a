use clap::{Parser, Subcommand};
use seqm::cli::{self, CliError, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "seqm",
    about = "Bayesian earthquake source estimation from smartphone trigger data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct CommonFlags {
    /// Master RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Total MCMC iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Burn-in iterations discarded from the front of the chain.
    #[arg(long)]
    burnin: Option<usize>,
    /// Number of temperature levels.
    #[arg(long)]
    temps: Option<usize>,
    /// HPDR coverage level.
    #[arg(long)]
    gamma: Option<f64>,
}

impl CommonFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            iterations: self.iters,
            burn_in: self.burnin,
            temperatures: self.temps,
            gamma: self.gamma,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a dataset directory (triggers.csv, active.csv, metadata.toml).
    Fit {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Fit configuration file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Generate synthetic scenario datasets.
    Simulate {
        /// Scenario configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Summarise a samples file: modes, HPDRs and the epicentre density grid.
    Summarize {
        /// Samples file written by `fit`.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Run the simulation study grid and write the error table.
    Study {
        /// Study configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Emit trace, density and autocorrelation data from a samples file.
    Diagnose {
        /// Samples file written by `fit`.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit {
            data,
            config,
            common,
        } => cli::cmd_fit(&data, config.as_deref(), &common.out, &common.overrides()),
        Command::Simulate { config, common } => {
            let dirs = cli::cmd_simulate(&config, &common.out, &common.overrides())?;
            for d in dirs {
                println!("{}", d.display());
            }
            Ok(())
        }
        Command::Summarize {
            samples,
            config: _,
            common,
        } => cli::cmd_summarize(&samples, &common.out, &common.overrides()),
        Command::Study { config, common } => {
            cli::cmd_study(&config, &common.out, &common.overrides())
        }
        Command::Diagnose {
            samples,
            config: _,
            common,
        } => cli::cmd_diagnose(&samples, &common.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
