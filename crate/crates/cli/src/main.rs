use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_cbf_cli::commands::{self, Options, Outcome, FAILURE_REPORT};
use adaptive_cbf_cli::config::Config;
use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arqp", version, about = "Adaptive robust CLF-CBF QP simulator for adaptive cruise control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured controller variant.
    Run(Common),
    /// Simulate all configured variants side by side.
    Compare(Common),
    /// Tabulate the estimation error bound over the sweep periods.
    GammaTable(Common),
    /// Check the robust CLF/CBF conditions on a state grid.
    VerifyCertificates(Common),
    /// Repeat the simulation for each estimator period in the sweep.
    #[command(name = "sweep-T")]
    SweepT(Common),
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Check trace invariants and fail on violation.
    #[arg(long)]
    assert: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn options(&self) -> Result<Options> {
        let config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        Ok(Options {
            config,
            out: self.out.clone(),
            plot: self.plot,
            assert: self.assert,
            seed: self.seed,
        })
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Run(c) => commands::run(&c.options()?),
        Command::Compare(c) => commands::compare(&c.options()?),
        Command::GammaTable(c) => commands::gamma_table_cmd(&c.options()?),
        Command::VerifyCertificates(c) => commands::verify_certificates(&c.options()?),
        Command::SweepT(c) => commands::sweep_t(&c.options()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            if outcome.failed {
                eprintln!("failed; see {FAILURE_REPORT} in the output directory");
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
