use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roughfilm_cli::commands::{self, CliError, Options};

#[derive(Parser)]
#[command(name = "roughfilm", version, about = "Thin-film micropolar flow over a rough wall: cell problems, Reynolds limit, direct solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Comma-separated times; overrides `times` from the config
    #[arg(long, value_delimiter = ',')]
    time_list: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config and the profile invariants
    Validate(Common),
    /// Solve all cell problems at one y1
    Cell {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        y1: f64,
    },
    /// Coefficients, Reynolds pressure and reconstructed limit fields
    Homogenize(Common),
    /// Direct penalized solve at the configured eps
    Direct(Common),
    /// Direct solves over the sweep lists, compared against the limit pressure
    Sweep(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Validate(c) | Command::Homogenize(c) | Command::Direct(c) | Command::Sweep(c) => c,
        Command::Cell { common, .. } => common,
    };
    let opts = Options { out: common.out.clone(), jobs: common.jobs, time_list: common.time_list.clone() };
    let config = commands::load_config(&common.config)?;
    match cli.command {
        Command::Validate(_) => {
            let summary = commands::cmd_validate(config, &opts)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Cell { y1, .. } => {
            let out = commands::cmd_cell(config, y1, &opts)?;
            println!("{}", out.display());
        }
        Command::Homogenize(_) => println!("{}", commands::cmd_homogenize(config, &opts)?.display()),
        Command::Direct(_) => println!("{}", commands::cmd_direct(config, &opts)?.display()),
        Command::Sweep(_) => println!("{}", commands::cmd_sweep(config, &opts)?.0.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
