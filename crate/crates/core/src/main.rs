use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emsbench::cli::{self, CliError};

#[derive(Parser)]
#[command(
    name = "emsbench",
    version,
    about = "Microgrid energy-management benchmark: scenario generation, value-function training, out-of-sample policy assessment and a solar-noise sweep"
)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay a previous run from its manifest instead of --config.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads for scenario rollouts (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write demand scenarios, weather, tariffs and the solar profile.
    Generate,
    /// Train value functions on the generated optimization scenarios.
    Train,
    /// Benchmark policies on the assessment scenarios.
    Assess {
        /// Comma-separated subset of sddp,mpc,rule (default: all).
        #[arg(long, value_delimiter = ',')]
        policies: Vec<String>,
    },
    /// Solar-noise sensitivity sweep.
    Sweep,
    /// Parse and validate a config, printing a summary.
    ValidateConfig,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut config = cli::load_config(args.config.as_deref(), args.manifest.as_deref())?;
    if let Some(out) = args.output {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    let threads = args.threads.unwrap_or(config.threads);
    if threads > 0 {
        // A failure here only means a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match args.command {
        Command::Generate => cli::cmd_generate(&config),
        Command::Train => cli::cmd_train(&config),
        Command::Assess { policies } => cli::cmd_assess(&config, &policies),
        Command::Sweep => cli::cmd_sweep(&config),
        Command::ValidateConfig => {
            let summary = cli::cmd_validate_config(&config)?;
            println!("{summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("emsbench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
