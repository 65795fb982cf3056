use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracdiff::commands::{cmd_elliptic, cmd_simulate, cmd_study, cmd_validate};
use fracdiff::config::parse_config;

/// Nonlocal finite-element solver for fractional fast diffusion.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for assembly and level-parallel studies.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Time stepping with trajectory output and the energy stability check.
    Simulate,
    /// Lumped elliptic solve, plus Céa ratios when more than one level is set.
    Elliptic,
    /// Convergence study with EOC columns and a rate verdict.
    Study,
    /// Assembly oracle, gradient and ψ round-trip checks.
    Validate,
}

fn run(cli: &Cli) -> fracdiff::Result<bool> {
    let path = cli.config.as_ref().ok_or_else(|| fracdiff::Error::InvalidInput("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let ok = match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &mut out)?,
        Command::Elliptic => cmd_elliptic(&cfg, &mut out)?,
        Command::Study => cmd_study(&cfg, &mut out)?,
        Command::Validate => cmd_validate(&cfg, &mut out)?,
    };
    out.flush()?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
