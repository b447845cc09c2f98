mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
    Property(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Property(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
            CliError::Property(m) => write!(f, "property check failed: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<nls_birkhoff::Error> for CliError {
    fn from(e: nls_birkhoff::Error) -> Self {
        use nls_birkhoff::Error as E;
        match e {
            E::InvalidInput(_) | E::Infeasible(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Birkhoff normal forms and long-time simulation for the truncated NLS.
#[derive(Parser)]
#[command(name = "nlsnf", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the block potential for a seed.
    SamplePotential,
    /// Scan removal pairs and report the empirical non-resonance constant.
    SmalldivScan,
    /// Compute the Birkhoff normal form to a fixed order.
    NormalForm,
    /// Integrate the truncated equation with split-step Fourier.
    Simulate,
    /// Run the property suites.
    Verify {
        #[arg(long, hide = true)]
        inject_bracket_sign_flip: bool,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("BNLS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("BNLS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Command::Verify { .. }) => ExperimentConfig::default(),
        (None, _) => return Err(CliError::Validation("--config is required".into())),
    };
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = Some(dir);
    }
    match cli.command {
        Command::SamplePotential => commands::sample_potential_cmd(&cfg),
        Command::SmalldivScan => commands::smalldiv_scan_cmd(&cfg),
        Command::NormalForm => commands::normal_form_cmd(&cfg),
        Command::Simulate => commands::simulate_cmd(&cfg),
        Command::Verify {
            inject_bracket_sign_flip,
        } => commands::verify_cmd(&cfg, inject_bracket_sign_flip),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
