//! `rxar`: design and assess prescription-embedded AR display optics.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prescription_ar::analysis::TradeVariable;

use crate::config::DesignConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rxar", version, about = "Prescription-embedded AR display design")]
struct Cli {
    /// Worker threads for the parallel library loops.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Design configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created when missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// Starting display-path parameters: `prototype` or a JSON file.
    #[arg(long, value_name = "prototype|PATH")]
    seed: Option<String>,
    /// Prescription lens written by `design-lens`; the closed-form lens is
    /// used otherwise.
    #[arg(long, value_name = "PATH")]
    lens: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the prescription lens against the eye model.
    DesignLens {
        #[command(flatten)]
        common: Common,
    },
    /// Optimize the display path over the configured eye reliefs.
    DesignAr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArgs,
    },
    /// Evaluate a display path.
    Assess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seed: SeedArgs,
        /// Comma-separated subset of fov, eyebox, mtf, spots, focus,
        /// resolution-profile.
        #[arg(long, value_name = "LIST", num_args = 0.., value_delimiter = ',')]
        metrics: Vec<String>,
    },
    /// FOV and eye box across lens thickness or eye relief.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "prototype|PATH")]
        seed: Option<String>,
        /// `t_l` or `d_e`.
        #[arg(long)]
        variable: String,
        /// Strictly increasing values, mm.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Re-optimize freeform and distances at each value.
        #[arg(long)]
        reoptimize: bool,
    },
}

fn setup_threads(n: Option<usize>) -> Result<(), CliError> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        eprintln!("warning: built without the `parallel` feature; running on one thread");
    }
    Ok(())
}

fn prepare(common: &Common) -> Result<DesignConfig, CliError> {
    let cfg = DesignConfig::load(&common.config)?;
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    setup_threads(cli.threads)?;
    match cli.command {
        Command::DesignLens { common } => {
            let cfg = prepare(&common)?;
            commands::design_lens(&cfg, &common.out)
        }
        Command::DesignAr { common, seed } => {
            let cfg = prepare(&common)?;
            commands::design_ar(&cfg, seed.seed.as_deref(), seed.lens.as_deref(), &common.out)
        }
        Command::Assess { common, seed, metrics } => {
            let metrics = commands::parse_metrics(&metrics)?;
            let cfg = prepare(&common)?;
            commands::assess(&cfg, seed.seed.as_deref(), seed.lens.as_deref(), &metrics, &common.out)
        }
        Command::Sweep {
            common,
            seed,
            variable,
            values,
            reoptimize,
        } => {
            let variable: TradeVariable = variable.parse()?;
            let cfg = prepare(&common)?;
            commands::sweep(&cfg, seed.as_deref(), variable, &values, reoptimize, &common.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
