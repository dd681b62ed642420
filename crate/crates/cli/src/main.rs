use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use timechange_sv_cli::{
    cmd_diagnose, cmd_fit, cmd_simulate, CliError, DiagnoseOptions, RunConfig,
};

/// Bayesian estimation of stochastic volatility diffusions.
#[derive(Parser)]
#[command(name = "tcsv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and its latent truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sampler on an observation file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Autocorrelation, IACT and kernel densities of a trace.
    Diagnose {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        max_lag: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        grid_points: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            for path in cmd_simulate(&cfg, &cfg.out_dir(out.as_deref())?)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Fit { config, data, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let data = data
                .or_else(|| cfg.data.path.clone())
                .ok_or_else(|| CliError::Config("no data file given".into()))?;
            let dir = cfg.out_dir(out.as_deref())?;
            let traces = cmd_fit(&cfg, &data, &dir)?;
            for (i, t) in traces.iter().enumerate() {
                println!(
                    "chain {}: {} draws, acceptance Z {:.3}, gamma {:.3}",
                    i + 1,
                    t.n_rows(),
                    t.acceptance.z.rate(),
                    t.acceptance.gamma.rate()
                );
            }
            println!("wrote results to {}", dir.display());
        }
        Command::Diagnose {
            trace,
            max_lag,
            out,
            grid_points,
        } => {
            let skipped = cmd_diagnose(
                &trace,
                DiagnoseOptions {
                    max_lag,
                    grid_points,
                },
                &out,
            )?;
            if !skipped.is_empty() {
                eprintln!("skipped constant columns: {}", skipped.join(", "));
            }
            println!("wrote acf.csv, iact.csv and kde.csv to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
