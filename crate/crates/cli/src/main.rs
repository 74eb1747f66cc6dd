use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use voxstokes::{assemble_stokes, build_hodge, build_operators, load_mask};
use voxstokes_cli::{run_experiment, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(version, about = "Mild Navier-Stokes solutions on voxel domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its results.
    Run { config: PathBuf },
    /// Parse a config and check it without running anything.
    Validate { config: PathBuf },
    /// Print statistics of a mask file.
    MaskInfo {
        mask: PathBuf,
        /// Also build the Stokes operator and report its spectrum.
        #[arg(long)]
        spectrum: bool,
    },
}

fn mask_info(path: PathBuf, spectrum: bool) -> Result<(), CliError> {
    let mask_error = |source| CliError::Mask { path: path.clone(), source };
    let file = File::open(&path).map_err(|e| mask_error(e.into()))?;
    let mask = Arc::new(load_mask(BufReader::new(file)).map_err(mask_error)?);
    let [nx, ny, nz] = mask.dims();
    println!("dims          {nx} x {ny} x {nz}");
    println!("spacing       {}", mask.spacing());
    println!("cells         {} of {}", mask.occupied_count(), nx * ny * nz);
    println!("volume        {}", mask.occupied_count() as f64 * mask.cell_volume());
    if spectrum {
        let hodge = Arc::new(build_hodge(Arc::new(build_operators(mask)))?);
        let spec = assemble_stokes(hodge.clone(), 0.0)?;
        println!("div-free dim  {}", hodge.dim());
        println!("grad rank     {}", hodge.gradient_rank());
        println!("lambda min    {:e}", spec.lambda_min());
        println!("lambda max    {:e}", spec.lambda_max());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => match ExperimentConfig::load(&config) {
            Ok(config) => {
                let outcome = run_experiment(&config);
                if outcome.error.is_none() {
                    println!("results written to {}", config.output_dir.display());
                }
                outcome.error.map_or(Ok(()), Err)
            }
            Err(e) => Err(e),
        },
        Command::Validate { config } => ExperimentConfig::load(&config).map(|_| println!("config ok")),
        Command::MaskInfo { mask, spectrum } => mask_info(mask, spectrum),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
