//! Command-line front end for `ncarl`.
//!
//! ```text
//! ncarl complete --input m.csv --mask-rate 0.5 --variant ncarl --out x.csv --metrics metrics.csv
//! ncarl synth --rows 100 --cols 60 --rank 5 --mask-rate 0.5 --seed 1 --out data/
//! ncarl grid --manifest run.toml --alphas 1,10,100 --ks 5,10
//! ncarl image --input photo.ppm --block 20 20 --out restored.ppm
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.

pub mod error;
pub mod manifest;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ncarl::io::MatrixFormat;

pub use error::{CliError, CliResult};
pub use manifest::{InputFormat, MaskChoice, Run, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "ncarl", version, about = "Low-rank matrix completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hide part of a matrix, complete it and score the hidden entries.
    Complete(RunArgs),
    /// Generate a synthetic low-rank instance.
    Synth(SynthArgs),
    /// Sweep alpha, k and gamma; one metrics row per cell.
    Grid(GridArgs),
    /// Inpaint a PGM/PPM image, channel by channel.
    Image(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML manifest; flags override its values.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunManifest,
}

impl RunArgs {
    fn resolve(self) -> CliResult<Run> {
        let base = match &self.manifest {
            Some(path) => RunManifest::load(path)?,
            None => RunManifest::default(),
        };
        base.overlay(self.run).resolve()
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub base: RunArgs,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MatrixFormatArg {
    Csv,
    Coo,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long)]
    pub rank: usize,
    /// Fraction of entries receiving Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_fraction: f64,
    /// Noise standard deviation relative to the RMS entry.
    #[arg(long, default_value_t = 0.01)]
    pub noise_sigma: f64,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub block: Option<Vec<usize>>,
    #[arg(long)]
    pub centered: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MatrixFormatArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn synth_request(a: SynthArgs) -> CliResult<run::SynthRequest> {
    let mask = RunManifest {
        input: Some(PathBuf::new()),
        mask_rate: a.mask_rate,
        block: a.block,
        centered: Some(a.centered),
        seed: Some(a.seed),
        ..Default::default()
    }
    .mask_choice()?;
    Ok(run::SynthRequest {
        spec: run::synthetic_spec(
            a.rows,
            a.cols,
            a.rank,
            a.noise_fraction,
            a.noise_sigma,
            a.seed,
        ),
        mask,
        format: match a.format {
            MatrixFormatArg::Csv => MatrixFormat::Csv,
            MatrixFormatArg::Coo => MatrixFormat::Coo,
        },
        out_dir: a.out,
    })
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Complete(args) => {
            let run = args.resolve()?;
            let outcome = run::complete(&run)?;
            println!(
                "{}: mse {} after {} iterations, numeric rank {}",
                run.dataset, outcome.mse, outcome.iterations, outcome.numeric_rank
            );
        }
        Command::Image(args) => {
            let mut run = args.resolve()?;
            if run.format.is_none_or(|f| !f.is_image()) {
                run.format = Some(InputFormat::Pgm);
            }
            let outcome = run::complete(&run)?;
            println!(
                "{}: mse {} after {} iterations, numeric rank {}",
                run.dataset, outcome.mse, outcome.iterations, outcome.numeric_rank
            );
        }
        Command::Grid(args) => {
            let axes = run::GridAxes {
                alphas: args.alphas,
                ks: args.ks,
                gammas: args.gammas,
            };
            let run = args.base.resolve()?;
            let summary = run::grid(&run, &axes)?;
            for cell in &summary.cells {
                if let Err(e) = &cell.result {
                    eprintln!(
                        "cell alpha={} k={} gamma={} failed: {e}",
                        cell.config.alpha, cell.config.k, cell.config.gamma
                    );
                }
            }
            if let Some(b) = summary.best {
                let cell = &summary.cells[b];
                let mse = cell.result.as_ref().map_or(f64::NAN, |o| o.mse);
                println!(
                    "best: alpha={} k={} gamma={} mse={mse}",
                    cell.config.alpha, cell.config.k, cell.config.gamma
                );
            }
        }
        Command::Synth(args) => {
            let files = run::synth(&synth_request(args)?)?;
            println!("wrote {}", files.masked.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ncarl: {e}");
            e.exit_code()
        }
    }
}
