//! `latentwave` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
//! 4 numeric failure. Errors go to stderr as `error[<class>]: <message>`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use latentwave::Error;

#[derive(Parser, Debug)]
#[command(name = "latentwave", version, about = "Paired-modality latent wave experiments")]
struct Cli {
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Fwi,
    Ct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Acoustic,
    Radon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Shared,
    Converter,
    Resolution,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired dataset (train.lwc and test.lwc).
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        /// FWI velocity families, e.g. flat_vel_a (repeat or comma-separate).
        #[arg(long, value_delimiter = ',')]
        family: Vec<String>,
        /// Training samples (per family for FWI).
        #[arg(long)]
        n: usize,
        /// Test samples (per family for FWI); default n/8, at least 1.
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "desk")]
        scale: Scale,
        #[arg(long, value_enum, default_value = "f32")]
        storage: Precision,
        /// CT image extent.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        /// CT scan geometry: parallel:V,D | fan:V,D,R | tri:A,P,D.
        #[arg(long, default_value = "tri:3,45,192")]
        geometry: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a forward simulator on one property map.
    Simulate {
        #[arg(long, value_enum)]
        kind: SimKind,
        /// Container holding a `property` array (a dataset or a previous simulate output).
        #[arg(long)]
        property: Option<PathBuf>,
        /// Sample index inside a dataset `--property` file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Generate the velocity map from this family instead of reading one.
        #[arg(long)]
        family: Option<String>,
        /// Generate an ellipse phantom of extent `--grid` instead of reading one.
        #[arg(long)]
        phantom: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value = "parallel:60,128")]
        geometry: String,
        /// Acoustic time step, seconds.
        #[arg(long, default_value_t = 8e-4)]
        dt: f64,
        #[arg(long, default_value_t = 1250)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        record_every: usize,
        #[arg(long, default_value_t = 5)]
        sources: usize,
        /// Grid spacing in metres for maps read without one.
        #[arg(long, default_value_t = 10.0)]
        dx: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from an experiment file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Metrics of a checkpoint on one or more datasets.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SIRT reconstruction of every sample of a CT dataset.
    Sirt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        /// Reconstruct only the first n samples.
        #[arg(long)]
        limit: Option<usize>,
        /// Allow negative attenuation in the iterate.
        #[arg(long)]
        allow_negative: bool,
        #[arg(long, default_value_t = 4)]
        dumps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Controlled comparison of model variants.
    Ablate {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        config: PathBuf,
    },
    /// Wave-speed, correlation and image reports for a checkpoint.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        dumps: usize,
    },
}

fn set_threads(n: Option<usize>) -> latentwave::Result<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    if n == 1 {
        latentwave::par::set_sequential(true);
    }
    Ok(())
}

fn run(cli: Cli) -> latentwave::Result<()> {
    set_threads(cli.threads)?;
    match cli.command {
        Command::GenData { kind, family, n, n_test, seed, scale, storage, grid, geometry, out } => {
            commands::gen_data(commands::GenData { kind, family, n, n_test, seed, scale, storage, grid, geometry, out })
        }
        Command::Simulate {
            kind,
            property,
            index,
            family,
            phantom,
            seed,
            grid,
            geometry,
            dt,
            steps,
            record_every,
            sources,
            dx,
            out,
        } => commands::simulate(commands::Simulate {
            kind,
            property,
            index,
            family,
            phantom,
            seed,
            grid,
            geometry,
            dt,
            steps,
            record_every,
            sources,
            dx,
            out,
        }),
        Command::Train { config } => commands::train(&config),
        Command::Eval { ckpt, data, out } => commands::eval(&ckpt, &data, out.as_deref()),
        Command::Sirt { data, iters, omega, limit, allow_negative, dumps, out } => {
            commands::sirt(&data, iters, omega, limit, !allow_negative, dumps, &out)
        }
        Command::Ablate { which, config } => commands::ablate(which, &config),
        Command::Analyze { ckpt, data, out, dumps } => commands::analyze(&ckpt, &data, &out, dumps),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            eprintln!("error[{}]: {e}", class.tag());
            ExitCode::from(class.exit_code() as u8)
        }
    }
}
