//! Command-line front end for the reconstruction pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 resource limit
//! (block-map memory budget exhausted).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "voxrecon", version, about = "Volumetric reconstruction from range data")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct CommonArgs {
    /// Key=value config file; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Voxel edge length in meters.
    #[arg(long, global = true)]
    pub voxel_size: Option<f64>,
    /// Regularizer iteration budget.
    #[arg(long, global = true)]
    pub iters_3d: Option<usize>,
    /// Stereo solver outer iterations.
    #[arg(long, global = true)]
    pub iters_2d: Option<usize>,
    /// Minimum fusion weight for mesh extraction.
    #[arg(long, global = true)]
    pub min_weight: Option<f32>,
    /// Maximum fused depth in meters.
    #[arg(long, global = true)]
    pub max_range: Option<f64>,
    /// Seed for synthetic generation.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (depth maps, poses, ground truth).
    Gen {
        /// Scene preset: corridor, plane, or sphere.
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        /// Depth noise sigma in meters.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Also render rectified stereo pairs.
        #[arg(long)]
        stereo: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate disparity/depth maps from rectified stereo pairs.
    Stereo {
        /// Directory of left images (PNG/PGM).
        #[arg(long)]
        left_dir: PathBuf,
        #[arg(long)]
        right_dir: PathBuf,
        /// Output directory for PFM depth (and disparity) maps.
        #[arg(long)]
        out: PathBuf,
        /// Also write false-color disparity previews.
        #[arg(long)]
        preview: bool,
    },
    /// Fuse depth maps with poses into a block-map snapshot.
    Fuse {
        #[arg(long)]
        depth_dir: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Denoise a snapshot with the masked TV solver.
    Regularize {
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the zero-crossing mesh from a snapshot.
    Extract {
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a vertices-only XYZ file.
        #[arg(long)]
        xyz: Option<PathBuf>,
    },
    /// Compare a mesh against a reference cloud (XYZ or PLY).
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Histogram CSV output path.
        #[arg(long)]
        histogram: Option<PathBuf>,
        /// Stats output; defaults to stdout plus "<mesh>.stats".
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print storage accounting for a snapshot.
    Info {
        #[arg(name = "in")]
        input: PathBuf,
    },
    /// Run fuse -> regularize -> extract -> eval on a dataset directory
    /// (running stereo first when only image pairs are present).
    Pipeline {
        /// Dataset directory from `gen` (or same layout).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub enum CliError {
    Usage(String),
    Data(String),
    Resource(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Resource(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Resource(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful outputs, not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    if let Some(threads) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
