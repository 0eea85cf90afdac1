//! Library side of the `gaplab` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod embfile;
pub mod error;
pub mod io;
pub mod svg;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use gaplab_core::sweep::SweepVariant;

pub use error::{CliError, CliResult, EXIT_INPUT, EXIT_NUMERICAL};

#[derive(Debug, Parser)]
#[command(name = "gaplab", version, about = "Modality-gap analysis and gap-closing toy training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Curriculum,
    Constant,
}

impl From<Variant> for SweepVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Curriculum => SweepVariant::Curriculum,
            Variant::Constant => SweepVariant::Constant,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gap and spectral report for a pair of embedding files.
    Analyze {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        texts: PathBuf,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Subtract each modality's centroid.
    Center {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        texts: PathBuf,
        #[arg(long)]
        out_images: PathBuf,
        #[arg(long)]
        out_texts: PathBuf,
        /// Project centered rows back onto the unit sphere.
        #[arg(long)]
        renormalize: bool,
    },
    /// Train the toy dual encoder with the three-phase curriculum.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate one model per (alpha_target, seed).
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// Offsets added to the configured seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value = "curriculum")]
        variant: Variant,
        /// Seed-averaged table.
        #[arg(long)]
        out: PathBuf,
        /// Per-seed table; defaults to `<out stem>.runs.csv`.
        #[arg(long)]
        runs_out: Option<PathBuf>,
    },
    /// Least-squares fit between two columns of a sweep table.
    Correlate {
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG scatter of a joint PCA projection.
    Plot {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        texts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Analyze { images, texts, out: path } => {
            commands::analyze(&images, &texts, path.as_deref(), out).map(drop)
        }
        Command::Center {
            images,
            texts,
            out_images,
            out_texts,
            renormalize,
        } => commands::center(&images, &texts, &out_images, &out_texts, renormalize, out).map(drop),
        Command::Train { config, out_dir } => {
            commands::train_cmd(config.as_deref(), &out_dir, out).map(drop)
        }
        Command::Sweep {
            config,
            alphas,
            seeds,
            variant,
            out: path,
            runs_out,
        } => commands::sweep(
            config.as_deref(),
            &alphas,
            &seeds,
            variant.into(),
            &path,
            runs_out.as_deref(),
            None,
            out,
        )
        .map(drop),
        Command::Correlate { sweep, x, y, out: path } => {
            commands::correlate(&sweep, &x, &y, path.as_deref(), out).map(drop)
        }
        Command::Plot { images, texts, out: path } => commands::plot(&images, &texts, &path, out),
    }
}
