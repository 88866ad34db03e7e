use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, EvalArgs};
use crate::config::{parse_dims, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "nusr", version, about = "Synthetic low-field MRI super-resolution")]
pub struct Cli {
    /// Seed for phantoms, degradation and training; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (or report directory for `eval`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate head-like phantoms (.fgrd plus a .png preview each).
    Phantom {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Build HF / LF / residual triples from a directory of images.
    Degrade {
        input: PathBuf,
        /// Expected input size, e.g. 64x64.
        #[arg(long, value_parser = parse_dims)]
        output_dims: Option<(usize, usize)>,
    },
    /// Split a degraded dataset, train, and report on the validation split.
    Train {
        /// Directory written by `degrade`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve one image with a trained checkpoint.
    Infer {
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
        /// Bilinear resize the input first, e.g. 256x256.
        #[arg(long, value_parser = parse_dims)]
        resize: Option<(usize, usize)>,
    },
    /// PSNR / SSIM of predictions against ground truth, paired by file name.
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        /// Stem suffix stripped from prediction names before pairing.
        #[arg(long, default_value = "")]
        pred_suffix: String,
        /// Stem suffix stripped from ground-truth names before pairing.
        #[arg(long, default_value = "")]
        gt_suffix: String,
        #[arg(long, default_value = "prediction")]
        label: String,
    },
}

fn out_dir(cli: &Cli, cfg: &RunConfig, fallback: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match &cli.command {
        Command::Phantom { count, size } => {
            cfg.phantom.count = count.unwrap_or(cfg.phantom.count);
            cfg.phantom.size = size.unwrap_or(cfg.phantom.size);
            cfg.phantom.validate().map_err(CliError::usage)?;
            commands::phantom(&cfg, &out_dir(cli, &cfg, "phantoms"))
        }
        Command::Degrade { input, output_dims } => {
            if let Some(d) = output_dims {
                cfg.degrade.output_dims = *d;
            }
            cfg.degrade.validate()?;
            commands::degrade(&cfg, input, &out_dir(cli, &cfg, "pairs"))
        }
        Command::Train { data, steps, resume } => {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            let data = data
                .clone()
                .or_else(|| cfg.data_dir.clone())
                .ok_or_else(|| CliError::usage("no dataset: pass --data or set paths.data"))?;
            cfg.validate().map_err(CliError::usage)?;
            commands::train_cmd(&cfg, &data, &out_dir(cli, &cfg, "run"), resume.as_deref())
        }
        Command::Infer {
            checkpoint,
            input,
            output,
            resize,
        } => commands::infer(&cfg, checkpoint, input, output, *resize).map(|_| ()),
        Command::Eval {
            pred_dir,
            gt_dir,
            pred_suffix,
            gt_suffix,
            label,
        } => {
            let args = EvalArgs {
                pred_dir,
                gt_dir,
                pred_suffix,
                gt_suffix,
                label,
            };
            commands::eval(&cfg, &args, &out_dir(cli, &cfg, ".")).map(|_| ())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

