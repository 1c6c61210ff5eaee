//! `volseg`: volume-preserving segmentation from the command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 no iterate
//! could be produced.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::LayerArgs;
use config::{RunArgs, RunConfig, VolumeArg};
use error::CliError;

#[derive(Parser)]
#[command(name = "volseg", version, about = "Volume-preserving multiphase image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one or more images.
    Segment(RunArgs),
    /// Segment over a grid of eps, lambda and volume settings.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma list of eps values (defaults to --eps).
        #[arg(long = "eps-list")]
        eps_list: Option<String>,
        /// Comma list of lambda values (defaults to --lambda).
        #[arg(long = "lambda-list")]
        lambda_list: Option<String>,
        /// Semicolon-separated volume settings, e.g. "25,75;65,35;off".
        #[arg(long = "volume-list")]
        volume_list: Option<String>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Generate a synthetic image with ground truth.
    Synth {
        /// circle, two-region, three-level or blob.
        #[arg(long, default_value = "circle")]
        kind: String,
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Variance of the additive Gaussian noise.
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
    /// Export entropic couplings of the 3x10 transport example.
    Fig1 {
        /// Comma list of eps values.
        #[arg(long, default_value = "0.1,1,10")]
        eps: String,
        /// Marginal tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value = "fig1")]
        out: PathBuf,
    },
    /// Run the unrolled layer on a tensor file.
    Layer {
        #[command(subcommand)]
        direction: LayerCommand,
    },
    /// Dice scores of a label image against ground truth.
    Metrics {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "ground-truth")]
        ground_truth: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct LayerFlags {
    /// Logits tensor `phases x height x width`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Unrolled iterations T.
    #[arg(long, default_value_t = 30)]
    depth: usize,
    #[arg(long = "tau-q")]
    tau_q: Option<f64>,
    #[arg(long, default_value = "off")]
    volume: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum LayerCommand {
    /// Write the output probabilities.
    Forward(LayerFlags),
    /// Write the gradient with respect to the logits.
    Backward {
        #[command(flatten)]
        flags: LayerFlags,
        /// Upstream gradient with the same shape as the output.
        #[arg(long)]
        grad: PathBuf,
    },
}

impl LayerFlags {
    fn resolve(&self) -> Result<LayerArgs, CliError> {
        Ok(LayerArgs {
            input: self.input.clone(),
            eps: self.eps,
            lambda: self.lambda,
            depth: self.depth,
            tau_q: self.tau_q,
            volume: self.volume.parse()?,
            out: self.out.clone(),
        })
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Segment(args) => commands::cmd_segment(&RunConfig::resolve(&args)?),
        Command::Sweep {
            run,
            eps_list,
            lambda_list,
            volume_list,
            jobs,
        } => {
            let cfg = RunConfig::resolve(&run)?;
            let eps = match eps_list {
                Some(s) => commands::float_list(&s)?,
                None => vec![cfg.eps],
            };
            let lambda = match lambda_list {
                Some(s) => commands::float_list(&s)?,
                None => vec![cfg.lambda],
            };
            let volumes = match volume_list {
                Some(s) => s.split(';').map(str::parse).collect::<Result<Vec<VolumeArg>, _>>()?,
                None => vec![cfg.volume.clone()],
            };
            commands::cmd_sweep(&cfg, &eps, &lambda, &volumes, jobs)
        }
        Command::Synth {
            kind,
            size,
            noise,
            seed,
            out,
        } => commands::cmd_synth(&kind, size, noise, seed, &out),
        Command::Fig1 { eps, tol, out } => commands::cmd_fig1(&commands::float_list(&eps)?, tol, &out),
        Command::Layer { direction } => match direction {
            LayerCommand::Forward(flags) => commands::cmd_layer_forward(&flags.resolve()?),
            LayerCommand::Backward { flags, grad } => commands::cmd_layer_backward(&flags.resolve()?, &grad),
        },
        Command::Metrics {
            labels,
            ground_truth,
            out,
        } => commands::cmd_metrics(&labels, &ground_truth, out.as_deref()),
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
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("volseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
