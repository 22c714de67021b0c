use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use psgmae::core::pipeline::SplitFractions;
use psgmae::workflow::{self, CheckFailed};

/// Masked-autoencoder reconstruction of PSG channels from one input channel.
#[derive(Debug, Parser)]
#[command(name = "psgmae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the header, signals and annotation count of an EDF file.
    Inspect {
        #[arg(long)]
        edf: PathBuf,
    },
    /// Write synthetic recordings and hypnograms.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seconds per subject, a multiple of 30.
        #[arg(long, default_value_t = 360.0)]
        duration: f64,
        /// Standard deviation of the input noise, µV.
        #[arg(long, default_value_t = 5.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
    },
    /// Cut recordings into normalized, labeled epochs and write a dataset.
    Preprocess {
        /// PSG file; repeat for several subjects.
        #[arg(long, required = true)]
        psg: Vec<PathBuf>,
        /// Hypnogram file, one per --psg in the same order.
        #[arg(long, required = true)]
        hypnogram: Vec<PathBuf>,
        #[arg(long)]
        input_channel: String,
        /// Comma-separated target channel labels.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, validation and test fractions.
        #[arg(
            long,
            value_delimiter = ',',
            num_args = 1,
            default_value = "0.7,0.1,0.2"
        )]
        split: Vec<f64>,
    },
    /// Train one model and write metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Per-stage MSE of one or more models on the test split.
    Eval {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report MSE in physical units instead of normalized units.
        #[arg(long)]
        physical: bool,
    },
    /// Export one epoch and its reconstruction as CSV.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epoch_index: usize,
        /// Select the epoch by this subject's epoch number instead of by
        /// position in the cache.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of a tiny model.
    Gradcheck {
        #[arg(long, required = true)]
        tiny: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> anyhow::Result<String> {
    match command {
        Command::Inspect { edf } => workflow::inspect(&edf),
        Command::Synth {
            out,
            seed,
            duration,
            noise_std,
            subjects,
        } => workflow::synth(&out, seed, duration, noise_std, subjects),
        Command::Preprocess {
            psg,
            hypnogram,
            input_channel,
            targets,
            out,
            seed,
            split,
        } => {
            let [a, b, c] = split[..] else {
                anyhow::bail!(
                    "--split needs three comma-separated fractions, got {}",
                    split.len()
                );
            };
            workflow::preprocess(&workflow::PreprocessArgs {
                psg: &psg,
                hypnogram: &hypnogram,
                input_channel: &input_channel,
                targets: &targets,
                out: &out,
                seed,
                split: SplitFractions(a, b, c),
            })
        }
        Command::Train {
            config,
            data,
            out,
            resume,
        } => {
            let started = Instant::now();
            let mut progress = |line: &str| {
                println!("{line}");
                eprintln!("[{:>8.1} s]", started.elapsed().as_secs_f64());
            };
            workflow::train(
                &workflow::TrainArgs {
                    config: &config,
                    data: &data,
                    out: &out,
                    resume: resume.as_deref(),
                },
                &mut progress,
            )
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            physical,
        } => workflow::eval(&workflow::EvalArgs {
            checkpoints: &checkpoint,
            data: &data,
            out: &out,
            physical,
        }),
        Command::Reconstruct {
            checkpoint,
            data,
            epoch_index,
            subject,
            out,
        } => workflow::reconstruct(&workflow::ReconstructArgs {
            checkpoint: &checkpoint,
            data: &data,
            epoch_index,
            subject: subject.as_deref(),
            out: &out,
        }),
        Command::Gradcheck { tiny: _, seed } => workflow::gradcheck(seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => match e.downcast_ref::<CheckFailed>() {
            Some(CheckFailed(text)) => {
                print!("{text}");
                eprintln!("check failed");
                ExitCode::from(1)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        },
    }
}
