//! Command-line pipeline: generate a synthetic corpus, pre-train the gender
//! discriminator, train the fader (with or without the adversarial loss),
//! evaluate, and aggregate reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fader_core::config::RunConfig;
use fader_core::{pipeline, Error};

#[derive(Parser)]
#[command(name = "fader", version, about = "Attribute disentanglement experiments on speaker embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (CSV and binary forms).
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pre-train the gender discriminator on the corpus.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the fader autoencoder and adversarial classifier.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Ablation: exclude the adversarial loss (weight fixed at 0).
        #[arg(long)]
        no_adversarial: bool,
        /// Continue from this variant's existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run the objective evaluations against trained checkpoints.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding `checkpoints/` (usually the run's out_dir).
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Aggregate evaluation reports found under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Data(_) | Error::Dimension(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn run(command: Command) -> fader_core::Result<()> {
    match command {
        Command::GenData { config } => {
            let config = RunConfig::load(&config)?;
            let corpus = pipeline::gen_data(&config)?;
            println!(
                "wrote corpus of {} utterances from {} speakers to {}",
                corpus.len(),
                corpus.n_speakers(),
                config.out_dir.display()
            );
        }
        Command::Pretrain { config } => {
            let config = RunConfig::load(&config)?;
            let accuracy = pipeline::pretrain(&config)?;
            println!("pre-trained discriminator held-out accuracy: {accuracy:.4}");
        }
        Command::Train { config, no_adversarial, resume } => {
            let config = RunConfig::load(&config)?;
            let result = pipeline::train(&config, !no_adversarial, resume)?;
            let last = result.history.last().expect("at least one epoch");
            println!(
                "trained {} epochs; final losses: L_RC {:.5} L_ACC {:.5} L_ADV {:.5}",
                result.epochs_done, last.reconstruction, last.discriminator, last.adversarial
            );
        }
        Command::Eval { config, ckpt } => {
            let config = RunConfig::load(&config)?;
            let report = pipeline::evaluate(&config, &ckpt)?;
            println!(
                "evaluation written to {}",
                config.out_dir.join(pipeline::REPORT_FILE).display()
            );
            for row in &report.gender_accuracy {
                println!("  accuracy {:13} {:11} {:.4}", row.variant, row.mode, row.accuracy);
            }
            for row in &report.speaker_eer {
                println!("  eer      {:13} {:.4}", row.mode, row.eer);
            }
            for row in &report.mutual_information {
                println!(
                    "  mi       {:13} {:.4} (pc{}, pc{})",
                    row.representation, row.mutual_information, row.pca_pair[0], row.pca_pair[1]
                );
            }
        }
        Command::Report { input, output } => {
            let aggregate = pipeline::report(&input, &output)?;
            println!(
                "aggregated {} report(s) over seeds {:?} into {}",
                aggregate.runs,
                aggregate.seeds,
                output.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
