//! `reasdet`: augmentation, suppression, evaluation and block checks from the
//! command line.

mod augment;
mod blockcheck;
mod eval;
mod labels;
mod nms;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status for runs that emitted an error diagnostic.
const EXIT_DIAGNOSTIC: u8 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "reasdet",
    version,
    about = "Detector blocks, soft-NMS, mAP and augmentation tools"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "REASDET_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Expand a labelled image directory sevenfold.
    Augment(augment::Args),
    /// Suppress duplicate predictions.
    Nms(nms::Args),
    /// Score predictions against ground-truth labels.
    Eval(eval::Args),
    /// Run shape, invariant and gradient checks on one block.
    Blockcheck(blockcheck::Args),
    /// Print the head shapes of the toy network.
    NetShapes(blockcheck::NetArgs),
}

/// Outcome of a subcommand that ran to completion: `false` means it emitted
/// at least one error diagnostic.
type Outcome = anyhow::Result<bool>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Outcome = match &cli.command {
        Command::Augment(a) => augment::run(a, cli.seed),
        Command::Nms(a) => nms::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Blockcheck(a) => blockcheck::run(a, cli.seed),
        Command::NetShapes(a) => blockcheck::run_net(a, cli.seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_DIAGNOSTIC),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DIAGNOSTIC)
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
