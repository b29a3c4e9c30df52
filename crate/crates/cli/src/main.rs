mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use termape::error::{ApeError, ErrorCategory};

use commands::*;

/// Terminology-constrained automatic post-editing toolkit.
///
/// Every subcommand accepts `--config FILE`, a TOML file whose keys are the
/// subcommand's long flag names with dashes replaced by underscores. Flags
/// override the file. The resolved configuration is written next to the
/// output.
#[derive(Parser, Debug)]
#[command(name = "termape", version, about, long_about)]
struct Cli {
    /// TOML configuration file for the chosen subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic lexicon, train/test corpora and terminology files.
    GenSynthetic(GenSyntheticArgs),
    /// Annotate a corpus with constraints mined from a bilingual dictionary.
    MineTerms(MineTermsArgs),
    /// Write the factored model input of every source sentence (`tok|factor`).
    Encode(EncodeArgs),
    /// Learn BPE merges from every column of a corpus.
    BpeTrain(BpeTrainArgs),
    /// Segment (or restore) a sentence-per-line file with learned merges.
    BpeApply(BpeApplyArgs),
    /// Train a post-editor with the two-phase schedule.
    Train(TrainArgs),
    /// Post-edit a test set with a trained checkpoint.
    Postedit(PosteditArgs),
    /// Add synonym/antonym constraint swaps to a training corpus.
    Augment(AugmentArgs),
    /// Build a synonym, antonym or random-word probe set from a test set.
    Probe(ProbeArgs),
    /// Score hypotheses: TER, BLEU and Term%.
    Evaluate(EvaluateArgs),
    /// Evaluate the MT -> APE cascades on a test set.
    Cascade(CascadeArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a, file),
        Command::MineTerms(a) => mine_terms(a, file),
        Command::Encode(a) => encode(a, file),
        Command::BpeTrain(a) => bpe_train(a, file),
        Command::BpeApply(a) => bpe_apply(a, file),
        Command::Train(a) => train(a, file),
        Command::Postedit(a) => postedit(a, file),
        Command::Augment(a) => augment(a, file),
        Command::Probe(a) => probe(a, file),
        Command::Evaluate(a) => evaluate(a, file),
        Command::Cascade(a) => cascade(a, file),
    }
}

fn category(err: &anyhow::Error) -> ErrorCategory {
    err.chain()
        .find_map(|e| e.downcast_ref::<ApeError>())
        .map_or(ErrorCategory::Data, ApeError::category)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let cat = category(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", cat.as_str());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
