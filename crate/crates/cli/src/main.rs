use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use commands::CliError;

/// Subword segmental language modelling toolkit.
#[derive(Parser, Debug)]
#[command(name = "sslm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a subword lexicon from a corpus.
    BuildLexicon(BuildLexiconArgs),
    /// Train an SSLM or a baseline language model.
    Train(TrainArgs),
    /// Segment text with a trained SSLM, a BPE or ULM model file.
    Segment(SegmentArgs),
    /// Score segmentations against a gold file and/or report BPC.
    Eval(EvalArgs),
    /// Train or apply a baseline segmenter.
    #[command(subcommand)]
    Baseline(BaselineCommand),
}

#[derive(Args, Debug)]
struct BuildLexiconArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Number of entries (V).
    #[arg(long, default_value_t = 1000)]
    size: usize,
    /// Longest entry in characters (L).
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    min_char_count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset used as the starting point.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Use this lexicon instead of building one from the training corpus.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Checkpoint of the best validation epoch.
    #[arg(long)]
    out: PathBuf,
    /// Training log; stdout when absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Hyphen,
    Json,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// SSLM checkpoint, BPE model or ULM model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Hyphen)]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Gold segmentations, `word<TAB>m1-m2-...` per line.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Pre-segmented predictions, one hyphenated word per line.
    #[arg(long, conflicts_with = "model")]
    predictions: Option<PathBuf>,
    /// Model that segments the gold words (SSLM checkpoint, BPE or ULM model).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Text to report BPC on; needs a language-model checkpoint.
    #[arg(long)]
    bpc: Option<PathBuf>,
    /// Gold morphs are canonical forms to project onto the surface word.
    #[arg(long)]
    canonical: bool,
    #[arg(long, default_value_t = 0.5)]
    max_substitution_rate: f64,
    #[arg(long, default_value = "micro")]
    averaging: String,
}

#[derive(Subcommand, Debug)]
enum BaselineCommand {
    /// Learn BPE merges.
    Bpe(BpeArgs),
    /// Learn a unigram LM vocabulary.
    Ulm(UlmArgs),
    /// Segment with entropy peaks of a character LM.
    Entropy(EntropyArgs),
}

#[derive(Args, Debug)]
struct BpeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1000)]
    merges: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UlmArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Target number of pieces.
    #[arg(long, default_value_t = 1000)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    max_piece_len: usize,
    #[arg(long, default_value_t = 5000)]
    seed_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EntropyArgs {
    /// Character LM checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// spike, increase or stddev.
    #[arg(long)]
    criterion: String,
    /// Statistics for stddev: line or word.
    #[arg(long, default_value = "line")]
    scope: String,
    #[arg(long, value_enum, default_value_t = Format::Hyphen)]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildLexicon(a) => commands::build_lexicon(a),
        Command::Train(a) => commands::train(a),
        Command::Segment(a) => commands::segment(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(BaselineCommand::Bpe(a)) => commands::baseline_bpe(a),
        Command::Baseline(BaselineCommand::Ulm(a)) => commands::baseline_ulm(a),
        Command::Baseline(BaselineCommand::Entropy(a)) => commands::baseline_entropy(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SSLM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sslm: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
