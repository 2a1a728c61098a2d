//! Command-line pipeline driver: tokenize, align, split, vocab, train,
//! infer, evaluate, cover.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 training
//! divergence.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use miztex::lexing::Language;
use miztex::model::{AttentionKind, EncoderType, OptimizerKind, UnitType};

#[derive(Parser)]
#[command(name = "miztex", version, about = "LaTeX/Mizar translation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize one side of a corpus, one sentence per line.
    Tokenize(TokenizeArgs),
    /// Pair position-tagged LaTeX and Mizar formula files into a corpus.
    Align(AlignArgs),
    /// Shuffle an aligned corpus and cut it into train/dev/test/inference.
    Split(SplitArgs),
    /// Collect the vocabulary of a tokenized file.
    Vocab(VocabArgs),
    /// Train a translation model and write checkpoints and snapshots.
    Train(TrainArgs),
    /// Greedy-decode a tokenized source file with a trained checkpoint.
    Infer(InferArgs),
    /// Score hypotheses against references and write an evaluation report.
    Evaluate(EvaluateArgs),
    /// Order models by marginal gain of correct translations.
    Cover(CoverArgs),
}

#[derive(Args)]
struct TokenizeArgs {
    /// Which tokenizer to run.
    #[arg(long, value_parser = parse_language)]
    side: Language,
    /// Input file, one raw sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Output file, one tokenized sentence per line.
    #[arg(long)]
    output: PathBuf,
    /// Symbol table file (required for the mizar side).
    #[arg(long, required_if_eq("side", "mizar"))]
    symbols: Option<PathBuf>,
    /// Skip markup stripping on the latex side.
    #[arg(long)]
    keep_markup: bool,
}

#[derive(Args)]
struct AlignArgs {
    /// Position-tagged LaTeX file: `line column text` per line.
    #[arg(long)]
    latex: PathBuf,
    /// Position-tagged Mizar file: `line column text` per line.
    #[arg(long)]
    mizar: PathBuf,
    #[arg(long)]
    symbols: PathBuf,
    /// Directory for corpus.latex / corpus.mizar / corpus.pos.
    #[arg(long, env = "MIZTEX_OUTPUT_DIR")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Tokenized LaTeX side, line-aligned with --mizar.
    #[arg(long)]
    latex: PathBuf,
    #[arg(long)]
    mizar: PathBuf,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    dev: usize,
    #[arg(long)]
    test: usize,
    #[arg(long)]
    inference: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for train.* / dev.* / test.* / inference.* files.
    #[arg(long, env = "MIZTEX_OUTPUT_DIR")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct VocabArgs {
    /// Tokenized input file.
    #[arg(long)]
    input: PathBuf,
    /// Vocabulary output, one token per line, specials first.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory produced by `split` (train.latex, train.mizar, dev.*).
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Source language side.
    #[arg(long, default_value = "latex", value_parser = parse_language)]
    src: Language,
    /// Target language side.
    #[arg(long, default_value = "mizar", value_parser = parse_language)]
    tgt: Language,
    /// Directory for checkpoint, snapshot-<step> files and train.log.
    #[arg(long, env = "MIZTEX_OUTPUT_DIR")]
    output_dir: PathBuf,

    #[arg(long, default_value = "lstm", value_parser = parse_enum::<UnitType>)]
    unit_type: UnitType,
    #[arg(long, default_value = "none", value_parser = parse_enum::<AttentionKind>)]
    attention: AttentionKind,
    #[arg(long, default_value_t = 2)]
    num_layers: usize,
    #[arg(long)]
    residual: bool,
    #[arg(long, default_value = "sgd", value_parser = parse_enum::<OptimizerKind>)]
    optimizer: OptimizerKind,
    #[arg(long, default_value = "unidirectional", value_parser = parse_enum::<EncoderType>)]
    encoder_type: EncoderType,
    #[arg(long, default_value_t = 128)]
    num_units: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 1.0)]
    forget_bias: f64,
    /// Defaults to 1.0 for sgd and 0.001 for adam.
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 12000)]
    train_steps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 50)]
    max_src_len: usize,
    #[arg(long, default_value_t = 50)]
    max_tgt_len: usize,
    /// Snapshot cadence in steps.
    #[arg(long, default_value_t = 1000)]
    snapshot_every: u64,
    /// Fault-injection hook: poison the gradients at this step.
    #[arg(long, hide = true)]
    inject_nan_at: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint or snapshot file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tokenized source file, one sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Hypotheses output, line-aligned with the input.
    #[arg(long)]
    output: PathBuf,
    /// Optional sidecar with per-token log-probabilities per line.
    #[arg(long)]
    logprobs: Option<PathBuf>,
    /// Decode length cap; defaults to the checkpoint's max target length.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    hypotheses: PathBuf,
    #[arg(long)]
    references: PathBuf,
    /// Overlap flags from `split` (one 0/1 per line).
    #[arg(long)]
    overlap_flags: Option<PathBuf>,
    /// Log-probability sidecar from `infer`; enables the perplexity field.
    #[arg(long)]
    logprobs: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    model_id: String,
    /// Report file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Render one experiment-table row instead of the key/value report.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct CoverArgs {
    /// Hypothesis files, one per model.
    #[arg(long, num_args = 1.., required = true)]
    hypotheses: Vec<PathBuf>,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    overlap_flags: Option<PathBuf>,
    /// How many models to select greedily.
    #[arg(long, short = 'n', default_value_t = 5)]
    top: usize,
    /// Model ids, comma separated; file stems when omitted.
    #[arg(long, value_delimiter = ',')]
    model_ids: Vec<String>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_language(s: &str) -> Result<Language, String> {
    s.parse()
}

fn parse_enum<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tokenize(args) => commands::tokenize(args),
        Command::Align(args) => commands::align(args),
        Command::Split(args) => commands::split(args),
        Command::Vocab(args) => commands::vocab(args),
        Command::Train(args) => commands::train(args),
        Command::Infer(args) => commands::infer(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Cover(args) => commands::cover(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}
