use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use miztex::corpus::{self, SplitSizes};
use miztex::evaluation::{self, EvalReport, DEFAULT_BUCKETS};
use miztex::lexing::{self, Language, MarkupFilter, SymbolTable, TokenSequence};
use miztex::model::{self, Checkpoint, Direction, HyperParams};
use miztex::training::{self, TrainEvent, TrainOptions};

use crate::{
    AlignArgs, CoverArgs, EvaluateArgs, InferArgs, SplitArgs, TokenizeArgs, TrainArgs, VocabArgs,
};

const OK: ExitCode = ExitCode::SUCCESS;
const EXIT_DIVERGED: u8 = 4;

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_file(path)?.lines().map(|l| l.trim_end_matches('\r').to_owned()).collect())
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn load_symbols(path: &Path) -> Result<SymbolTable> {
    SymbolTable::parse(&read_file(path)?)
        .with_context(|| format!("parsing symbol table {}", path.display()))
}

fn load_sequences(path: &Path, language: Language) -> Result<Vec<TokenSequence>> {
    Ok(read_lines(path)?
        .iter()
        .map(|line| TokenSequence::from_line(line, language))
        .collect())
}

fn load_flags(path: &Path, expected: usize) -> Result<Vec<bool>> {
    let lines = read_lines(path)?;
    if lines.len() != expected {
        bail!(
            "{}: expected {expected} overlap flags, found {}",
            path.display(),
            lines.len()
        );
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| match line.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => bail!("{}:{}: bad overlap flag {other:?}", path.display(), i + 1),
        })
        .collect()
}

pub(crate) fn tokenize(args: TokenizeArgs) -> Result<ExitCode> {
    let lines = read_lines(&args.input)?;
    let mut out = String::new();
    match args.side {
        Language::Mizar => {
            let table = load_symbols(args.symbols.as_ref().expect("enforced by clap"))?;
            for (i, line) in lines.iter().enumerate() {
                let tokens = lexing::tokenize_mizar(line, &table).map_err(|err| {
                    diagnostic(&args.input, i + 1, line, &err)
                })?;
                let _ = writeln!(out, "{}", tokens.joined());
            }
        }
        Language::Latex => {
            let filter = MarkupFilter::default();
            for (i, line) in lines.iter().enumerate() {
                let stripped = if args.keep_markup {
                    line.clone()
                } else {
                    lexing::strip_markup(line, &filter)
                        .map_err(|err| diagnostic(&args.input, i + 1, line, &err))?
                };
                let _ = writeln!(out, "{}", lexing::tokenize_latex(&stripped).joined());
            }
        }
    }
    write_file(&args.output, &out)?;
    Ok(OK)
}

/// One-line, machine-parseable lexing diagnostic with line and column.
fn diagnostic(
    path: &Path,
    line_no: usize,
    _line: &str,
    err: &lexing::LexError,
) -> anyhow::Error {
    let column = match err {
        lexing::LexError::UnknownCharacter { position, .. }
        | lexing::LexError::UnbalancedBraces { position } => position + 1,
        lexing::LexError::InvalidTableEntry { .. } => 1,
    };
    anyhow::anyhow!("{}:{line_no}:{column}: {err}", path.display())
}

pub(crate) fn align(args: AlignArgs) -> Result<ExitCode> {
    let latex = corpus::parse_tagged(&read_file(&args.latex)?)
        .with_context(|| format!("parsing {}", args.latex.display()))?;
    let mizar = corpus::parse_tagged(&read_file(&args.mizar)?)
        .with_context(|| format!("parsing {}", args.mizar.display()))?;
    let table = load_symbols(&args.symbols)?;
    let (pairs, stats) =
        corpus::align_by_position(&latex, &mizar, &table, &MarkupFilter::default())?;

    write_file(&args.output_dir.join("corpus.latex"), &corpus::render_side(&pairs, Language::Latex))?;
    write_file(&args.output_dir.join("corpus.mizar"), &corpus::render_side(&pairs, Language::Mizar))?;
    if let Some(pos) = corpus::render_positions(&pairs) {
        write_file(&args.output_dir.join("corpus.pos"), &pos)?;
    }
    eprintln!(
        "aligned {} pairs (unmatched latex {}, unmatched mizar {}, empty {})",
        stats.matched, stats.unmatched_latex, stats.unmatched_mizar, stats.empty_sides
    );
    Ok(OK)
}

pub(crate) fn split(args: SplitArgs) -> Result<ExitCode> {
    let pairs = corpus::read_parallel(&read_file(&args.latex)?, &read_file(&args.mizar)?)?;
    let sizes = SplitSizes {
        train: args.train,
        dev: args.dev,
        test: args.test,
        inference: args.inference,
    };
    let split = corpus::split_corpus(pairs, sizes, args.seed)?;

    let dir = &args.output_dir;
    for (name, part) in [
        ("train", &split.train),
        ("dev", &split.dev),
        ("test", &split.test),
        ("inference", &split.inference),
    ] {
        write_file(&dir.join(format!("{name}.latex")), &corpus::render_side(part, Language::Latex))?;
        write_file(&dir.join(format!("{name}.mizar")), &corpus::render_side(part, Language::Mizar))?;
    }
    if !split.inference.is_empty() {
        let overlap = corpus::compute_overlap(&split.train, &split.inference);
        let mut text = String::new();
        for flag in &overlap.flags {
            let _ = writeln!(text, "{}", if *flag { 1 } else { 0 });
        }
        write_file(&dir.join("inference.overlap"), &text)?;
        eprintln!(
            "split {}/{}/{}/{} pairs; {} of {} inference latex sides overlap train",
            split.train.len(),
            split.dev.len(),
            split.test.len(),
            split.inference.len(),
            overlap.count,
            split.inference.len()
        );
    } else {
        eprintln!(
            "split {}/{}/{}/0 pairs",
            split.train.len(),
            split.dev.len(),
            split.test.len()
        );
    }
    Ok(OK)
}

pub(crate) fn vocab(args: VocabArgs) -> Result<ExitCode> {
    let sequences = load_sequences(&args.input, Language::Latex)?;
    let vocab = corpus::build_vocab(&sequences);
    write_file(&args.output, &vocab.render())?;
    eprintln!("{} tokens ({} corpus + 3 specials)", vocab.len(), vocab.len() - 3);
    Ok(OK)
}

fn read_corpus_part(dir: &Path, stem: &str) -> Result<Vec<corpus::SentencePair>> {
    let latex = dir.join(format!("{stem}.latex"));
    let mizar = dir.join(format!("{stem}.mizar"));
    if !latex.exists() || !mizar.exists() {
        return Ok(Vec::new());
    }
    Ok(corpus::read_parallel(&read_file(&latex)?, &read_file(&mizar)?)?)
}

pub(crate) fn train(args: TrainArgs) -> Result<ExitCode> {
    if args.src == args.tgt {
        bail!("--src and --tgt must name different sides");
    }
    let hp = HyperParams {
        unit_type: args.unit_type,
        attention: args.attention,
        num_layers: args.num_layers,
        residual: args.residual,
        optimizer: args.optimizer,
        encoder_type: args.encoder_type,
        num_units: args.num_units,
        dropout: args.dropout,
        forget_bias: args.forget_bias,
        learning_rate: args
            .learning_rate
            .unwrap_or_else(|| HyperParams::default_learning_rate(args.optimizer)),
        batch_size: args.batch_size,
        train_steps: args.train_steps,
        seed: args.seed,
        clip_norm: args.clip_norm,
        max_src_len: args.max_src_len,
        max_tgt_len: args.max_tgt_len,
    };
    hp.validate()?;

    let train_pairs = read_corpus_part(&args.corpus_dir, "train")?;
    if train_pairs.is_empty() {
        bail!("no training corpus at {}/train.{{latex,mizar}}", args.corpus_dir.display());
    }
    let dev_pairs = read_corpus_part(&args.corpus_dir, "dev")?;
    let corpus = corpus::CorpusSplit {
        train: train_pairs,
        dev: dev_pairs,
        test: Vec::new(),
        inference: Vec::new(),
        seed: args.seed,
    };
    let direction = Direction { src: args.src, tgt: args.tgt };
    let opts = TrainOptions {
        direction,
        snapshot_every: args.snapshot_every,
        inject_nan_at_step: args.inject_nan_at,
    };

    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))?;
    let log_path = args.output_dir.join("train.log");
    let mut log = fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;

    // Buffer each step line so a snapshot in the same step can append its
    // dev perplexity before the line is flushed.
    let mut pending: Option<String> = None;
    let outcome = training::train(&corpus, &hp, &opts, |event| match event {
        TrainEvent::Step { step, loss } => {
            if let Some(line) = pending.take() {
                let _ = writeln!(log, "{line}");
            }
            pending = Some(format!("step {step} loss {loss}"));
        }
        TrainEvent::Snapshot { dev_ppl, .. } => {
            if let (Some(line), Some(ppl)) = (&mut pending, dev_ppl) {
                let _ = write!(line, " dev_ppl {ppl}");
            }
        }
    })?;
    if let Some(line) = pending.take() {
        let _ = writeln!(log, "{line}");
    }
    drop(log);

    // Write snapshots and the final checkpoint with the real vocabularies.
    let make_checkpoint = |params: &model::ModelParams| Checkpoint {
        hp: hp.clone(),
        src_lang: direction.src,
        tgt_lang: direction.tgt,
        vocab_src: outcome.vocab_src.clone(),
        vocab_tgt: outcome.vocab_tgt.clone(),
        params: params.clone(),
    };
    for snapshot in &outcome.snapshots {
        let path = args.output_dir.join(format!("snapshot-{}", snapshot.step));
        write_file(&path, &make_checkpoint(&snapshot.params).render())?;
    }
    write_file(
        &args.output_dir.join("checkpoint"),
        &make_checkpoint(&outcome.state.params).render(),
    )?;

    let last_loss = outcome.state.history.last().map(|h| h.train_loss);
    eprintln!(
        "trained {} steps ({} snapshots, {} long pairs skipped), final loss {:?}, diverged {}",
        outcome.state.step,
        outcome.snapshots.len(),
        outcome.skipped_long,
        last_loss,
        outcome.diverged
    );
    Ok(if outcome.diverged { ExitCode::from(EXIT_DIVERGED) } else { OK })
}

pub(crate) fn infer(args: InferArgs) -> Result<ExitCode> {
    let checkpoint = Checkpoint::parse(&read_file(&args.checkpoint)?)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let max_len = args.max_len.unwrap_or(checkpoint.hp.max_tgt_len);
    let lines = read_lines(&args.input)?;

    let mut hyps = String::new();
    let mut logprob_lines = String::new();
    for line in &lines {
        if line.split_whitespace().next().is_none() {
            hyps.push('\n');
            logprob_lines.push('\n');
            continue;
        }
        let seq = TokenSequence::from_line(line, checkpoint.src_lang);
        let mut ids = checkpoint.vocab_src.encode(&seq);
        ids.truncate(checkpoint.hp.max_src_len);
        let out = model::greedy_decode(&ids, &checkpoint.hp, &checkpoint.params, max_len)?;
        let tokens = checkpoint.vocab_tgt.decode(&out.ids, checkpoint.tgt_lang);
        let _ = writeln!(hyps, "{}", tokens.joined());
        let mut first = true;
        for lp in &out.logprobs {
            if !first {
                logprob_lines.push(' ');
            }
            let _ = write!(logprob_lines, "{lp}");
            first = false;
        }
        logprob_lines.push('\n');
    }
    write_file(&args.output, &hyps)?;
    if let Some(path) = &args.logprobs {
        write_file(path, &logprob_lines)?;
    }
    Ok(OK)
}

fn parse_logprob_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .with_context(|| format!("{}:{}: bad logprob {tok:?}", path.display(), i + 1))
                })
                .collect()
        })
        .collect()
}

pub(crate) fn evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let hyps = load_sequences(&args.hypotheses, Language::Mizar)?;
    let refs = load_sequences(&args.references, Language::Mizar)?;
    let flags = match &args.overlap_flags {
        Some(path) => load_flags(path, refs.len())?,
        None => {
            eprintln!("no overlap flags supplied; treating every item as non-overlapping");
            vec![false; refs.len()]
        }
    };
    let perplexity = match &args.logprobs {
        Some(path) => Some(evaluation::perplexity(&parse_logprob_file(path)?)?),
        None => None,
    };
    let report = EvalReport {
        model_id: args.model_id.clone(),
        perplexity,
        bleu: evaluation::bleu(&hyps, &refs)?,
        identical: evaluation::exact_match(&hyps, &refs, &flags)?,
        buckets: evaluation::distance_buckets(&[&hyps], &refs, &flags, &DEFAULT_BUCKETS)?,
    };
    let text = if args.table {
        format!("{}\n{}\n", EvalReport::table_header(), report.render_table_row())
    } else {
        report.render()
    };
    match &args.output {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(OK)
}

pub(crate) fn cover(args: CoverArgs) -> Result<ExitCode> {
    let refs = load_sequences(&args.references, Language::Mizar)?;
    let flags = match &args.overlap_flags {
        Some(path) => load_flags(path, refs.len())?,
        None => vec![false; refs.len()],
    };

    let ids: Vec<String> = if args.model_ids.is_empty() {
        let stems: Vec<String> = args
            .hypotheses
            .iter()
            .map(|p| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect();
        let unique: BTreeSet<&String> = stems.iter().collect();
        if unique.len() != stems.len() {
            bail!("hypothesis file stems are not unique; pass --model-ids");
        }
        stems
    } else if args.model_ids.len() == args.hypotheses.len() {
        args.model_ids.clone()
    } else {
        bail!(
            "{} model ids given for {} hypothesis files",
            args.model_ids.len(),
            args.hypotheses.len()
        );
    };

    let mut correct: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut all_hyps: BTreeMap<String, Vec<TokenSequence>> = BTreeMap::new();
    for (id, path) in ids.iter().zip(&args.hypotheses) {
        let hyps = load_sequences(path, Language::Mizar)?;
        correct.insert(id.clone(), evaluation::correct_set(&hyps, &refs)?);
        all_hyps.insert(id.clone(), hyps);
    }

    let cover = evaluation::greedy_cover(&correct, args.top);
    let union = evaluation::union_cover(&correct, refs.len(), &flags);

    let mut text = String::new();
    let _ = writeln!(text, "cover_requested {}", args.top);
    let mut cumulative = 0usize;
    for (id, gain) in cover.chosen_models.iter().zip(&cover.marginal_gains) {
        cumulative += gain;
        let _ = writeln!(text, "chosen {id} gain {gain} covered {cumulative}");
    }
    let _ = writeln!(
        text,
        "union {} {:.2} {:.2}",
        union.count, union.percent_total, union.percent_no_overlap
    );
    if !cover.chosen_models.is_empty() {
        let chosen_hyps: Vec<&[TokenSequence]> =
            cover.chosen_models.iter().map(|id| all_hyps[id].as_slice()).collect();
        let buckets =
            evaluation::distance_buckets(&chosen_hyps, &refs, &flags, &DEFAULT_BUCKETS)?;
        for (k, entry) in &buckets {
            let _ = writeln!(
                text,
                "dist_le_{k} {:.2} {:.2}",
                entry.percent_total, entry.percent_no_overlap
            );
        }
    }
    match &args.output {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(OK)
}
