//! Aligned-corpus construction: position-based alignment, seeded splitting,
//! vocabulary files, and train/inference overlap statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

use crate::lexing::{self, Language, LexError, MarkupFilter, SymbolTable, TokenSequence};
use crate::rng::Rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("two entries share position {0}")]
    DuplicatePosition(Position),
    #[error("split sizes sum to {requested} but corpus has {available} pairs")]
    SizeMismatch { requested: usize, available: usize },
    #[error("parallel corpus files differ in length ({latex} latex vs {mizar} mizar lines)")]
    UnalignedFiles { latex: usize, mizar: usize },
    #[error("bad position line {line}: {reason}")]
    BadPositionLine { line: usize, reason: String },
    #[error(transparent)]
    Lex(#[from] LexError),
}

/// Starting position (line and column) of a formula in its source article.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// One aligned (LaTeX, Mizar) sentence pair. Both sides are non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub latex: TokenSequence,
    pub mizar: TokenSequence,
    pub position: Option<Position>,
}

impl SentencePair {
    pub fn new(latex: TokenSequence, mizar: TokenSequence) -> Self {
        debug_assert!(!latex.is_empty() && !mizar.is_empty());
        SentencePair { latex, mizar, position: None }
    }
}

/// Counts of entries dropped during alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlignStats {
    pub matched: usize,
    pub unmatched_latex: usize,
    pub unmatched_mizar: usize,
    /// Matched pairs discarded because a side tokenized to nothing.
    pub empty_sides: usize,
}

/// Pair up raw LaTeX and Mizar formulas that carry equal (line, column)
/// position tags. The LaTeX side is markup-stripped and tokenized, the Mizar
/// side tokenized against `table`. Unmatched entries are dropped and counted.
pub fn align_by_position(
    tagged_latex: &[(Position, String)],
    mizar_source: &[(Position, String)],
    table: &SymbolTable,
    filter: &MarkupFilter,
) -> Result<(Vec<SentencePair>, AlignStats), CorpusError> {
    let mut mizar_at: BTreeMap<Position, &str> = BTreeMap::new();
    for (pos, text) in mizar_source {
        if mizar_at.insert(*pos, text).is_some() {
            return Err(CorpusError::DuplicatePosition(*pos));
        }
    }
    let mut seen_latex: HashSet<Position> = HashSet::new();
    let mut stats = AlignStats::default();
    let mut pairs = Vec::new();
    let mut matched_positions: HashSet<Position> = HashSet::new();
    for (pos, raw_latex) in tagged_latex {
        if !seen_latex.insert(*pos) {
            return Err(CorpusError::DuplicatePosition(*pos));
        }
        let Some(raw_mizar) = mizar_at.get(pos) else {
            stats.unmatched_latex += 1;
            continue;
        };
        matched_positions.insert(*pos);
        let stripped = lexing::strip_markup(raw_latex, filter)?;
        let latex = lexing::tokenize_latex(&stripped);
        let mizar = lexing::tokenize_mizar(raw_mizar, table)?;
        if latex.is_empty() || mizar.is_empty() {
            stats.empty_sides += 1;
            continue;
        }
        stats.matched += 1;
        pairs.push(SentencePair { latex, mizar, position: Some(*pos) });
    }
    stats.unmatched_mizar = mizar_source.len() - matched_positions.len();
    Ok((pairs, stats))
}

/// Requested cardinalities for the four corpus parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub inference: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test + self.inference
    }
}

/// A seeded partition of the corpus into train/dev/test/inference parts.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
    pub inference: Vec<SentencePair>,
    pub seed: u64,
}

/// Shuffle `pairs` with the seeded generator and cut the result in order
/// train/dev/test/inference. Deterministic in (input order, sizes, seed).
pub fn split_corpus(
    pairs: Vec<SentencePair>,
    sizes: SplitSizes,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    if sizes.total() != pairs.len() {
        return Err(CorpusError::SizeMismatch {
            requested: sizes.total(),
            available: pairs.len(),
        });
    }
    let mut pairs = pairs;
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut pairs);

    let mut rest = pairs;
    let train = rest.drain(..sizes.train).collect();
    let dev = rest.drain(..sizes.dev).collect();
    let test = rest.drain(..sizes.test).collect();
    let inference = rest;
    Ok(CorpusSplit { train, dev, test, inference, seed })
}

pub const UNK: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;

pub const UNK_TOKEN: &str = "<unk>";
pub const SOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Token inventory of one language side. The three specials occupy ids
/// 0, 1, 2, followed by corpus tokens in first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let tokens = vec![UNK_TOKEN.to_owned(), SOS_TOKEN.to_owned(), EOS_TOKEN.to_owned()];
        let index = tokens.iter().cloned().zip(0..).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the specials are always present
    }

    /// Id for a token, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.tokens().iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize], language: Language) -> TokenSequence {
        let tokens = ids.iter().map(|&id| self.tokens[id].clone()).collect();
        TokenSequence::new(tokens, language)
    }

    /// One token per line, specials first.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let mut vocab = Vocabulary::with_specials();
        for line in text.lines() {
            let tok = line.trim_end_matches('\r');
            if tok.is_empty() || vocab.index.contains_key(tok) {
                continue;
            }
            vocab.index.insert(tok.to_owned(), vocab.tokens.len());
            vocab.tokens.push(tok.to_owned());
        }
        vocab
    }
}

/// Collect the vocabulary of a token-sequence stream: specials followed by
/// unique tokens in first-occurrence order.
pub fn build_vocab<'a>(sentences: impl IntoIterator<Item = &'a TokenSequence>) -> Vocabulary {
    let mut vocab = Vocabulary::with_specials();
    for seq in sentences {
        for tok in seq.tokens() {
            if !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.clone(), vocab.tokens.len());
                vocab.tokens.push(tok.clone());
            }
        }
    }
    vocab
}

/// Overlap of inference LaTeX sides with the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapResult {
    /// `flags[i]` is true iff inference pair i's LaTeX side occurs in train.
    pub flags: Vec<bool>,
    pub count: usize,
}

/// Flag every inference pair whose joined LaTeX side occurs as a LaTeX side
/// anywhere in the training set. Mizar sides are ignored.
pub fn compute_overlap(train: &[SentencePair], inference: &[SentencePair]) -> OverlapResult {
    let train_latex: HashSet<String> = train.iter().map(|p| p.latex.joined()).collect();
    let flags: Vec<bool> =
        inference.iter().map(|p| train_latex.contains(&p.latex.joined())).collect();
    let count = flags.iter().filter(|&&f| f).count();
    OverlapResult { flags, count }
}

/// Render one side of a corpus as tokenized lines.
pub fn render_side(pairs: &[SentencePair], language: Language) -> String {
    let mut out = String::new();
    for p in pairs {
        let side = match language {
            Language::Latex => &p.latex,
            Language::Mizar => &p.mizar,
        };
        let _ = writeln!(out, "{}", side.joined());
    }
    out
}

/// Render the optional position sidecar (`line column` per pair).
pub fn render_positions(pairs: &[SentencePair]) -> Option<String> {
    if pairs.iter().any(|p| p.position.is_none()) {
        return None;
    }
    let mut out = String::new();
    for p in pairs {
        let pos = p.position.unwrap();
        let _ = writeln!(out, "{} {}", pos.line, pos.column);
    }
    Some(out)
}

/// Read two parallel tokenized files back into sentence pairs.
pub fn read_parallel(
    latex_text: &str,
    mizar_text: &str,
) -> Result<Vec<SentencePair>, CorpusError> {
    let latex: Vec<&str> = latex_text.lines().collect();
    let mizar: Vec<&str> = mizar_text.lines().collect();
    if latex.len() != mizar.len() {
        return Err(CorpusError::UnalignedFiles { latex: latex.len(), mizar: mizar.len() });
    }
    Ok(latex
        .into_iter()
        .zip(mizar)
        .map(|(l, m)| SentencePair {
            latex: TokenSequence::from_line(l, Language::Latex),
            mizar: TokenSequence::from_line(m, Language::Mizar),
            position: None,
        })
        .collect())
}

/// Parse a position-tagged formula file: each line is `line column text`.
pub fn parse_tagged(text: &str) -> Result<Vec<(Position, String)>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ' ');
        let (l, c, rest) = (parts.next(), parts.next(), parts.next());
        let parse_u32 = |s: Option<&str>, what: &str| -> Result<u32, CorpusError> {
            s.and_then(|v| v.parse::<u32>().ok()).ok_or_else(|| CorpusError::BadPositionLine {
                line: lineno + 1,
                reason: format!("missing or non-numeric {what}"),
            })
        };
        let position = Position { line: parse_u32(l, "line")?, column: parse_u32(c, "column")? };
        let text = rest
            .ok_or_else(|| CorpusError::BadPositionLine {
                line: lineno + 1,
                reason: "missing formula text".into(),
            })?
            .to_owned();
        out.push((position, text));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> SymbolTable {
        SymbolTable::new(
            vec!["c=", "&", ";", "(", ")", "+", "="],
            Vec::new(),
            vec!["is", "implies"],
        )
        .unwrap()
    }

    fn pair(latex: &str, mizar: &str) -> SentencePair {
        SentencePair::new(
            TokenSequence::from_line(latex, Language::Latex),
            TokenSequence::from_line(mizar, Language::Mizar),
        )
    }

    #[test]
    fn align_golden_pair() {
        let pos = Position { line: 3, column: 1 };
        let latex = vec![(pos, "If $X \\subseteq Y \\subseteq Z$, then $X \\subseteq Z$.".to_owned())];
        let mizar = vec![(pos, "X c= Y & Y c= Z implies X c= Z;".to_owned())];
        let (pairs, stats) =
            align_by_position(&latex, &mizar, &table(), &MarkupFilter::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(stats, AlignStats { matched: 1, ..Default::default() });
        assert_eq!(
            pairs[0].latex.joined(),
            "If $ X \\subseteq Y \\subseteq Z $ , then $ X \\subseteq Z $ ."
        );
        assert_eq!(pairs[0].mizar.joined(), "X c= Y & Y c= Z implies X c= Z ;");
        assert_eq!(pairs[0].position, Some(pos));
    }

    #[test]
    fn align_empty_inputs() {
        let (pairs, stats) =
            align_by_position(&[], &[], &table(), &MarkupFilter::default()).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats, AlignStats::default());
    }

    #[test]
    fn align_drops_unmatched() {
        let p1 = Position { line: 1, column: 1 };
        let p2 = Position { line: 2, column: 5 };
        let latex = vec![(p1, "$x = y$".to_owned()), (p2, "$y = z$".to_owned())];
        let mizar = vec![(p1, "x = y;".to_owned())];
        let (pairs, stats) =
            align_by_position(&latex, &mizar, &table(), &MarkupFilter::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(stats.matched, 1);
        assert_eq!(stats.unmatched_latex, 1);
        assert_eq!(stats.unmatched_mizar, 0);
    }

    #[test]
    fn align_rejects_duplicate_position() {
        let p = Position { line: 1, column: 1 };
        let mizar = vec![(p, "x;".to_owned()), (p, "y;".to_owned())];
        let err = align_by_position(&[], &mizar, &table(), &MarkupFilter::default()).unwrap_err();
        assert_eq!(err, CorpusError::DuplicatePosition(p));
    }

    #[test]
    fn split_exact_sizes_and_partition() {
        let pairs: Vec<SentencePair> =
            (0..100).map(|i| pair(&format!("$ x_{i} $"), &format!("x{i} ;"))).collect();
        let sizes = SplitSizes { train: 80, dev: 7, test: 5, inference: 8 };
        let split = split_corpus(pairs.clone(), sizes, 99).unwrap();
        assert_eq!(split.train.len(), 80);
        assert_eq!(split.dev.len(), 7);
        assert_eq!(split.test.len(), 5);
        assert_eq!(split.inference.len(), 8);

        let mut all: Vec<String> = split
            .train
            .iter()
            .chain(&split.dev)
            .chain(&split.test)
            .chain(&split.inference)
            .map(|p| p.latex.joined())
            .collect();
        all.sort();
        let mut want: Vec<String> = pairs.iter().map(|p| p.latex.joined()).collect();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn split_all_to_train() {
        let pairs: Vec<SentencePair> =
            (0..10).map(|i| pair(&format!("$ {i} $"), &format!("{i} ;"))).collect();
        let split = split_corpus(
            pairs.clone(),
            SplitSizes { train: 10, dev: 0, test: 0, inference: 0 },
            1,
        )
        .unwrap();
        let mut got: Vec<String> = split.train.iter().map(|p| p.mizar.joined()).collect();
        got.sort();
        let mut want: Vec<String> = pairs.iter().map(|p| p.mizar.joined()).collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn split_is_deterministic() {
        let pairs: Vec<SentencePair> =
            (0..50).map(|i| pair(&format!("$ {i} $"), &format!("{i} ;"))).collect();
        let sizes = SplitSizes { train: 30, dev: 10, test: 5, inference: 5 };
        let a = split_corpus(pairs.clone(), sizes, 7).unwrap();
        let b = split_corpus(pairs, sizes, 7).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.test, b.test);
        assert_eq!(a.inference, b.inference);
    }

    #[test]
    fn split_size_mismatch() {
        let pairs = vec![pair("$ x $", "x ;")];
        let err = split_corpus(pairs, SplitSizes { train: 2, dev: 0, test: 0, inference: 0 }, 1)
            .unwrap_err();
        assert_eq!(err, CorpusError::SizeMismatch { requested: 2, available: 1 });
    }

    #[test]
    fn vocab_from_golden_row() {
        let seq = TokenSequence::from_line("X c= Y & Y c= Z implies X c= Z ;", Language::Mizar);
        let vocab = build_vocab([&seq]);
        let want = vec!["<unk>", "<s>", "</s>", "X", "c=", "Y", "&", "Z", "implies", ";"];
        assert_eq!(vocab.tokens(), &want[..]);
        assert_eq!(vocab.id("c="), 4);
        assert_eq!(vocab.id("missing"), UNK);
    }

    #[test]
    fn vocab_empty_corpus_is_specials() {
        let vocab = build_vocab([]);
        assert_eq!(vocab.tokens(), &[UNK_TOKEN, SOS_TOKEN, EOS_TOKEN]);
    }

    #[test]
    fn vocab_repeat_corpus_unchanged() {
        let seq = TokenSequence::from_line("a b a", Language::Mizar);
        let once = build_vocab([&seq]);
        let twice = build_vocab([&seq, &seq]);
        assert_eq!(once, twice);
        assert_eq!(once.len(), 5);
    }

    #[test]
    fn vocab_render_parse_round_trip() {
        let seq = TokenSequence::from_line("lim ( seq1 + seq2 )", Language::Mizar);
        let vocab = build_vocab([&seq]);
        let parsed = Vocabulary::parse(&vocab.render());
        assert_eq!(parsed, vocab);
    }

    #[test]
    fn overlap_disjoint_and_subset() {
        let train = vec![pair("$ a $", "a ;"), pair("$ b $", "b ;")];
        let disjoint = vec![pair("$ c $", "c ;")];
        assert_eq!(compute_overlap(&train, &disjoint).count, 0);

        let subset = vec![pair("$ a $", "other ;"), pair("$ b $", "b ;")];
        let res = compute_overlap(&train, &subset);
        assert_eq!(res.count, 2);
        assert_eq!(res.flags, vec![true, true]);
    }

    #[test]
    fn overlap_counts_latex_side_only() {
        let train = vec![pair("$ a $", "a ;")];
        let inference = vec![
            pair("$ a $", "completely different ;"),
            pair("$ b $", "a ;"),
            pair("$ c $", "c ;"),
        ];
        let res = compute_overlap(&train, &inference);
        assert_eq!(res.count, 1);
        assert_eq!(res.flags, vec![true, false, false]);
    }

    #[test]
    fn tagged_file_round_trip() {
        let text = "3 1 X c= Y & Y c= Z implies X c= Z;\n10 4 x = y;\n";
        let parsed = parse_tagged(text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, Position { line: 3, column: 1 });
        assert_eq!(parsed[0].1, "X c= Y & Y c= Z implies X c= Z;");
        assert_eq!(parsed[1].0, Position { line: 10, column: 4 });
    }

    #[test]
    fn tagged_file_rejects_garbage() {
        assert!(matches!(
            parse_tagged("3 x text\n"),
            Err(CorpusError::BadPositionLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_tagged("3 1\n"),
            Err(CorpusError::BadPositionLine { line: 1, .. })
        ));
    }

    #[test]
    fn parallel_render_read_round_trip() {
        let pairs = vec![pair("$ a $ b", "a b ;"), pair("$ c $", "c ;")];
        let latex = render_side(&pairs, Language::Latex);
        let mizar = render_side(&pairs, Language::Mizar);
        let back = read_parallel(&latex, &mizar).unwrap();
        assert_eq!(back, pairs);
    }

    #[test]
    fn parallel_read_rejects_ragged_files() {
        let err = read_parallel("a\nb\n", "a\n").unwrap_err();
        assert_eq!(err, CorpusError::UnalignedFiles { latex: 2, mizar: 1 });
    }
}
