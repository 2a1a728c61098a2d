//! Translation quality metrics: perplexity, corpus BLEU, identical-statement
//! rates (overall and restricted to non-overlapping sentences), word-level
//! edit-distance buckets, and greedy covers over model ensembles.

mod bleu;
mod cover;

pub use bleu::bleu;
pub use cover::{greedy_cover, union_cover, CoverResult, UnionCover};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

use crate::lexing::TokenSequence;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvalSet,
    #[error("aligned lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
}

/// exp of the mean negative log-likelihood per gold token.
///
/// `sentence_logprobs` holds one vector of natural-log token probabilities
/// per sentence.
pub fn perplexity(sentence_logprobs: &[Vec<f64>]) -> Result<f64, EvalError> {
    let count: usize = sentence_logprobs.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(EvalError::EmptyEvalSet);
    }
    let total: f64 = sentence_logprobs.iter().flatten().sum();
    Ok((-total / count as f64).exp())
}

/// Identical-statement counts over all items and over the non-overlapping
/// subset (items whose overlap flag is false).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchCounts {
    pub identical_total: usize,
    pub identical_no_overlap: usize,
    pub total: usize,
    pub no_overlap_total: usize,
}

impl MatchCounts {
    pub fn percent_total(&self) -> f64 {
        percent(self.identical_total, self.total)
    }

    pub fn percent_no_overlap(&self) -> f64 {
        percent(self.identical_no_overlap, self.no_overlap_total)
    }
}

fn percent(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        100.0 * num as f64 / denom as f64
    }
}

/// Count exact token-sequence matches, overall and on the non-overlap
/// subset selected by `overlap_flags` (true marks an overlapping item).
pub fn exact_match(
    hyps: &[TokenSequence],
    refs: &[TokenSequence],
    overlap_flags: &[bool],
) -> Result<MatchCounts, EvalError> {
    check_len(hyps.len(), refs.len())?;
    check_len(hyps.len(), overlap_flags.len())?;
    let mut counts = MatchCounts {
        identical_total: 0,
        identical_no_overlap: 0,
        total: hyps.len(),
        no_overlap_total: overlap_flags.iter().filter(|&&f| !f).count(),
    };
    for ((hyp, reference), &overlap) in hyps.iter().zip(refs).zip(overlap_flags) {
        if hyp.tokens() == reference.tokens() {
            counts.identical_total += 1;
            if !overlap {
                counts.identical_no_overlap += 1;
            }
        }
    }
    Ok(counts)
}

/// Indices of sentences a model translated exactly.
pub fn correct_set(
    hyps: &[TokenSequence],
    refs: &[TokenSequence],
) -> Result<std::collections::BTreeSet<usize>, EvalError> {
    check_len(hyps.len(), refs.len())?;
    Ok(hyps
        .iter()
        .zip(refs)
        .enumerate()
        .filter(|(_, (h, r))| h.tokens() == r.tokens())
        .map(|(i, _)| i)
        .collect())
}

fn check_len(left: usize, right: usize) -> Result<(), EvalError> {
    if left != right {
        return Err(EvalError::LengthMismatch { left, right });
    }
    Ok(())
}

/// Word-level Levenshtein distance: minimum insertions + deletions +
/// substitutions over tokens.
pub fn edit_distance(a: &TokenSequence, b: &TokenSequence) -> usize {
    let (at, bt) = (a.tokens(), b.tokens());
    if at.is_empty() {
        return bt.len();
    }
    if bt.is_empty() {
        return at.len();
    }
    let mut row: Vec<usize> = (0..=bt.len()).collect();
    for (i, av) in at.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, bv) in bt.iter().enumerate() {
            let sub = diag + usize::from(av != bv);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[bt.len()]
}

/// Fractions of items translated within distance k, for each k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketEntry {
    pub percent_total: f64,
    pub percent_no_overlap: f64,
}

pub const DEFAULT_BUCKETS: [usize; 4] = [0, 1, 2, 3];

/// Edit-distance coverage per bucket. `model_hyps` holds one hypothesis list
/// per model; the distance of an item is the minimum across models, so a
/// single-model slice gives plain per-model buckets.
pub fn distance_buckets(
    model_hyps: &[&[TokenSequence]],
    refs: &[TokenSequence],
    overlap_flags: &[bool],
    ks: &[usize],
) -> Result<BTreeMap<usize, BucketEntry>, EvalError> {
    if model_hyps.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    for hyps in model_hyps {
        check_len(hyps.len(), refs.len())?;
    }
    check_len(refs.len(), overlap_flags.len())?;

    let distances: Vec<usize> = (0..refs.len())
        .map(|i| {
            model_hyps
                .iter()
                .map(|hyps| edit_distance(&hyps[i], &refs[i]))
                .min()
                .expect("at least one model")
        })
        .collect();
    let no_overlap_total = overlap_flags.iter().filter(|&&f| !f).count();

    let mut out = BTreeMap::new();
    for &k in ks {
        let mut within = 0;
        let mut within_no_overlap = 0;
        for (d, &flag) in distances.iter().zip(overlap_flags) {
            if *d <= k {
                within += 1;
                if !flag {
                    within_no_overlap += 1;
                }
            }
        }
        out.insert(
            k,
            BucketEntry {
                percent_total: percent(within, refs.len()),
                percent_no_overlap: percent(within_no_overlap, no_overlap_total),
            },
        );
    }
    Ok(out)
}

/// Everything the evaluation harness reports for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    /// Absent when no log-probabilities were supplied.
    pub perplexity: Option<f64>,
    pub bleu: f64,
    pub identical: MatchCounts,
    pub buckets: BTreeMap<usize, BucketEntry>,
}

impl EvalReport {
    /// Machine-parseable key/value rendering; percentages use two decimals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model {}", self.model_id);
        if let Some(ppl) = self.perplexity {
            let _ = writeln!(out, "perplexity {ppl:.4}");
        }
        let _ = writeln!(out, "bleu {:.2}", self.bleu);
        let _ = writeln!(
            out,
            "identical_total {} {:.2}",
            self.identical.identical_total,
            self.identical.percent_total()
        );
        let _ = writeln!(
            out,
            "identical_no_overlap {} {:.2}",
            self.identical.identical_no_overlap,
            self.identical.percent_no_overlap()
        );
        for (k, entry) in &self.buckets {
            let _ = writeln!(
                out,
                "dist_le_{k} {:.2} {:.2}",
                entry.percent_total, entry.percent_no_overlap
            );
        }
        out
    }

    /// One row in the layout of the experiment tables: parameter label,
    /// perplexity, BLEU, identical counts with percentages.
    pub fn render_table_row(&self) -> String {
        let ppl = match self.perplexity {
            Some(p) => format!("{p:.2}"),
            None => "-".to_owned(),
        };
        format!(
            "{}\t{}\t{:.1}\t{} ({:.2}%)\t{} ({:.2}%)",
            self.model_id,
            ppl,
            self.bleu,
            self.identical.identical_total,
            self.identical.percent_total(),
            self.identical.identical_no_overlap,
            self.identical.percent_no_overlap(),
        )
    }

    pub fn table_header() -> &'static str {
        "Parameter\tTest Perplexity\tTest BLEU\tIdentical Statements (%)\tIdentical No-overlap (%)"
    }
}
