//! Corpus-level BLEU-4: geometric mean of modified n-gram precisions with a
//! brevity penalty, scaled to a percentage.

use std::collections::HashMap;

use super::{check_len, EvalError};
use crate::lexing::TokenSequence;

const MAX_ORDER: usize = 4;

/// Corpus BLEU of hypotheses against single references, in [0, 100].
///
/// No smoothing is applied: if a modified precision is zero the score is
/// zero. The one exception is degenerate lengths: n-gram orders with zero
/// candidate n-grams anywhere in the corpus are excluded from the geometric
/// mean, so identical corpora of very short sentences still score 100.
pub fn bleu(hypotheses: &[TokenSequence], references: &[TokenSequence]) -> Result<f64, EvalError> {
    check_len(hypotheses.len(), references.len())?;
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }

    let mut matched = [0usize; MAX_ORDER];
    let mut candidates = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(hyp.tokens(), n);
            let ref_counts = ngram_counts(reference.tokens(), n);
            for (gram, count) in &hyp_counts {
                candidates[n - 1] += count;
                // Modified precision clips by the reference count.
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matched[n - 1] += (*count).min(clip);
            }
        }
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..MAX_ORDER {
        if candidates[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / candidates[n] as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let precision_mean = (log_sum / orders as f64).exp();

    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * precision_mean)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}
