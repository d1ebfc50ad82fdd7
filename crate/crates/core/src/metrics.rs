//! Character and word error rates via Levenshtein distance.
//!
//! Both rates are micro-averaged: total edit distance over total reference
//! length, in percent. Words are runs of non-whitespace; characters include
//! spaces (see [`corpus_scores_opts`] for the switch that excludes them).

use crate::error::{Error, Result};

/// Minimal number of single-token insertions, deletions, and substitutions
/// (all cost 1) transforming `a` into `b`.
pub fn edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // one rolling row
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, av) in a.iter().enumerate() {
        let mut prev_diag = row[0];
        row[0] = i + 1;
        for (j, bv) in b.iter().enumerate() {
            let sub = prev_diag + usize::from(av != bv);
            prev_diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(prev_diag + 1);
        }
    }
    row[b.len()]
}

/// Per-sample distances feeding an [`EvalReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleScore {
    pub char_dist: usize,
    pub word_dist: usize,
    pub ref_chars: usize,
    pub ref_words: usize,
}

/// Corpus-level error rates, lower is better.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Percent: `100 · Σ char distances / Σ reference characters`.
    pub cer: f64,
    /// Percent: `100 · Σ word distances / Σ reference words`.
    pub wer: f64,
    pub per_sample: Vec<SampleScore>,
    pub total_ref_chars: usize,
    pub total_ref_words: usize,
}

/// Micro-averaged CER/WER of hypotheses against references (equal counts;
/// hypotheses already margin-stripped).
pub fn corpus_scores<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<EvalReport> {
    corpus_scores_opts(refs, hyps, true)
}

/// Like [`corpus_scores`]; `count_spaces = false` drops space characters
/// from both sides of the character-level distance.
pub fn corpus_scores_opts<R: AsRef<str>, H: AsRef<str>>(
    refs: &[R],
    hyps: &[H],
    count_spaces: bool,
) -> Result<EvalReport> {
    if refs.len() != hyps.len() {
        return Err(Error::shape(format!(
            "{} references vs {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(refs.len());
    let (mut cd, mut wd, mut rc, mut rw) = (0usize, 0usize, 0usize, 0usize);
    for (r, h) in refs.iter().zip(hyps) {
        let (r, h) = (r.as_ref(), h.as_ref());
        let rchars: Vec<char> = r.chars().filter(|&c| count_spaces || c != ' ').collect();
        let hchars: Vec<char> = h.chars().filter(|&c| count_spaces || c != ' ').collect();
        let rwords: Vec<&str> = r.split_whitespace().collect();
        let hwords: Vec<&str> = h.split_whitespace().collect();
        let score = SampleScore {
            char_dist: edit_distance(&rchars, &hchars),
            word_dist: edit_distance(&rwords, &hwords),
            ref_chars: rchars.len(),
            ref_words: rwords.len(),
        };
        cd += score.char_dist;
        wd += score.word_dist;
        rc += score.ref_chars;
        rw += score.ref_words;
        per_sample.push(score);
    }
    let rate = |dist: usize, total: usize| {
        if total == 0 {
            if dist == 0 { 0.0 } else { 100.0 }
        } else {
            100.0 * dist as f64 / total as f64
        }
    };
    Ok(EvalReport {
        cer: rate(cd, rc),
        wer: rate(wd, rw),
        per_sample,
        total_ref_chars: rc,
        total_ref_words: rw,
    })
}
