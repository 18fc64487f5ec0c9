//! Corpus-level BLEU-4 with a single reference per sentence.

use std::collections::HashMap;

use thiserror::Error;

pub const MAX_N: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum BleuError {
    #[error("empty corpus")]
    Empty,
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bleu {
    pub score: f64,
    /// Clipped matches and totals per n-gram order.
    pub matches: [u64; MAX_N],
    pub totals: [u64; MAX_N],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl Bleu {
    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }
}

fn ngram_counts<'t>(tokens: &'t [&'t str], n: usize) -> HashMap<&'t [&'t str], u64> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Geometric mean of clipped 1..4-gram precisions times the brevity
/// penalty, accumulated over the whole corpus. Any order without a match
/// gives 0.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<Bleu, BleuError> {
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch { hyps: hypotheses.len(), refs: references.len() });
    }
    if hypotheses.is_empty() {
        return Err(BleuError::Empty);
    }
    let mut matches = [0u64; MAX_N];
    let mut totals = [0u64; MAX_N];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=MAX_N {
            let rc = ngram_counts(&r, n);
            for (g, c) in ngram_counts(&h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if matches.contains(&0) {
        0.0
    } else {
        let log_mean: f64 =
            (0..MAX_N).map(|i| (matches[i] as f64 / totals[i] as f64).ln()).sum::<f64>() / MAX_N as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(Bleu { score, matches, totals, brevity_penalty, hyp_len, ref_len })
}
