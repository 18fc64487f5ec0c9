//! Exhaustive reference decoder. It enumerates every admissible derivation
//! and scores each one from scratch, sharing no search code with the stack
//! decoder.

use std::sync::Arc;

use thiserror::Error;

use crate::features::{FeatureVector, SpanRange, NUM_FEATURES};
use crate::lm::{BOS, EOS};
use crate::search::Models;
use crate::tm::{uniform_lexro, LookupStats, TableError, TargetPhraseCollection, WordId};

/// Longest sentence the oracle accepts.
pub const ORACLE_MAX_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("sentence has {0} tokens; the exhaustive oracle handles at most {ORACLE_MAX_LEN}")]
    TooLong(usize),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub span: SpanRange,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub score: f64,
    pub features: FeatureVector,
    pub translation: String,
    pub derivation: Vec<OracleStep>,
    /// Complete derivations scored.
    pub derivations: u64,
    /// Partial derivations visited.
    pub nodes: u64,
}

#[derive(Clone)]
struct Rule {
    start: usize,
    end: usize,
    target: Vec<String>,
    lm: Vec<u32>,
    tm: [f64; 4],
    lexro: [f64; 6],
    unknown: bool,
}

struct Oracle<'m> {
    models: &'m Models,
    n: usize,
    limit: Option<i64>,
    rules: Vec<Rule>,
    /// (start, end, first rule, rule count) per span with rules.
    spans: Vec<(usize, usize, usize, usize)>,
    best: Option<(f64, FeatureVector, Vec<usize>)>,
    derivations: u64,
    nodes: u64,
}

/// Finds the best-scoring derivation under the given distortion limit
/// (`None` = unlimited).
pub fn exhaustive_decode(
    models: &Models,
    sentence: &str,
    distortion_limit: Option<u32>,
) -> Result<OracleResult, OracleError> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let n = tokens.len();
    if n > ORACLE_MAX_LEN {
        return Err(OracleError::TooLong(n));
    }
    let vocab = models.table.vocab();
    let mut stats = LookupStats::default();
    let mut rules: Vec<Rule> = Vec::new();
    let mut spans = Vec::new();
    for start in 0..n {
        for end in start + 1..=n {
            let words = &tokens[start..end];
            let mut found = Vec::new();
            let ids: Option<Vec<WordId>> = words.iter().map(|w| vocab.id(w)).collect();
            let collection: Option<Arc<TargetPhraseCollection>> = match &ids {
                Some(ids) => models.table.lookup(ids, &mut stats)?,
                None => None,
            };
            if let Some(c) = collection {
                for r in &c.rules {
                    let lexro = match &models.separate_lexro {
                        Some(t) => t.get(ids.as_ref().unwrap(), &r.target),
                        None => r.lexro,
                    };
                    let target: Vec<String> = r.target.iter().map(|&w| vocab.word(w).to_string()).collect();
                    found.push(Rule {
                        start,
                        end,
                        lm: target.iter().map(|w| models.lm.word_id(w)).collect(),
                        target,
                        tm: r.tm_scores.map(f64::from),
                        lexro: lexro.map(f64::from),
                        unknown: false,
                    });
                }
            }
            if found.is_empty() && end == start + 1 {
                found.push(Rule {
                    start,
                    end,
                    target: vec![words[0].to_string()],
                    lm: vec![models.lm.word_id(words[0])],
                    tm: [1e-9f64.ln(); 4],
                    lexro: uniform_lexro().map(f64::from),
                    unknown: true,
                });
            }
            if !found.is_empty() {
                spans.push((start, end, rules.len(), found.len()));
                rules.extend(found);
            }
        }
    }
    let mut o = Oracle {
        models,
        n,
        limit: distortion_limit.map(i64::from),
        rules,
        spans,
        best: None,
        derivations: 0,
        nodes: 0,
    };
    let mut path = Vec::new();
    o.search(&mut vec![false; n], -1, &mut path);
    let (score, features, best) = o.best.clone().unwrap_or((0.0, FeatureVector::zero(), Vec::new()));
    let derivation: Vec<OracleStep> = best
        .iter()
        .map(|&i| {
            let r = &o.rules[i];
            OracleStep { span: SpanRange::new(r.start, r.end), target: r.target.join(" ") }
        })
        .collect();
    let translation = derivation.iter().map(|s| s.target.as_str()).collect::<Vec<_>>().join(" ");
    Ok(OracleResult { score, features, translation, derivation, derivations: o.derivations, nodes: o.nodes })
}

impl Oracle<'_> {
    fn admissible(&self, covered: &[bool], last_end: i64, start: usize, end: usize) -> bool {
        let Some(limit) = self.limit else { return true };
        if (start as i64 - (last_end + 1)).abs() > limit {
            return false;
        }
        // Leaving the leftmost untranslated word behind is only allowed if
        // it can be reached again from the end of this phrase.
        match covered.iter().position(|c| !c) {
            Some(gap) if gap < start => end as i64 - gap as i64 <= limit,
            _ => true,
        }
    }

    fn search(&mut self, covered: &mut [bool], last_end: i64, path: &mut Vec<usize>) {
        self.nodes += 1;
        if covered.iter().all(|c| *c) {
            self.finish(path);
            return;
        }
        for k in 0..self.spans.len() {
            let (start, end, first, count) = self.spans[k];
            if covered[start..end].iter().any(|c| *c) || !self.admissible(covered, last_end, start, end) {
                continue;
            }
            covered[start..end].iter_mut().for_each(|c| *c = true);
            for r in first..first + count {
                path.push(r);
                self.search(covered, end as i64 - 1, path);
                path.pop();
            }
            covered[start..end].iter_mut().for_each(|c| *c = false);
        }
    }

    fn backoff_prob(&self, history: &[u32], word: u32) -> f64 {
        let lm = &self.models.lm;
        let ctx = &history[history.len().saturating_sub(lm.order() - 1)..];
        let mut penalty = 0.0;
        for k in (0..=ctx.len()).rev() {
            let mut gram = ctx[ctx.len() - k..].to_vec();
            gram.push(word);
            if let Some(p) = lm.ngram_prob(&gram) {
                return penalty + p;
            }
            if k > 0 {
                penalty += lm.backoff(&ctx[ctx.len() - k..]);
            }
        }
        unreachable!("<unk> always has a unigram")
    }

    fn finish(&mut self, path: &[usize]) {
        self.derivations += 1;
        let steps: Vec<&Rule> = path.iter().map(|&i| &self.rules[i]).collect();
        let mut h = [0.0f64; NUM_FEATURES];

        // Distortion, penalties and translation scores.
        let mut last_end: i64 = -1;
        for r in &steps {
            h[0] -= (r.start as i64 - last_end - 1).abs() as f64;
            h[1] += 1.0;
            h[2] += r.target.len() as f64;
            h[3] += r.unknown as u8 as f64;
            for k in 0..4 {
                h[5 + k] += r.tm[k];
            }
            last_end = r.end as i64 - 1;
        }

        // Language model over the whole output with untruncated history.
        let mut history = vec![BOS];
        for r in &steps {
            for &w in &r.lm {
                h[4] += self.backoff_prob(&history, w);
                history.push(w);
            }
        }
        h[4] += self.backoff_prob(&history, EOS);

        // Reordering: each phrase against its predecessor, and the
        // predecessor against it; the last phrase against the sentence end.
        let (mut prev_start, mut prev_end) = (0usize, 0usize);
        for (i, r) in steps.iter().enumerate() {
            let class = if r.start == prev_end {
                0
            } else if r.end == prev_start {
                1
            } else {
                2
            };
            h[9 + class] += r.lexro[class];
            if i > 0 {
                h[12 + class] += steps[i - 1].lexro[3 + class];
            }
            prev_start = r.start;
            prev_end = r.end;
        }
        if let Some(last) = steps.last() {
            let class = if last.end == self.n { 0 } else { 2 };
            h[12 + class] += last.lexro[3 + class];
        }

        let w = &self.models.weights.0;
        let score: f64 = (0..NUM_FEATURES).map(|k| w[k] * h[k]).sum();
        if self.best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            self.best = Some((score, FeatureVector(h), path.to_vec()));
        }
    }
}
