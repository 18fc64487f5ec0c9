use crate::arena::Pool;
use crate::features::{self, FeatureVector, SpanRange, TM};
use crate::lm::LmWordId;
use crate::tm::{uniform_lexro, LookupStats, TableError, WordId, LEXRO_ARITY, TM_ARITY};

use super::Models;

/// A rule applied to a concrete source span, with its context-free feature
/// values already collected.
#[derive(Debug, Clone, Copy)]
pub struct TranslationOption<'a> {
    pub span: SpanRange,
    /// Table ids of the target words; empty for a pass-through.
    pub target: &'a [WordId],
    pub passthrough: bool,
    pub lm_ids: &'a [LmWordId],
    pub lexro: [f32; LEXRO_ARITY],
    /// Penalties and translation-model scores.
    pub features: FeatureVector,
    /// Weighted `features` plus the weighted context-free LM estimate.
    pub estimate: f64,
}

impl TranslationOption<'_> {
    pub fn target_len(&self) -> usize {
        self.lm_ids.len()
    }
}

/// Options for every span of one sentence, best estimate first.
#[derive(Debug)]
pub struct OptionTable<'a> {
    n: usize,
    max_len: usize,
    spans: Vec<&'a [TranslationOption<'a>]>,
}

impl<'a> OptionTable<'a> {
    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_len
    }

    pub fn get(&self, span: SpanRange) -> &'a [TranslationOption<'a>] {
        let len = span.len();
        if len == 0 || len > self.max_len || span.end as usize > self.n {
            return &[];
        }
        self.spans[span.start as usize * self.max_len + len - 1]
    }

    /// Non-empty spans in (start, length) order.
    pub fn spans(&self) -> impl Iterator<Item = (SpanRange, &'a [TranslationOption<'a>])> + '_ {
        (0..self.n).flat_map(move |s| {
            (1..=self.max_len.min(self.n - s)).filter_map(move |l| {
                let span = SpanRange::new(s, s + l);
                let opts = self.get(span);
                (!opts.is_empty()).then_some((span, opts))
            })
        })
    }

    pub fn option_count(&self) -> usize {
        self.spans.iter().map(|s| s.len()).sum()
    }
}

/// Looks up every span of `tokens` in the rule table. A single token with
/// no rule of its own gets a pass-through rule copying it to the output.
pub fn collect_options<'a>(
    models: &Models,
    tokens: &[&str],
    table_limit: Option<usize>,
    pool: &'a Pool,
    stats: &mut LookupStats,
) -> Result<OptionTable<'a>, TableError> {
    let n = tokens.len();
    let max_len = models.table.max_source_len().max(1);
    let vocab = models.table.vocab();
    let ids: Vec<Option<WordId>> = tokens.iter().map(|t| vocab.id(t)).collect();
    let weights = &models.weights;
    let mut spans = vec![&[][..]; n * max_len];
    let mut buf: Vec<TranslationOption<'a>> = Vec::new();

    for start in 0..n {
        for len in 1..=max_len.min(n - start) {
            let span = SpanRange::new(start, start + len);
            buf.clear();
            let source: Option<Vec<WordId>> = ids[start..start + len].iter().copied().collect();
            if let Some(source) = &source {
                if let Some(collection) = models.table.lookup(source, stats)? {
                    let limit = table_limit.unwrap_or(usize::MAX);
                    for rule in collection.rules.iter().take(limit) {
                        let lm_ids: Vec<LmWordId> = rule.target.iter().map(|&w| models.lm_id(w)).collect();
                        let lexro = match &models.separate_lexro {
                            Some(t) => t.get(source, &rule.target),
                            None => rule.lexro,
                        };
                        let mut fv = FeatureVector::zero();
                        apply_static(&mut fv, rule.target.len(), false, &rule.tm_scores.map(f64::from));
                        buf.push(TranslationOption {
                            span,
                            target: pool.alloc_slice_copy(&rule.target),
                            passthrough: false,
                            lm_ids: pool.alloc_slice_copy(&lm_ids),
                            lexro,
                            features: fv,
                            estimate: 0.0,
                        });
                    }
                }
            }
            if buf.is_empty() && len == 1 {
                let mut fv = FeatureVector::zero();
                apply_static(&mut fv, 1, true, &[features::unknown_floor(); TM_ARITY]);
                buf.push(TranslationOption {
                    span,
                    target: &[],
                    passthrough: true,
                    lm_ids: pool.alloc_slice_copy(&[models.lm.word_id(tokens[start])]),
                    lexro: uniform_lexro(),
                    features: fv,
                    estimate: 0.0,
                });
            }
            for o in buf.iter_mut() {
                o.estimate = features::total_score(&o.features, weights)
                    + weights.0[features::LM] * models.lm.estimate_phrase(o.lm_ids);
            }
            // Stable: equal estimates keep table order.
            buf.sort_by(|a, b| b.estimate.total_cmp(&a.estimate));
            spans[start * max_len + len - 1] = pool.alloc_slice_copy(&buf);
        }
    }
    Ok(OptionTable { n, max_len, spans })
}

fn apply_static(fv: &mut FeatureVector, target_len: usize, unknown: bool, tm: &[f64; TM_ARITY]) {
    let p = features::penalties(target_len, unknown);
    fv[features::PHRASE_PENALTY] = p.phrase as f64;
    fv[features::WORD_PENALTY] = p.word as f64;
    fv[features::UNKNOWN_PENALTY] = p.unknown as f64;
    fv.0[TM..TM + TM_ARITY].copy_from_slice(tm);
}
