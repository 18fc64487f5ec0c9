//! Stack decoding with cube pruning.
//!
//! Hypotheses live in the caller's ephemeral pool. Stacks are expanded in
//! key order; each expansion groups the stack's hypotheses with every
//! compatible source span into a cube and pops at most `pop_limit` of the
//! best-estimated (hypothesis, option) pairs across all cubes.

mod coverage;
mod future;
mod options;
mod stack;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::arena::{Pool, QueueStats};
use crate::features::{
    self, classify_orientation, distortion_penalty, final_orientation, lexro_index, Direction, FeatureVector,
    LexRoTable, SpanRange, WeightVector, LEXRO,
};
use crate::lm::{LmWordId, NGramModel, EOS};
use crate::tm::{LookupStats, RuleTable, TableError, WordId};

pub use coverage::{Coverage, MAX_COVERAGE};
pub use future::FutureCosts;
pub use options::{collect_options, OptionTable, TranslationOption};
pub use stack::{
    stack_key, Hypothesis, HypothesisArena, RecombinationKey, RecombineOutcome, Stack, StackConfiguration, StackKey,
};

/// Everything a decode reads: shared read-only by all workers.
#[derive(Debug)]
pub struct Models {
    pub table: RuleTable,
    pub lm: NGramModel,
    pub weights: WeightVector,
    /// When set, reordering scores come from this table instead of the
    /// values embedded in the rule table.
    pub separate_lexro: Option<LexRoTable>,
    tm_to_lm: Vec<LmWordId>,
}

impl Models {
    pub fn new(table: RuleTable, lm: NGramModel, weights: WeightVector) -> Models {
        let tm_to_lm = table.vocab().words().iter().map(|w| lm.word_id(w)).collect();
        Models { table, lm, weights, separate_lexro: None, tm_to_lm }
    }

    pub fn with_separate_lexro(mut self, lexro: LexRoTable) -> Models {
        self.separate_lexro = Some(lexro);
        self
    }

    /// Swaps in another rule table, e.g. the same file opened with a
    /// different cache size.
    pub fn set_table(&mut self, table: RuleTable) {
        self.tm_to_lm = table.vocab().words().iter().map(|w| self.lm.word_id(w)).collect();
        self.table = table;
    }

    pub fn lm_id(&self, word: WordId) -> LmWordId {
        self.tm_to_lm[word as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    /// Scored expansions per expanded stack; `usize::MAX` for no limit.
    pub pop_limit: usize,
    /// `None` for unlimited reordering.
    pub distortion_limit: Option<u32>,
    /// Hypotheses kept per stack before expansion; `None` keeps all.
    pub beam_size: Option<usize>,
    pub stack: StackConfiguration,
    /// Rules used per source phrase; `None` uses all the table holds.
    pub table_limit: Option<usize>,
    pub recombine: bool,
    pub max_sentence_len: usize,
    /// Collect per-phase timings.
    pub profile: bool,
    /// Record every cube pop.
    pub trace_pops: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            pop_limit: 400,
            distortion_limit: Some(6),
            beam_size: None,
            stack: StackConfiguration::Cardinality,
            table_limit: None,
            recombine: true,
            max_sentence_len: 200,
            profile: false,
            trace_pops: false,
        }
    }
}

impl SearchParams {
    /// No pruning at all: every reachable hypothesis is scored.
    pub fn exhaustive() -> SearchParams {
        SearchParams { pop_limit: usize::MAX, beam_size: None, ..SearchParams::default() }
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("sentence has {len} tokens, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Time spent per decoder component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Phases {
    pub memory: Duration,
    pub lm: Duration,
    pub phrase_table: Duration,
    pub lexro: Duration,
    pub search: Duration,
    pub total: Duration,
}

impl Phases {
    pub fn merge(&mut self, o: &Phases) {
        self.memory += o.memory;
        self.lm += o.lm;
        self.phrase_table += o.phrase_table;
        self.lexro += o.lexro;
        self.search += o.search;
        self.total += o.total;
    }

    pub fn misc(&self) -> Duration {
        self.total.saturating_sub(self.memory + self.lm + self.phrase_table + self.lexro + self.search)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecodeStats {
    pub sentences: u64,
    pub words: u64,
    pub options: u64,
    pub hypotheses: u64,
    pub recombined: u64,
    pub pops: u64,
    pub stacks_expanded: u64,
    /// Sentences that only completed after retrying monotonically.
    pub monotone_fallbacks: u64,
    pub lookups: LookupStats,
    pub queue: QueueStats,
    pub phases: Phases,
}

impl DecodeStats {
    pub fn merge(&mut self, o: &DecodeStats) {
        self.sentences += o.sentences;
        self.words += o.words;
        self.options += o.options;
        self.hypotheses += o.hypotheses;
        self.recombined += o.recombined;
        self.pops += o.pops;
        self.stacks_expanded += o.stacks_expanded;
        self.monotone_fallbacks += o.monotone_fallbacks;
        self.lookups.merge(&o.lookups);
        self.queue.merge(&o.queue);
        self.phases.merge(&o.phases);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationStep {
    pub span: SpanRange,
    pub target: String,
    pub passthrough: bool,
}

/// One cube pop: which stack expansion, cube, grid cell, and its estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pop {
    pub expansion: usize,
    pub cube: usize,
    pub hyp: usize,
    pub option: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub translation: String,
    pub score: f64,
    pub features: FeatureVector,
    pub derivation: Vec<DerivationStep>,
    pub stats: DecodeStats,
    pub pops: Vec<Pop>,
}

/// `d(C, e, range)`: the jump from `end_pos` to `range` is within `limit`,
/// and if the range leaves the leftmost gap behind, the jump back to it from
/// the end of the range is within `limit` too.
pub fn distortion_check(coverage: &Coverage, end_pos: i32, range: SpanRange, limit: Option<u32>) -> bool {
    let Some(limit) = limit else { return true };
    let limit = limit as i64;
    let jump = (range.start as i64 - (end_pos as i64 + 1)).abs();
    if jump > limit {
        return false;
    }
    match coverage.first_gap(MAX_COVERAGE) {
        Some(g) if g < range.start as usize => range.end as i64 - g as i64 <= limit,
        _ => true,
    }
}

/// Decodes one tokenized sentence with a throwaway pool.
pub fn decode(models: &Models, sentence: &str, params: &SearchParams) -> Result<DecodeResult, DecodeError> {
    let pool = Pool::new();
    decode_in(models, sentence, params, &pool)
}

/// Decodes one sentence allocating from `pool`; the caller resets the pool
/// afterwards.
pub fn decode_in(
    models: &Models,
    sentence: &str,
    params: &SearchParams,
    pool: &Pool,
) -> Result<DecodeResult, DecodeError> {
    let started = Instant::now();
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let n = tokens.len();
    let max = params.max_sentence_len.min(MAX_COVERAGE);
    if n > max {
        return Err(DecodeError::TooLong { len: n, max });
    }
    let mut stats = DecodeStats { sentences: 1, words: n as u64, ..Default::default() };
    if n == 0 {
        return Ok(DecodeResult {
            translation: String::new(),
            score: 0.0,
            features: FeatureVector::zero(),
            derivation: Vec::new(),
            stats,
            pops: Vec::new(),
        });
    }

    let t = Instant::now();
    let options = collect_options(models, &tokens, params.table_limit, pool, &mut stats.lookups)?;
    stats.phases.phrase_table = t.elapsed();
    stats.options = options.option_count() as u64;
    let future = FutureCosts::new(&options);

    let mut arena = HypothesisArena::new(pool);
    let mut ctx = Search {
        models,
        params,
        n,
        options: &options,
        future: &future,
        stats: &mut stats,
        pops: Vec::new(),
        expansions: 0,
    };
    let mut best = ctx.run(params.distortion_limit, &mut arena);
    if best.is_none() {
        ctx.stats.monotone_fallbacks += 1;
        best = ctx.run(Some(0), &mut arena);
    }
    let pops = std::mem::take(&mut ctx.pops);
    let best = best.expect("monotone search always completes");
    stats.queue = arena.stats();

    let vocab = models.table.vocab();
    let derivation: Vec<DerivationStep> = best
        .derivation()
        .into_iter()
        .map(|o| DerivationStep {
            span: o.span,
            target: if o.passthrough {
                tokens[o.span.start as usize].to_string()
            } else {
                o.target.iter().map(|&w| vocab.word(w)).collect::<Vec<_>>().join(" ")
            },
            passthrough: o.passthrough,
        })
        .collect();
    let translation = derivation.iter().map(|d| d.target.as_str()).collect::<Vec<_>>().join(" ");
    stats.phases.total = started.elapsed();
    if !params.profile {
        stats.phases = Phases { total: stats.phases.total, ..Phases::default() };
    }
    Ok(DecodeResult { translation, score: best.score, features: best.features, derivation, stats, pops })
}

struct Cube<'a> {
    options: &'a [TranslationOption<'a>],
    /// (score + rest cost after applying the span, hypothesis), best first.
    hyps: Vec<(f64, &'a Hypothesis<'a>)>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    estimate: f64,
    cube: u32,
    hyp: u32,
    option: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap on the estimate; ties go to the smallest coordinates.
    fn cmp(&self, other: &Self) -> Ordering {
        self.estimate
            .total_cmp(&other.estimate)
            .then_with(|| (other.cube, other.hyp, other.option).cmp(&(self.cube, self.hyp, self.option)))
    }
}

struct Search<'s, 'a> {
    models: &'s Models,
    params: &'s SearchParams,
    n: usize,
    options: &'s OptionTable<'a>,
    future: &'s FutureCosts,
    stats: &'s mut DecodeStats,
    pops: Vec<Pop>,
    expansions: usize,
}

impl<'a> Search<'_, 'a> {
    fn timed<T>(profile: bool, slot: &mut Duration, f: impl FnOnce() -> T) -> T {
        if !profile {
            return f();
        }
        let t = Instant::now();
        let out = f();
        *slot += t.elapsed();
        out
    }

    fn child_future(&self, h: &Hypothesis<'a>, span: SpanRange) -> f64 {
        self.future.estimate(&h.coverage.with_range(span))
    }

    fn extend(&mut self, parent: &'a Hypothesis<'a>, opt: &'a TranslationOption<'a>) -> Hypothesis<'a> {
        let profile = self.params.profile;
        let lm = &self.models.lm;
        let mut fv = parent.features;
        fv.add(&opt.features);
        fv[features::DISTORTION] += distortion_penalty(parent.end_pos, opt.span.start as i32);

        let coverage = parent.coverage.with_range(opt.span);
        let complete = coverage.is_full(self.n);
        let (lm_score, lm_state) = Self::timed(profile, &mut self.stats.phases.lm, || {
            let (mut s, mut state, _) = lm.score_phrase(&parent.lm_state, opt.lm_ids);
            if complete {
                let end = lm.score_word(&state, EOS);
                s += end.log10_prob;
                state = end.next;
            }
            (s, state)
        });
        fv[features::LM] += lm_score;

        Self::timed(profile, &mut self.stats.phases.lexro, || {
            let o = classify_orientation(parent.last_span(), opt.span);
            fv[LEXRO + lexro_index(o, Direction::Previous)] += opt.lexro[lexro_index(o, Direction::Previous)] as f64;
            if let Some(prev) = parent.option {
                fv[LEXRO + lexro_index(o, Direction::Next)] += prev.lexro[lexro_index(o, Direction::Next)] as f64;
            }
            if complete {
                let f = final_orientation(opt.span, self.n);
                fv[LEXRO + lexro_index(f, Direction::Next)] += opt.lexro[lexro_index(f, Direction::Next)] as f64;
            }
        });

        Hypothesis {
            parent: Some(parent),
            option: Some(opt),
            coverage,
            end_pos: opt.span.end as i32 - 1,
            lm_state,
            features: fv,
            score: features::total_score(&fv, &self.models.weights),
            future: self.future.estimate(&coverage),
        }
    }

    fn run(&mut self, distortion_limit: Option<u32>, arena: &mut HypothesisArena<'a>) -> Option<&'a Hypothesis<'a>> {
        let params = *self.params;
        let search_start = Instant::now();
        let nested_before = self.stats.phases.lm + self.stats.phases.lexro + self.stats.phases.memory;

        let empty = Coverage::empty();
        let initial = Hypothesis {
            parent: None,
            option: None,
            coverage: empty,
            end_pos: -1,
            lm_state: self.models.lm.begin_state(),
            features: FeatureVector::zero(),
            score: 0.0,
            future: self.future.estimate(&empty),
        };
        let mut stacks: BTreeMap<StackKey, Stack<'a>> = BTreeMap::new();
        stacks.entry(stack_key(params.stack, &initial)).or_default().add(initial, params.recombine, arena);
        let spans: Vec<(SpanRange, &'a [TranslationOption<'a>])> = self.options.spans().collect();
        let mut best: Option<&'a Hypothesis<'a>> = None;

        while let Some((key, stack)) = stacks.pop_first() {
            let mut hyps = stack.into_sorted();
            if key.cardinality as usize == self.n {
                for h in hyps {
                    if best.is_none_or(|b| h.score > b.score) {
                        best = Some(h);
                    }
                }
                continue;
            }
            if let Some(beam) = params.beam_size {
                for h in hyps.drain(beam.min(hyps.len())..) {
                    // SAFETY: the stack is gone and `h` has not been expanded.
                    unsafe { arena.recycle(h) };
                }
            }
            self.stats.stacks_expanded += 1;
            let expansion = self.expansions;
            self.expansions += 1;

            let grouped = params.stack == StackConfiguration::CoverageEndPos;
            let mut cubes: Vec<Cube<'a>> = Vec::new();
            for &(span, opts) in &spans {
                let mut members: Vec<(f64, &'a Hypothesis<'a>)> = Vec::new();
                if grouped {
                    // Every member shares coverage and end position, which is
                    // all the check looks at.
                    let rep = hyps[0];
                    if rep.coverage.overlaps(span) || !distortion_check(&rep.coverage, rep.end_pos, span, distortion_limit) {
                        continue;
                    }
                    let future = self.child_future(rep, span);
                    members.extend(hyps.iter().map(|h| (h.score + future, *h)));
                } else {
                    for &h in &hyps {
                        if !h.coverage.overlaps(span) && distortion_check(&h.coverage, h.end_pos, span, distortion_limit) {
                            members.push((h.score + self.child_future(h, span), h));
                        }
                    }
                }
                if members.is_empty() {
                    continue;
                }
                members.sort_by(|a, b| b.0.total_cmp(&a.0));
                cubes.push(Cube { options: opts, hyps: members });
            }

            let mut heap: BinaryHeap<Candidate> = cubes
                .iter()
                .enumerate()
                .map(|(c, cube)| Candidate {
                    estimate: cube.hyps[0].0 + cube.options[0].estimate,
                    cube: c as u32,
                    hyp: 0,
                    option: 0,
                })
                .collect();
            let mut pops = 0usize;
            while pops < params.pop_limit {
                let Some(cand) = heap.pop() else { break };
                pops += 1;
                let cube = &cubes[cand.cube as usize];
                let (key_score, parent) = cube.hyps[cand.hyp as usize];
                let opt = &cube.options[cand.option as usize];
                if params.trace_pops {
                    self.pops.push(Pop {
                        expansion,
                        cube: cand.cube as usize,
                        hyp: cand.hyp as usize,
                        option: cand.option as usize,
                        estimate: cand.estimate,
                    });
                }
                let child = self.extend(parent, opt);
                let target = stacks.entry(stack_key(params.stack, &child)).or_default();
                let outcome = Self::timed(params.profile, &mut self.stats.phases.memory, || {
                    target.add(child, params.recombine, arena)
                });
                self.stats.hypotheses += 1;
                if outcome != RecombineOutcome::Inserted {
                    self.stats.recombined += 1;
                }

                if (cand.option as usize + 1) < cube.options.len() {
                    heap.push(Candidate {
                        estimate: key_score + cube.options[cand.option as usize + 1].estimate,
                        option: cand.option + 1,
                        ..cand
                    });
                }
                if cand.option == 0 && (cand.hyp as usize + 1) < cube.hyps.len() {
                    heap.push(Candidate {
                        estimate: cube.hyps[cand.hyp as usize + 1].0 + cube.options[0].estimate,
                        hyp: cand.hyp + 1,
                        ..cand
                    });
                }
            }
            self.stats.pops += pops as u64;
        }

        if params.profile {
            let nested = self.stats.phases.lm + self.stats.phases.lexro + self.stats.phases.memory - nested_before;
            self.stats.phases.search += search_start.elapsed().saturating_sub(nested);
        }
        best
    }
}
