use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;

use crate::arena::{Pool, QueueStats, RecyclingQueue};
use crate::features::{FeatureVector, SpanRange};
use crate::lm::LmState;

use super::coverage::Coverage;
use super::options::TranslationOption;

/// Partial translation: a chain of applied options.
#[derive(Debug, Clone, Copy)]
pub struct Hypothesis<'a> {
    pub parent: Option<&'a Hypothesis<'a>>,
    pub option: Option<&'a TranslationOption<'a>>,
    pub coverage: Coverage,
    /// Last translated source position, -1 before the first phrase.
    pub end_pos: i32,
    pub lm_state: LmState,
    pub features: FeatureVector,
    pub score: f64,
    pub future: f64,
}

impl<'a> Hypothesis<'a> {
    pub fn total(&self) -> f64 {
        self.score + self.future
    }

    pub fn last_span(&self) -> SpanRange {
        self.option.map_or(SpanRange::sentinel(), |o| o.span)
    }

    /// Everything later feature values can depend on.
    pub fn recombination_key(&self) -> RecombinationKey {
        let (start, next) = match self.option {
            Some(o) => (o.span.start as i32, [o.lexro[3].to_bits(), o.lexro[4].to_bits(), o.lexro[5].to_bits()]),
            None => (-1, [0; 3]),
        };
        RecombinationKey {
            coverage: self.coverage,
            end_pos: self.end_pos,
            lm_state: self.lm_state,
            last_start: start,
            lexro_next: next,
        }
    }

    /// Applied options from first to last.
    pub fn derivation(&self) -> Vec<&'a TranslationOption<'a>> {
        let mut out = Vec::new();
        let mut cur = Some(self);
        while let Some(h) = cur {
            if let Some(o) = h.option {
                out.push(o);
            }
            cur = h.parent;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RecombinationKey {
    coverage: Coverage,
    end_pos: i32,
    lm_state: LmState,
    last_start: i32,
    lexro_next: [u32; 3],
}

impl RecombinationKey {
    fn order_key(&self) -> (Coverage, i32, &[u32], i32, [u32; 3]) {
        (self.coverage, self.end_pos, self.lm_state.context(), self.last_start, self.lexro_next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StackConfiguration {
    #[default]
    Cardinality,
    Coverage,
    CoverageEndPos,
}

impl StackConfiguration {
    pub const ALL: [StackConfiguration; 3] =
        [StackConfiguration::Cardinality, StackConfiguration::Coverage, StackConfiguration::CoverageEndPos];

    pub fn name(&self) -> &'static str {
        match self {
            StackConfiguration::Cardinality => "cardinality",
            StackConfiguration::Coverage => "coverage",
            StackConfiguration::CoverageEndPos => "coverage-endpos",
        }
    }
}

impl fmt::Display for StackConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StackConfiguration {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        StackConfiguration::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown stack configuration {s:?} (cardinality|coverage|coverage-endpos)"))
    }
}

/// Stack identity. Ordering is processing order: cardinality first, so every
/// parent stack precedes its children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StackKey {
    pub cardinality: u16,
    pub coverage: Option<Coverage>,
    pub end_pos: Option<i32>,
}

pub fn stack_key(config: StackConfiguration, hyp: &Hypothesis<'_>) -> StackKey {
    let cardinality = hyp.coverage.cardinality() as u16;
    match config {
        StackConfiguration::Cardinality => StackKey { cardinality, coverage: None, end_pos: None },
        StackConfiguration::Coverage => StackKey { cardinality, coverage: Some(hyp.coverage), end_pos: None },
        StackConfiguration::CoverageEndPos => {
            StackKey { cardinality, coverage: Some(hyp.coverage), end_pos: Some(hyp.end_pos) }
        }
    }
}

/// Pool-backed storage for hypotheses with LIFO reuse of discarded ones.
pub struct HypothesisArena<'a> {
    pool: &'a Pool,
    queue: RecyclingQueue<'a, Hypothesis<'a>>,
}

impl<'a> HypothesisArena<'a> {
    pub fn new(pool: &'a Pool) -> Self {
        HypothesisArena { pool, queue: RecyclingQueue::new("hypothesis") }
    }

    pub fn alloc(&mut self, hyp: Hypothesis<'a>) -> &'a Hypothesis<'a> {
        self.queue.acquire(self.pool, hyp)
    }

    /// # Safety
    ///
    /// `hyp` must come from [`alloc`](Self::alloc) and must not be reachable
    /// anywhere else (no children, not stored in any stack).
    pub unsafe fn recycle(&mut self, hyp: &'a Hypothesis<'a>) {
        // SAFETY: forwarded contract.
        unsafe { self.queue.recycle(hyp) }
    }

    pub fn stats(&self) -> QueueStats {
        self.queue.stats()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecombineOutcome {
    Inserted,
    MergedKeptExisting,
    MergedReplaced,
}

/// Hypotheses sharing a stack key, at most one per recombination key.
#[derive(Default)]
pub struct Stack<'a> {
    hyps: Vec<&'a Hypothesis<'a>>,
    index: FxHashMap<RecombinationKey, usize>,
}

impl<'a> Stack<'a> {
    pub fn new() -> Self {
        Stack { hyps: Vec::new(), index: FxHashMap::default() }
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    /// Adds `hyp`, merging it with an existing hypothesis of the same
    /// recombination key when `recombine` is set. Ties keep the existing one.
    pub fn add(&mut self, hyp: Hypothesis<'a>, recombine: bool, arena: &mut HypothesisArena<'a>) -> RecombineOutcome {
        if !recombine {
            self.hyps.push(arena.alloc(hyp));
            return RecombineOutcome::Inserted;
        }
        let key = hyp.recombination_key();
        match self.index.get(&key) {
            None => {
                self.index.insert(key, self.hyps.len());
                self.hyps.push(arena.alloc(hyp));
                RecombineOutcome::Inserted
            }
            Some(&i) if self.hyps[i].score >= hyp.score => RecombineOutcome::MergedKeptExisting,
            Some(&i) => {
                let old = std::mem::replace(&mut self.hyps[i], arena.alloc(hyp));
                // SAFETY: stacks are expanded after they stop receiving
                // hypotheses, so `old` has no children, and it has just been
                // removed from the only place holding it.
                unsafe { arena.recycle(old) };
                RecombineOutcome::MergedReplaced
            }
        }
    }

    /// Best first by total estimate, with a deterministic tie order.
    pub fn into_sorted(self) -> Vec<&'a Hypothesis<'a>> {
        let mut hyps = self.hyps;
        hyps.sort_by(|a, b| {
            b.total()
                .total_cmp(&a.total())
                .then_with(|| a.recombination_key().order_key().cmp(&b.recombination_key().order_key()))
        });
        hyps
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Hypothesis<'a>> + '_ {
        self.hyps.iter().copied()
    }
}
