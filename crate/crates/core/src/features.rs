//! Feature functions of the log-linear model and their weights.
//!
//! Feature values are raw: penalties are counts, translation and reordering
//! scores are natural logs, the language model contributes log10. The
//! weights absorb sign and scale.

use std::fmt;
use std::ops::{Index, IndexMut};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::tm::text::{self, TextError};
use crate::tm::{uniform_lexro, Vocab, WordId, LEXRO_ARITY, TM_ARITY};

pub const DISTORTION: usize = 0;
pub const PHRASE_PENALTY: usize = 1;
pub const WORD_PENALTY: usize = 2;
pub const UNKNOWN_PENALTY: usize = 3;
pub const LM: usize = 4;
pub const TM: usize = 5;
pub const LEXRO: usize = TM + TM_ARITY;
pub const NUM_FEATURES: usize = LEXRO + LEXRO_ARITY;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "distortion",
    "phrase_penalty",
    "word_penalty",
    "unknown_penalty",
    "lm",
    "tm_p_t_given_s",
    "tm_p_s_given_t",
    "tm_lex_t_given_s",
    "tm_lex_s_given_t",
    "lexro_mono_prev",
    "lexro_swap_prev",
    "lexro_disc_prev",
    "lexro_mono_next",
    "lexro_swap_next",
    "lexro_disc_next",
];

/// Log-prob given to every translation-model score of a pass-through rule.
pub fn unknown_floor() -> f64 {
    1e-9f64.ln()
}

/// Accumulated feature values h_m.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn zero() -> FeatureVector {
        FeatureVector::default()
    }

    pub fn add(&mut self, other: &FeatureVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

impl Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for FeatureVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl fmt::Debug for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(FEATURE_NAMES.iter().zip(self.0.iter())).finish()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing weights for {0}")]
    Missing(&'static str),
    #[error("{name} takes {expected} weights, found {found}")]
    Arity { name: String, expected: usize, found: usize },
}

/// One weight per feature, in [`FEATURE_NAMES`] order.
#[derive(Clone, Copy, PartialEq)]
pub struct WeightVector(pub [f64; NUM_FEATURES]);

/// Names used in weight files and how many weights each one carries.
const WEIGHT_GROUPS: [(&str, usize, usize); 7] = [
    ("Distortion0", DISTORTION, 1),
    ("PhrasePenalty0", PHRASE_PENALTY, 1),
    ("WordPenalty0", WORD_PENALTY, 1),
    ("UnknownWordPenalty0", UNKNOWN_PENALTY, 1),
    ("LM0", LM, 1),
    ("TranslationModel0", TM, TM_ARITY),
    ("LexicalReordering0", LEXRO, LEXRO_ARITY),
];

impl Default for WeightVector {
    fn default() -> Self {
        let mut w = [0.0; NUM_FEATURES];
        w[DISTORTION] = 0.3;
        w[PHRASE_PENALTY] = 0.2;
        w[WORD_PENALTY] = 0.5;
        w[UNKNOWN_PENALTY] = -10.0;
        w[LM] = 0.5;
        w[TM..TM + TM_ARITY].fill(0.2);
        w[LEXRO..LEXRO + LEXRO_ARITY].fill(0.3);
        WeightVector(w)
    }
}

impl fmt::Debug for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(FEATURE_NAMES.iter().zip(self.0.iter())).finish()
    }
}

impl WeightVector {
    pub fn zero() -> WeightVector {
        WeightVector([0.0; NUM_FEATURES])
    }

    /// Parses `Name= v1 v2 ...` lines. Blank lines, `#` comments and
    /// `[section]` headers are skipped; every group must be present.
    pub fn parse(text: &str) -> Result<WeightVector, WeightError> {
        let mut w = [0.0; NUM_FEATURES];
        let mut seen = [false; WEIGHT_GROUPS.len()];
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (name, values) = line
                .split_once('=')
                .ok_or_else(|| WeightError::Parse { line: lineno, msg: format!("expected 'Name= values', got {line:?}") })?;
            let name = name.trim();
            let (g, &(_, start, arity)) = WEIGHT_GROUPS
                .iter()
                .enumerate()
                .find(|(_, (n, _, _))| *n == name)
                .ok_or_else(|| WeightError::Parse { line: lineno, msg: format!("unknown feature {name:?}") })?;
            let values: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| WeightError::Parse { line: lineno, msg: format!("bad weight {v:?}") }))
                .collect::<Result<_, _>>()?;
            if values.len() != arity {
                return Err(WeightError::Arity { name: name.to_string(), expected: arity, found: values.len() });
            }
            w[start..start + arity].copy_from_slice(&values);
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(WeightError::Missing(WEIGHT_GROUPS[g].0));
        }
        Ok(WeightVector(w))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, start, arity) in WEIGHT_GROUPS {
            let vals: Vec<String> = self.0[start..start + arity].iter().map(|v| format!("{v}")).collect();
            out.push_str(&format!("{name}= {}\n", vals.join(" ")));
        }
        out
    }

    pub fn scaled(&self, c: f64) -> WeightVector {
        WeightVector(self.0.map(|v| v * c))
    }
}

/// Weighted model score, the dot product of weights and feature values.
pub fn total_score(fv: &FeatureVector, w: &WeightVector) -> f64 {
    fv.0.iter().zip(&w.0).map(|(h, l)| h * l).sum()
}

/// Half-open source span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SpanRange {
    pub start: u16,
    pub end: u16,
}

impl SpanRange {
    pub fn new(start: usize, end: usize) -> SpanRange {
        debug_assert!(start <= end && end <= u16::MAX as usize);
        SpanRange { start: start as u16, end: end as u16 }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Stand-in for the phrase before the first one.
    pub fn sentinel() -> SpanRange {
        SpanRange { start: 0, end: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Monotone = 0,
    Swap = 1,
    Discontinuous = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Orientation of a phrase with respect to the one translated before it.
    Previous,
    /// Orientation of a phrase with respect to the one translated after it.
    Next,
}

/// Orientation of `cur` relative to the previously translated `prev`. The
/// same class is used for the previous phrase's next-direction score.
pub fn classify_orientation(prev: SpanRange, cur: SpanRange) -> Orientation {
    if cur.start == prev.end {
        Orientation::Monotone
    } else if cur.end == prev.start {
        Orientation::Swap
    } else {
        Orientation::Discontinuous
    }
}

/// Orientation of the last phrase against the end of the sentence.
pub fn final_orientation(last: SpanRange, sentence_len: usize) -> Orientation {
    if last.end as usize == sentence_len {
        Orientation::Monotone
    } else {
        Orientation::Discontinuous
    }
}

pub fn lexro_index(o: Orientation, d: Direction) -> usize {
    match d {
        Direction::Previous => o as usize,
        Direction::Next => 3 + o as usize,
    }
}

pub fn lexro_score(lexro: &[f32; LEXRO_ARITY], o: Orientation, d: Direction) -> f64 {
    lexro[lexro_index(o, d)] as f64
}

/// `prev_end` is the last translated position (-1 before the first phrase).
pub fn distortion_penalty(prev_end: i32, next_start: i32) -> f64 {
    -((next_start - prev_end - 1).abs() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Penalties {
    pub phrase: u32,
    pub word: u32,
    pub unknown: u32,
}

pub fn penalties(target_len: usize, unknown: bool) -> Penalties {
    Penalties { phrase: 1, word: target_len as u32, unknown: unknown as u32 }
}

type PhrasePair = (Box<[WordId]>, Box<[WordId]>);

/// Reordering distributions read from their own text file, keyed by
/// (source ids, target ids). The decoder can score through this table
/// instead of the values embedded in the rule table.
#[derive(Debug, Clone, Default)]
pub struct LexRoTable {
    entries: FxHashMap<PhrasePair, [f32; LEXRO_ARITY]>,
}

impl LexRoTable {
    /// Entries mentioning words outside `vocab` can never match a rule and
    /// are dropped.
    pub fn from_text(text: &str, vocab: &Vocab) -> Result<LexRoTable, TextError> {
        let mut entries = FxHashMap::default();
        for (src, tgt, probs) in text::parse_lexro(text)? {
            let (Some(s), Some(t)) = (vocab.ids_of(src.split(' ')), vocab.ids_of(tgt.split(' '))) else {
                continue;
            };
            entries.insert((s.into_boxed_slice(), t.into_boxed_slice()), probs.map(|p| p.ln() as f32));
        }
        Ok(LexRoTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: &[WordId], target: &[WordId]) -> [f32; LEXRO_ARITY] {
        // Borrowed-key lookup needs an owned tuple; keys are short.
        let key = (Box::<[WordId]>::from(source), Box::<[WordId]>::from(target));
        self.entries.get(&key).copied().unwrap_or_else(uniform_lexro)
    }
}
