//! Translation model: text phrase tables compiled into a binary rule table.
//!
//! The compiler ([`build_binary`]) prunes each source phrase to its best
//! `table_limit` targets, folds the lexicalized reordering distribution into
//! every rule and writes a probing hash index plus an on-demand payload. The
//! reader ([`RuleTable`]) maps those files, decodes collections lazily and
//! serves the most frequent source phrases from a static cache filled at
//! open time.

mod build;
mod codec;
mod index;
mod table;
pub mod text;

use rustc_hash::FxHashMap;

pub use build::{build_binary, BuildError, build_cache_manifest, compile, select_cache, BuildOptions, BuildReport, CompiledTable};
pub use text::TextError;
pub use codec::{decode_targets, encode_targets, Codec};
pub use index::{fingerprint, ProbingIndex, Slot};
pub use table::{LookupStats, OpenOptions, RuleTable, TableError, FORMAT_VERSION, MAGIC};

pub type WordId = u32;

/// Number of translation-model scores per rule.
pub const TM_ARITY: usize = 4;
/// Number of lexicalized reordering scores per rule.
pub const LEXRO_ARITY: usize = 6;

/// Log of the uniform orientation distribution given to rules without a
/// reordering entry.
pub fn uniform_lexro() -> [f32; LEXRO_ARITY] {
    [(1.0f64 / 3.0).ln() as f32; LEXRO_ARITY]
}

/// A scored target phrase for some source phrase.
///
/// `tm_scores` holds the natural logs of p(t|s), p(s|t), lex(t|s), lex(s|t);
/// `lexro` holds the logs of [mono, swap, disc] w.r.t. the previous phrase
/// followed by [mono, swap, disc] w.r.t. the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationRule {
    pub target: Vec<WordId>,
    pub tm_scores: [f32; TM_ARITY],
    pub lexro: [f32; LEXRO_ARITY],
    /// Synthesized pass-through rule for an unknown source word.
    pub unknown: bool,
}

/// All rules for one source phrase, best p(t|s) first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetPhraseCollection {
    pub rules: Vec<TranslationRule>,
}

impl TargetPhraseCollection {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Token to id mapping shared by the source and target sides of a table.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    words: Vec<String>,
    ids: FxHashMap<String, WordId>,
}

impl Vocab {
    pub fn new() -> Vocab {
        Vocab::default()
    }

    pub fn intern(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as WordId;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Ids of all tokens, or `None` if any is unknown.
    pub fn ids_of<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Option<Vec<WordId>> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }
}
