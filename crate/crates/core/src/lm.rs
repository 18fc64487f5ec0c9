//! Back-off n-gram language model read from ARPA text files.
//!
//! Scores are log10 as stored in the file. States are truncated to the
//! longest suffix that can still influence a future query, so two states
//! compare equal exactly when they score every continuation identically.

use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

/// Highest n-gram order the model accepts.
pub const MAX_ORDER: usize = 6;

pub type LmWordId = u32;

pub const UNK: LmWordId = 0;
pub const BOS: LmWordId = 1;
pub const EOS: LmWordId = 2;

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

#[derive(Debug, Error)]
pub enum ArpaError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> ArpaError {
    ArpaError::Parse { line, msg: msg.into() }
}

/// Fixed-capacity word-id sequence used as a hash key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
struct Key {
    len: u8,
    ids: [LmWordId; MAX_ORDER],
}

impl Key {
    fn new(words: &[LmWordId]) -> Key {
        let mut ids = [0; MAX_ORDER];
        ids[..words.len()].copy_from_slice(words);
        Key { len: words.len() as u8, ids }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    prob: f64,
    backoff: f64,
}

/// Language model context: the last few words, most recent last.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LmState {
    len: u8,
    words: [LmWordId; MAX_ORDER - 1],
}

impl LmState {
    pub fn empty() -> LmState {
        LmState::default()
    }

    pub fn context(&self) -> &[LmWordId] {
        &self.words[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl std::fmt::Debug for LmState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.context()).finish()
    }
}

/// Result of scoring one word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordScore {
    pub log10_prob: f64,
    pub next: LmState,
    pub oov: bool,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: FxHashMap<String, LmWordId>,
    words: Vec<String>,
    ngrams: FxHashMap<Key, Entry>,
    // Sequences shorter than `order` that are a proper prefix of some n-gram
    // or carry a non-zero backoff. Anything else can be dropped from a state.
    contexts: FxHashSet<Key>,
    counts: Vec<usize>,
}

impl NGramModel {
    pub fn load_arpa(path: impl AsRef<Path>) -> Result<NGramModel, ArpaError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| ArpaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        NGramModel::read_arpa(BufReader::new(file)).map_err(|e| match e {
            ArpaError::Io { source, .. } => ArpaError::Io { path: path.display().to_string(), source },
            other => other,
        })
    }

    pub fn from_arpa_str(text: &str) -> Result<NGramModel, ArpaError> {
        NGramModel::read_arpa(text.as_bytes())
    }

    pub fn read_arpa<R: BufRead>(reader: R) -> Result<NGramModel, ArpaError> {
        let mut model = NGramModel {
            order: 0,
            vocab: FxHashMap::default(),
            words: Vec::new(),
            ngrams: FxHashMap::default(),
            contexts: FxHashSet::default(),
            counts: Vec::new(),
        };
        for tok in [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN] {
            model.intern(tok);
        }

        #[derive(PartialEq)]
        enum Section {
            Preamble,
            Data,
            Grams(usize),
            End,
        }
        let mut section = Section::Preamble;
        let mut declared: Vec<usize> = Vec::new();
        let mut seen = 0usize;
        let mut last_line = 0;
        let mut ids = Vec::with_capacity(MAX_ORDER);

        let close_section = |section: &Section, seen: usize, declared: &[usize], line: usize| {
            if let Section::Grams(n) = section {
                if seen != declared[n - 1] {
                    return Err(parse_err(
                        line,
                        format!("header declares {} {}-grams, section has {}", declared[n - 1], n, seen),
                    ));
                }
            }
            Ok(())
        };

        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            last_line = lineno;
            let line = line.map_err(|source| ArpaError::Io { path: String::new(), source })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "\\data\\" {
                if section != Section::Preamble {
                    return Err(parse_err(lineno, "unexpected \\data\\"));
                }
                section = Section::Data;
                continue;
            }
            if line == "\\end\\" {
                close_section(&section, seen, &declared, lineno)?;
                if section == Section::Preamble || section == Section::Data {
                    return Err(parse_err(lineno, "\\end\\ before any n-gram section"));
                }
                section = Section::End;
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\') {
                if let Some(n) = rest.strip_suffix("-grams:") {
                    let n: usize = n.parse().map_err(|_| parse_err(lineno, format!("bad section header {line}")))?;
                    if section == Section::Preamble || section == Section::End {
                        return Err(parse_err(lineno, "n-gram section outside \\data\\ ... \\end\\"));
                    }
                    close_section(&section, seen, &declared, lineno)?;
                    let expected = match section {
                        Section::Grams(prev) => prev + 1,
                        _ => 1,
                    };
                    if n != expected || n > declared.len() {
                        return Err(parse_err(lineno, format!("unexpected {n}-grams section")));
                    }
                    section = Section::Grams(n);
                    seen = 0;
                    continue;
                }
                return Err(parse_err(lineno, format!("unknown section {line}")));
            }
            match section {
                Section::Preamble | Section::End => continue,
                Section::Data => {
                    let rest = line
                        .strip_prefix("ngram ")
                        .ok_or_else(|| parse_err(lineno, format!("expected 'ngram N=count', got {line:?}")))?;
                    let (n, count) = rest
                        .split_once('=')
                        .ok_or_else(|| parse_err(lineno, "missing '=' in ngram count"))?;
                    let n: usize = n.trim().parse().map_err(|_| parse_err(lineno, "bad n-gram order"))?;
                    let count: usize = count.trim().parse().map_err(|_| parse_err(lineno, "bad n-gram count"))?;
                    if n != declared.len() + 1 {
                        return Err(parse_err(lineno, format!("ngram {n} declared out of order")));
                    }
                    if n > MAX_ORDER {
                        return Err(parse_err(lineno, format!("order {n} exceeds maximum {MAX_ORDER}")));
                    }
                    declared.push(count);
                }
                Section::Grams(n) => {
                    let mut fields = line.split_whitespace();
                    let prob: f64 = fields
                        .next()
                        .and_then(|f| f.parse().ok())
                        .ok_or_else(|| parse_err(lineno, "non-numeric probability"))?;
                    ids.clear();
                    for _ in 0..n {
                        let w = fields.next().ok_or_else(|| parse_err(lineno, format!("expected {n} words")))?;
                        ids.push(model.intern(w));
                    }
                    let backoff = match fields.next() {
                        Some(f) => f.parse().map_err(|_| parse_err(lineno, "non-numeric backoff"))?,
                        None => 0.0,
                    };
                    if fields.next().is_some() {
                        return Err(parse_err(lineno, "trailing fields"));
                    }
                    model.ngrams.insert(Key::new(&ids), Entry { prob, backoff });
                    seen += 1;
                }
            }
        }
        if section != Section::End {
            return Err(parse_err(last_line, "missing \\end\\"));
        }
        model.order = declared.len();
        model.counts = declared;
        // Files without <unk> get the conventional floor.
        model.ngrams.entry(Key::new(&[UNK])).or_insert(Entry { prob: -100.0, backoff: 0.0 });
        let max_ctx = model.order.saturating_sub(1);
        for (key, entry) in &model.ngrams {
            let len = key.len as usize;
            for l in 1..len.min(max_ctx + 1) {
                model.contexts.insert(Key::new(&key.ids[..l]));
            }
            if len <= max_ctx && entry.backoff != 0.0 {
                model.contexts.insert(*key);
            }
        }
        Ok(model)
    }

    fn intern(&mut self, word: &str) -> LmWordId {
        if let Some(&id) = self.vocab.get(word) {
            return id;
        }
        let id = self.words.len() as LmWordId;
        self.vocab.insert(word.to_string(), id);
        self.words.push(word.to_string());
        id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of n-grams of each order as declared in the header.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Word id, mapping unknown words to `<unk>`.
    pub fn word_id(&self, word: &str) -> LmWordId {
        self.vocab.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: LmWordId) -> &str {
        &self.words[id as usize]
    }

    /// Stored log10 probability of an exact n-gram.
    pub fn ngram_prob(&self, words: &[LmWordId]) -> Option<f64> {
        (words.len() <= MAX_ORDER)
            .then(|| self.ngrams.get(&Key::new(words)).map(|e| e.prob))
            .flatten()
    }

    /// Stored log10 backoff weight of an n-gram (0 when absent).
    pub fn backoff(&self, words: &[LmWordId]) -> f64 {
        if words.len() > MAX_ORDER {
            return 0.0;
        }
        self.ngrams.get(&Key::new(words)).map_or(0.0, |e| e.backoff)
    }

    pub fn begin_state(&self) -> LmState {
        let mut state = LmState::empty();
        if self.order > 1 {
            state.words[0] = BOS;
            state.len = 1;
        }
        state
    }

    pub fn score_word(&self, state: &LmState, word: LmWordId) -> WordScore {
        let ctx = state.context();
        let oov = word == UNK;
        let mut acc = 0.0;
        let mut buf = [0; MAX_ORDER];
        let mut log10_prob = None;
        for k in (0..=ctx.len()).rev() {
            let suffix = &ctx[ctx.len() - k..];
            buf[..k].copy_from_slice(suffix);
            buf[k] = word;
            if let Some(e) = self.ngrams.get(&Key::new(&buf[..=k])) {
                log10_prob = Some(acc + e.prob);
                break;
            }
            if k > 0 {
                acc += self.backoff(suffix);
            }
        }
        let log10_prob = log10_prob.expect("<unk> unigram is always present");

        // Next state: longest suffix of context + word that is still a context.
        let mut full = [0; MAX_ORDER];
        full[..ctx.len()].copy_from_slice(ctx);
        full[ctx.len()] = word;
        let full = &full[..=ctx.len()];
        let max_len = full.len().min(self.order.saturating_sub(1));
        let mut next = LmState::empty();
        for len in (1..=max_len).rev() {
            let suffix = &full[full.len() - len..];
            if self.contexts.contains(&Key::new(suffix)) {
                next.words[..len].copy_from_slice(suffix);
                next.len = len as u8;
                break;
            }
        }
        WordScore { log10_prob, next, oov }
    }

    /// Scores a word sequence; returns (total log10, next state, OOV count).
    pub fn score_phrase(&self, state: &LmState, words: &[LmWordId]) -> (f64, LmState, usize) {
        let mut total = 0.0;
        let mut state = *state;
        let mut oov = 0;
        for &w in words {
            let s = self.score_word(&state, w);
            total += s.log10_prob;
            state = s.next;
            oov += s.oov as usize;
        }
        (total, state, oov)
    }

    /// Context-free estimate of a phrase: scored from an empty context.
    pub fn estimate_phrase(&self, words: &[LmWordId]) -> f64 {
        self.score_phrase(&LmState::empty(), words).0
    }
}

#[cfg(test)]
#[allow(clippy::approx_constant)] // ARPA fixture values, not log10(2)
mod tests {
    use super::*;

    const BIGRAM: &str = "\\data\\
ngram 1=5
ngram 2=3

\\1-grams:
-1.0 <unk>
-99 <s> -0.5
-0.8 </s>
-1.5 a -0.30103
-1.0 b -0.2

\\2-grams:
-0.4 <s> a
-0.7 a </s>
-0.3 b a

\\end\\
";

    #[test]
    fn unigram_only_model() {
        let text = "\\data\\\nngram 1=4\n\n\\1-grams:\n-1 <s>\n-1 </s>\n-0.5 a\n-2 <unk>\n\\end\\\n";
        let lm = NGramModel::from_arpa_str(text).unwrap();
        assert_eq!(lm.order(), 1);
        assert!(lm.begin_state().is_empty());
        let s = lm.score_word(&lm.begin_state(), lm.word_id("a"));
        assert_eq!(s.log10_prob, -0.5);
        assert!(s.next.is_empty());
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let text = BIGRAM.replace("ngram 2=3", "ngram 2=4");
        match NGramModel::from_arpa_str(&text) {
            Err(ArpaError::Parse { line, msg }) => {
                assert_eq!(line, 17);
                assert!(msg.contains("declares 4 2-grams"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_probability_names_the_line() {
        let text = BIGRAM.replace("-1.5 a", "x a");
        match NGramModel::from_arpa_str(&text) {
            Err(ArpaError::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header() {
        let text = BIGRAM.replace("ngram 1=5", "ngram one=5");
        assert!(matches!(NGramModel::from_arpa_str(&text), Err(ArpaError::Parse { line: 2, .. })));
        let text = BIGRAM.replace("\\end\\\n", "");
        assert!(NGramModel::from_arpa_str(&text).is_err());
    }

    #[test]
    fn reproduces_file_values() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        let a = lm.word_id("a");
        let b = lm.word_id("b");
        assert_eq!(lm.ngram_prob(&[BOS, a]), Some(-0.4));
        assert_eq!(lm.ngram_prob(&[b, a]), Some(-0.3));
        assert_eq!(lm.backoff(&[a]), -0.30103);
        assert_eq!(lm.backoff(&[a, b]), 0.0);
    }

    #[test]
    fn unigram_hit_from_empty_context() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        let a = lm.word_id("a");
        let s = lm.score_word(&LmState::empty(), a);
        assert_eq!(s.log10_prob, -1.5);
        assert_eq!(s.next.context(), &[a]);
    }

    #[test]
    fn backoff_path() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        let a = lm.word_id("a");
        let b = lm.word_id("b");
        let state = lm.score_word(&LmState::empty(), a).next;
        let s = lm.score_word(&state, b);
        assert_eq!(s.log10_prob, -0.30103 + -1.0);
        assert_eq!(s.log10_prob, -1.30103);
    }

    #[test]
    fn oov_scores_as_unk() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        let w = lm.word_id("zebra");
        assert_eq!(w, UNK);
        let s = lm.score_word(&lm.begin_state(), w);
        assert!(s.oov);
        assert_eq!(s.log10_prob, -0.5 + -1.0);
        let (_, _, oov) = lm.score_phrase(&lm.begin_state(), &[w, lm.word_id("a"), w]);
        assert_eq!(oov, 2);
    }

    #[test]
    fn begin_state_properties() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        assert_eq!(lm.begin_state().len(), 1);
        assert_eq!(lm.begin_state(), lm.begin_state());
        let text = BIGRAM.replace("ngram 2=3", "ngram 2=4").replace("-0.3 b a", "-0.3 b a\n-0.25 <s> </s>");
        let lm = NGramModel::from_arpa_str(&text).unwrap();
        assert_eq!(lm.score_word(&lm.begin_state(), EOS).log10_prob, -0.25);
    }

    #[test]
    fn empty_phrase() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        let st = lm.begin_state();
        assert_eq!(lm.score_phrase(&st, &[]), (0.0, st, 0));
    }

    #[test]
    fn sentence_total_by_hand() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        let a = lm.word_id("a");
        let b = lm.word_id("b");
        // <s> a b a </s>
        let (total, _, _) = lm.score_phrase(&lm.begin_state(), &[a, b, a, EOS]);
        let hand = -0.4 + (-0.30103 + -1.0) + -0.3 + -0.7;
        assert_eq!(total, hand);
    }

    #[test]
    fn state_drops_words_that_cannot_matter() {
        let lm = NGramModel::from_arpa_str(BIGRAM).unwrap();
        // </s> starts no bigram and has no backoff, so nothing is kept.
        let s = lm.score_word(&lm.begin_state(), EOS);
        assert!(s.next.is_empty());
    }
}
