//! Seeded generator for desk-scale models and corpora: a Zipf-distributed
//! source corpus, a phrase table over its words and frequent n-grams, a
//! reordering table, source counts, and a trigram-style ARPA model trained
//! on greedy reference translations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, Zipf};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub sentences: usize,
    /// Mean tokens per sentence; lengths are `min_len + Poisson`.
    pub mean_len: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub zipf_exponent: f64,
    /// Upper bound on targets per source phrase.
    pub rules_per_phrase: usize,
    pub max_phrase_len: usize,
    /// Multi-word source phrases taken from the most frequent corpus n-grams.
    pub multiword_phrases: usize,
    /// Probability that a corpus token is replaced by a word with no rule.
    pub oov_rate: f64,
    /// Fraction of rules given a reordering entry.
    pub lexro_coverage: f64,
    pub lm_order: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 1,
            sentences: 10_000,
            mean_len: 7.3,
            min_len: 1,
            max_len: 60,
            source_vocab: 2000,
            target_vocab: 2000,
            zipf_exponent: 1.0,
            rules_per_phrase: 4,
            max_phrase_len: 3,
            multiword_phrases: 5000,
            oov_rate: 0.0,
            lexro_coverage: 0.9,
            lm_order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticData {
    pub phrase_table: String,
    pub lexro: String,
    pub counts: String,
    pub arpa: String,
    pub corpus: String,
    /// Greedy longest-phrase translation with each phrase's primary target.
    pub references: String,
}

pub const PHRASE_TABLE_FILE: &str = "phrase-table.txt";
pub const LEXRO_FILE: &str = "reordering-table.txt";
pub const COUNTS_FILE: &str = "source-counts.txt";
pub const LM_FILE: &str = "lm.arpa";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const REFERENCE_FILE: &str = "reference.txt";

impl SyntheticData {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(PHRASE_TABLE_FILE), &self.phrase_table)?;
        fs::write(dir.join(LEXRO_FILE), &self.lexro)?;
        fs::write(dir.join(COUNTS_FILE), &self.counts)?;
        fs::write(dir.join(LM_FILE), &self.arpa)?;
        fs::write(dir.join(CORPUS_FILE), &self.corpus)?;
        fs::write(dir.join(REFERENCE_FILE), &self.references)
    }

    pub fn corpus_lines(&self) -> Vec<String> {
        self.corpus.lines().map(str::to_string).collect()
    }
}

struct Phrase {
    source: Vec<usize>,
    targets: Vec<Vec<usize>>,
}

fn src_word(i: usize) -> String {
    format!("s{i}")
}

fn tgt_word(i: usize) -> String {
    format!("t{i}")
}

/// Source sentences only, as token ids (`usize::MAX - k` marks OOV token k).
pub fn generate_corpus(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf = Zipf::new(spec.source_vocab as f64, spec.zipf_exponent).expect("valid zipf parameters");
    let extra = (spec.mean_len - spec.min_len as f64).max(0.0);
    let poisson = (extra > 0.0).then(|| Poisson::new(extra).expect("valid poisson mean"));
    let mut oov_next = 0usize;
    (0..spec.sentences)
        .map(|_| {
            let len = spec.min_len + poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            let len = len.clamp(spec.min_len.max(1), spec.max_len.max(spec.min_len).max(1));
            (0..len)
                .map(|_| {
                    if spec.oov_rate > 0.0 && rng.random_bool(spec.oov_rate.min(1.0)) {
                        oov_next += 1;
                        usize::MAX - oov_next
                    } else {
                        zipf.sample(&mut rng) as usize - 1
                    }
                })
                .collect()
        })
        .collect()
}

fn token(id: usize, vocab: usize) -> String {
    if id < vocab {
        src_word(id)
    } else {
        format!("oov{}", usize::MAX - id)
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticData {
    let corpus = generate_corpus(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_7ab1e);
    let v = spec.source_vocab;

    // Primary word-for-word translation.
    let mut primary: Vec<usize> = (0..spec.target_vocab).collect();
    primary.shuffle(&mut rng);
    let primary: Vec<usize> = (0..v).map(|i| primary[i % spec.target_vocab]).collect();

    // Frequent multi-word n-grams of the corpus.
    let mut ngram_counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for sent in &corpus {
        for n in 2..=spec.max_phrase_len {
            for g in sent.windows(n) {
                if g.iter().all(|&w| w < v) {
                    *ngram_counts.entry(g.to_vec()).or_default() += 1;
                }
            }
        }
    }
    let mut frequent: Vec<(&Vec<usize>, u64)> = ngram_counts.iter().map(|(g, &c)| (g, c)).collect();
    frequent.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    frequent.truncate(spec.multiword_phrases);

    let zipf_t = Zipf::new(spec.target_vocab as f64, spec.zipf_exponent).expect("valid zipf parameters");
    let mut phrases: Vec<Phrase> = Vec::new();
    for (w, &p) in primary.iter().enumerate().take(v) {
        let mut targets = vec![vec![p]];
        let extra = rng.random_range(0..spec.rules_per_phrase.max(1));
        for _ in 0..extra {
            let t = if rng.random_bool(0.2) {
                vec![p, zipf_t.sample(&mut rng) as usize - 1]
            } else {
                vec![zipf_t.sample(&mut rng) as usize - 1]
            };
            targets.push(t);
        }
        phrases.push(Phrase { source: vec![w], targets });
    }
    for (g, _) in &frequent {
        let mut first: Vec<usize> = g.iter().map(|&w| primary[w]).collect();
        if rng.random_bool(0.3) {
            first.swap(0, 1);
        }
        let mut targets = vec![first.clone()];
        let extra = rng.random_range(0..spec.rules_per_phrase.max(1));
        for _ in 0..extra {
            let mut t = first.clone();
            let k = rng.random_range(0..t.len());
            if t.len() > 1 && rng.random_bool(0.3) {
                t.remove(k);
            } else {
                t[k] = zipf_t.sample(&mut rng) as usize - 1;
            }
            targets.push(t);
        }
        phrases.push(Phrase { source: g.to_vec(), targets });
    }

    let gamma_primary = Gamma::new(4.0, 1.0).expect("valid gamma");
    let gamma_alt = Gamma::new(1.0, 1.0).expect("valid gamma");
    let gamma_mono = Gamma::new(3.0, 1.0).expect("valid gamma");
    let prob = |x: f64| x.clamp(1e-6, 1.0);

    let mut pt = String::new();
    let mut lexro = String::new();
    for p in &phrases {
        let src: Vec<String> = p.source.iter().map(|&w| src_word(w)).collect();
        let src = src.join(" ");
        let mut seen = BTreeSet::new();
        let targets: Vec<&Vec<usize>> = p.targets.iter().filter(|t| seen.insert((*t).clone())).collect();
        let weights: Vec<f64> = (0..targets.len())
            .map(|i| if i == 0 { gamma_primary.sample(&mut rng) } else { gamma_alt.sample(&mut rng) } + 1e-3)
            .collect();
        let total: f64 = weights.iter().sum();
        for (t, w) in targets.iter().zip(&weights) {
            let tgt: Vec<String> = t.iter().map(|&w| tgt_word(w)).collect();
            let tgt = tgt.join(" ");
            let p_tgs = prob(w / total);
            let p_sgt = prob(p_tgs * rng.random_range(0.5..1.5));
            let lex_tgs = prob(p_tgs * rng.random_range(0.3..1.2));
            let lex_sgt = prob(p_sgt * rng.random_range(0.3..1.2));
            let _ = writeln!(pt, "{src} ||| {tgt} ||| {p_sgt:.6} {lex_sgt:.6} {p_tgs:.6} {lex_tgs:.6} ||| 0-0 ||| 1");
            if rng.random_bool(spec.lexro_coverage.clamp(0.0, 1.0)) {
                let mut dist = || {
                    let d = [gamma_mono.sample(&mut rng), gamma_alt.sample(&mut rng), gamma_alt.sample(&mut rng)];
                    let s: f64 = d.iter().sum();
                    d.map(|x| prob(x / s))
                };
                let (a, b) = (dist(), dist());
                let _ = writeln!(
                    lexro,
                    "{src} ||| {tgt} ||| {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                    a[0], a[1], a[2], b[0], b[1], b[2]
                );
            }
        }
    }

    // Source counts of every table phrase.
    let mut counts_text = String::new();
    for p in &phrases {
        let c = if p.source.len() == 1 {
            corpus.iter().flatten().filter(|&&w| w == p.source[0]).count() as u64
        } else {
            ngram_counts.get(&p.source).copied().unwrap_or(0)
        };
        let src: Vec<String> = p.source.iter().map(|&w| src_word(w)).collect();
        let _ = writeln!(counts_text, "{} ||| {c}", src.join(" "));
    }

    // Greedy references: longest known phrase first, primary target.
    let lookup: BTreeMap<&[usize], &Vec<usize>> = phrases.iter().map(|p| (&p.source[..], &p.targets[0])).collect();
    let mut references: Vec<Vec<String>> = Vec::with_capacity(corpus.len());
    for sent in &corpus {
        let mut out = Vec::new();
        let mut i = 0;
        while i < sent.len() {
            let mut step = 1;
            let mut emitted = false;
            for len in (1..=spec.max_phrase_len.min(sent.len() - i)).rev() {
                if let Some(t) = lookup.get(&sent[i..i + len]) {
                    out.extend(t.iter().map(|&w| tgt_word(w)));
                    step = len;
                    emitted = true;
                    break;
                }
            }
            if !emitted {
                out.push(token(sent[i], v));
            }
            i += step;
        }
        references.push(out);
    }

    let target_vocab: Vec<String> = (0..spec.target_vocab).map(tgt_word).collect();
    let arpa = build_arpa(&references, &target_vocab, spec.lm_order.clamp(1, crate::lm::MAX_ORDER));

    let mut corpus_text = String::new();
    for sent in &corpus {
        let toks: Vec<String> = sent.iter().map(|&w| token(w, v)).collect();
        corpus_text.push_str(&toks.join(" "));
        corpus_text.push('\n');
    }
    let mut ref_text = String::new();
    for r in &references {
        ref_text.push_str(&r.join(" "));
        ref_text.push('\n');
    }
    SyntheticData { phrase_table: pt, lexro, counts: counts_text, arpa, corpus: corpus_text, references: ref_text }
}

/// Absolute-discounting back-off model. Trigrams and above need two
/// occurrences; the back-off weight of a context is the discounted mass.
fn build_arpa(sentences: &[Vec<String>], vocab: &[String], order: usize) -> String {
    const DISCOUNT: f64 = 0.5;
    let mut counts: Vec<BTreeMap<Vec<&str>, u64>> = vec![BTreeMap::new(); order];
    let mut unigram_total = 0u64;
    for s in sentences {
        let mut toks: Vec<&str> = vec!["<s>"];
        toks.extend(s.iter().map(String::as_str));
        toks.push("</s>");
        for n in 1..=order {
            for g in toks.windows(n) {
                if n == 1 && g[0] == "<s>" {
                    continue;
                }
                *counts[n - 1].entry(g.to_vec()).or_default() += 1;
            }
        }
        unigram_total += toks.len() as u64 - 1;
    }
    for w in vocab {
        counts[0].entry(vec![w.as_str()]).or_insert(0);
    }
    counts[0].insert(vec!["<unk>"], 0);
    // Prune higher orders, keeping every prefix of a kept n-gram.
    for n in 3..=order {
        counts[n - 1].retain(|_, c| *c >= 2);
    }

    // Context statistics: total count and number of continuations kept.
    let mut ctx_total: Vec<BTreeMap<Vec<&str>, u64>> = vec![BTreeMap::new(); order];
    for n in 2..=order {
        for (g, &c) in &counts[n - 1] {
            *ctx_total[n - 2].entry(g[..n - 1].to_vec()).or_default() += c;
        }
    }
    // Denominator for an n-gram's probability: occurrences of its history
    // as a history (counted from all (n)-gram occurrences before pruning is
    // approximated by kept mass plus the discount).
    let vocab_size = counts[0].len() as f64 + 1.0;
    let mut out = String::from("\\data\\\n");
    let mut sizes: Vec<usize> = counts.iter().map(BTreeMap::len).collect();
    sizes[0] += 1; // <s>
    for (i, s) in sizes.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", i + 1, s);
    }
    let backoff = |g: &Vec<&str>| -> Option<f64> {
        let n = g.len();
        if n >= order {
            return None;
        }
        let total = *ctx_total[n - 1].get(g)? as f64;
        let types = counts[n].range(g.clone()..).take_while(|(k, _)| k[..n] == g[..]).count() as f64;
        Some((DISCOUNT * types / total).clamp(1e-6, 1.0).log10())
    };
    let fmt_line = |out: &mut String, lp: f64, g: &Vec<&str>| {
        let _ = match backoff(g) {
            Some(b) => writeln!(out, "{lp:.6}\t{}\t{b:.6}", g.join(" ")),
            None => writeln!(out, "{lp:.6}\t{}", g.join(" ")),
        };
    };

    out.push_str("\n\\1-grams:\n");
    fmt_line(&mut out, -99.0, &vec!["<s>"]);
    for (g, &c) in &counts[0] {
        let p = (c as f64 + 1.0) / (unigram_total as f64 + vocab_size);
        fmt_line(&mut out, p.log10(), g);
    }
    for n in 2..=order {
        let _ = write!(out, "\n\\{n}-grams:\n");
        for (g, &c) in &counts[n - 1] {
            let total = ctx_total[n - 2][&g[..n - 1]] as f64;
            let p = ((c as f64 - DISCOUNT) / total).max(1e-6);
            fmt_line(&mut out, p.log10(), g);
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::NGramModel;
    use crate::tm::text;

    fn small() -> SyntheticSpec {
        SyntheticSpec { sentences: 300, source_vocab: 200, target_vocab: 200, multiword_phrases: 300, ..Default::default() }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate_synthetic(&small());
        assert_eq!(a, generate_synthetic(&small()));
        assert_ne!(a, generate_synthetic(&SyntheticSpec { seed: 2, ..small() }));
        let lm = NGramModel::from_arpa_str(&a.arpa).unwrap();
        assert_eq!(lm.order(), 3);
        assert!(!text::parse_phrase_table(&a.phrase_table).unwrap().is_empty());
        text::parse_lexro(&a.lexro).unwrap();
        text::parse_counts(&a.counts).unwrap();
        assert_eq!(a.corpus.lines().count(), 300);
        assert_eq!(a.references.lines().count(), 300);
    }

    #[test]
    fn oov_rate_controls_unknown_tokens() {
        let clean = generate_synthetic(&small());
        assert!(!clean.corpus.contains("oov"));
        let noisy = generate_synthetic(&SyntheticSpec { oov_rate: 0.2, ..small() });
        assert!(noisy.corpus.contains("oov"));
    }
}
