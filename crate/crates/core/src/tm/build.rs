use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rustc_hash::FxHashMap;
use thiserror::Error;

use super::codec::encode_targets;
use super::index::{fingerprint, ProbingIndex, Slot};
use super::table::{checksum, Header, TableError, CACHE_FILE, PAYLOAD_FILE, TABLE_FILE};
use super::text::{self, TextError, TextRule};
use super::{uniform_lexro, Codec, TargetPhraseCollection, TranslationRule, Vocab, LEXRO_ARITY, TM_ARITY};

const FINGERPRINT_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    /// Keep at most this many targets per source phrase, best p(t|s) first.
    pub table_limit: usize,
    pub codec: Codec,
    /// Number of source phrases listed in the static cache manifest.
    pub cache_size: usize,
    pub hash_load_factor: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { table_limit: 100, codec: Codec::Identity, cache_size: 1000, hash_load_factor: 0.5 }
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid build options: {0}")]
    Options(String),
    #[error("phrase too long ({0} tokens)")]
    PhraseTooLong(usize),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub rules_read: usize,
    pub rules_kept: usize,
    pub source_phrases: usize,
    pub lexro_fallbacks: usize,
    pub max_quantization_error: f64,
    pub fingerprint_collisions: usize,
    pub index_slots: usize,
    pub payload_bytes: usize,
    pub table_bytes: usize,
    pub cache_entries: usize,
    /// False when no counts were supplied and the cache was ranked by
    /// summed p(t|s) instead.
    pub cache_from_counts: bool,
    pub max_source_len: usize,
}

impl BuildReport {
    pub fn lexro_fallback_rate(&self) -> f64 {
        if self.rules_kept == 0 {
            0.0
        } else {
            self.lexro_fallbacks as f64 / self.rules_kept as f64
        }
    }
}

impl std::fmt::Display for BuildReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rules_read\t{}", self.rules_read)?;
        writeln!(f, "rules_kept\t{}", self.rules_kept)?;
        writeln!(f, "source_phrases\t{}", self.source_phrases)?;
        writeln!(f, "lexro_fallbacks\t{}", self.lexro_fallbacks)?;
        writeln!(f, "lexro_fallback_rate\t{:.6}", self.lexro_fallback_rate())?;
        writeln!(f, "max_quantization_error\t{:.3e}", self.max_quantization_error)?;
        writeln!(f, "fingerprint_collisions\t{}", self.fingerprint_collisions)?;
        writeln!(f, "index_slots\t{}", self.index_slots)?;
        writeln!(f, "payload_bytes\t{}", self.payload_bytes)?;
        writeln!(f, "table_bytes\t{}", self.table_bytes)?;
        writeln!(f, "cache_entries\t{}", self.cache_entries)?;
        writeln!(f, "cache_ranking\t{}", if self.cache_from_counts { "counts" } else { "p_tgs_mass" })?;
        write!(f, "max_source_len\t{}", self.max_source_len)
    }
}

/// In-memory result of compiling a phrase table.
#[derive(Debug, Clone)]
pub struct CompiledTable {
    pub table: Vec<u8>,
    pub payload: Vec<u8>,
    pub manifest: String,
    pub report: BuildReport,
}

/// Ranks `(phrase, count)` pairs by count, highest first, ties broken by
/// the phrase text, and keeps the first `cache_size`.
pub fn select_cache(counts: &[(String, f64)], cache_size: usize) -> Vec<String> {
    let mut ranked: Vec<&(String, f64)> = counts.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(cache_size).map(|(p, _)| p.clone()).collect()
}

pub fn build_cache_manifest(counts_text: &str, cache_size: usize) -> Result<Vec<String>, TextError> {
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    for (phrase, count) in text::parse_counts(counts_text)? {
        *merged.entry(phrase).or_default() += count;
    }
    let counts: Vec<(String, f64)> = merged.into_iter().collect();
    Ok(select_cache(&counts, cache_size))
}

/// Compiles text inputs into table, payload and manifest buffers.
pub fn compile(
    phrase_table: &str,
    lexro: Option<&str>,
    counts: Option<&str>,
    options: &BuildOptions,
) -> Result<CompiledTable, BuildError> {
    if options.table_limit == 0 {
        return Err(BuildError::Options("table_limit must be at least 1".into()));
    }
    if !(options.hash_load_factor > 0.0 && options.hash_load_factor < 1.0) {
        return Err(BuildError::Options("hash_load_factor must lie in (0, 1)".into()));
    }

    let rules = text::parse_phrase_table(phrase_table)?;
    let mut lexro_map: FxHashMap<(String, String), [f64; LEXRO_ARITY]> = FxHashMap::default();
    if let Some(l) = lexro {
        for (s, t, p) in text::parse_lexro(l)? {
            lexro_map.insert((s, t), p);
        }
    }
    let counts = counts.map(text::parse_counts).transpose()?;

    let mut report = BuildReport { rules_read: rules.len(), ..Default::default() };
    let mut grouped: BTreeMap<&str, Vec<&TextRule>> = BTreeMap::new();
    for r in &rules {
        grouped.entry(r.source.as_str()).or_default().push(r);
    }

    let mut vocab = Vocab::new();
    let mut payload = Vec::new();
    let mut slots = Vec::with_capacity(grouped.len());
    let mut seen_fps = HashSet::with_capacity(grouped.len());
    let mut p_mass: Vec<(String, f64)> = Vec::with_capacity(grouped.len());

    for (source, targets) in grouped.iter_mut() {
        targets.sort_by(|a, b| {
            b.p_target_given_source()
                .total_cmp(&a.p_target_given_source())
                .then_with(|| a.target.cmp(&b.target))
        });
        targets.dedup_by(|a, b| a.target == b.target);
        targets.truncate(options.table_limit);

        let source_ids: Vec<u32> = source.split(' ').map(|w| vocab.intern(w)).collect();
        if source_ids.len() > u8::MAX as usize {
            return Err(BuildError::PhraseTooLong(source_ids.len()));
        }
        report.max_source_len = report.max_source_len.max(source_ids.len());

        let mut collection = TargetPhraseCollection { rules: Vec::with_capacity(targets.len()) };
        for rule in targets.iter() {
            let target: Vec<u32> = rule.target.split(' ').map(|w| vocab.intern(w)).collect();
            if target.len() > u16::MAX as usize {
                return Err(BuildError::PhraseTooLong(target.len()));
            }
            let tm = rule.log_scores();
            let mut tm_scores = [0f32; TM_ARITY];
            for (q, v) in tm_scores.iter_mut().zip(tm) {
                *q = v as f32;
                report.max_quantization_error = report.max_quantization_error.max((*q as f64 - v).abs());
            }
            let lexro = match lexro_map.get(&(rule.source.clone(), rule.target.clone())) {
                Some(p) => {
                    let mut l = [0f32; LEXRO_ARITY];
                    for (q, v) in l.iter_mut().zip(p) {
                        let v = v.ln();
                        *q = v as f32;
                        report.max_quantization_error = report.max_quantization_error.max((*q as f64 - v).abs());
                    }
                    l
                }
                None => {
                    report.lexro_fallbacks += 1;
                    uniform_lexro()
                }
            };
            collection.rules.push(TranslationRule { target, tm_scores, lexro, unknown: false });
        }
        report.rules_kept += collection.rules.len();
        p_mass.push((source.to_string(), targets.iter().map(|r| r.p_target_given_source()).sum()));

        let body = encode_targets(&collection, options.codec);
        let offset = payload.len() as u64;
        payload.extend_from_slice(&(source_ids.len() as u16).to_le_bytes());
        for id in &source_ids {
            payload.extend_from_slice(&id.to_le_bytes());
        }
        payload.extend_from_slice(&(body.len() as u32).to_le_bytes());
        payload.extend_from_slice(&body);
        let fp = fingerprint(&source_ids, FINGERPRINT_SEED);
        if !seen_fps.insert(fp) {
            report.fingerprint_collisions += 1;
        }
        slots.push(Slot { fingerprint: fp, offset, len: (payload.len() as u64 - offset) as u32 });
    }
    report.source_phrases = grouped.len();

    let slot_count = ProbingIndex::slot_count_for(slots.len(), options.hash_load_factor);
    let index = ProbingIndex::build(&slots, slot_count);
    report.index_slots = slot_count;

    let mut vocab_bytes = Vec::new();
    for w in vocab.words() {
        vocab_bytes.extend_from_slice(&(w.len() as u32).to_le_bytes());
        vocab_bytes.extend_from_slice(w.as_bytes());
    }
    let mut body = index;
    body.extend_from_slice(&vocab_bytes);

    let header = Header {
        codec: options.codec,
        max_source_len: report.max_source_len as u8,
        table_limit: options.table_limit.min(u32::MAX as usize) as u32,
        source_phrases: grouped.len() as u64,
        rules: report.rules_kept as u64,
        slots: slot_count as u64,
        vocab_words: vocab.len() as u64,
        vocab_bytes: vocab_bytes.len() as u64,
        payload_len: payload.len() as u64,
        payload_checksum: checksum(&payload),
        body_checksum: checksum(&body),
        seed: FINGERPRINT_SEED,
    };
    let mut table = header.to_bytes().to_vec();
    table.extend_from_slice(&body);

    let candidates: Vec<(String, f64)> = match &counts {
        Some(counts) => {
            let mut by_phrase: FxHashMap<&str, f64> = FxHashMap::default();
            for (p, c) in counts {
                *by_phrase.entry(p.as_str()).or_default() += c;
            }
            grouped.keys().map(|s| (s.to_string(), by_phrase.get(s).copied().unwrap_or(0.0))).collect()
        }
        None => p_mass,
    };
    report.cache_from_counts = counts.is_some();
    let cached = select_cache(&candidates, options.cache_size);
    report.cache_entries = cached.len();
    let mut manifest = String::new();
    for phrase in cached {
        manifest.push_str(&phrase);
        manifest.push('\n');
    }

    report.payload_bytes = payload.len();
    report.table_bytes = table.len();
    Ok(CompiledTable { table, payload, manifest, report })
}

fn read(path: &Path) -> Result<String, BuildError> {
    fs::read_to_string(path).map_err(|source| BuildError::Io { path: path.to_path_buf(), source })
}

/// Compiles text files into a rule-table directory.
pub fn build_binary(
    phrase_table: &Path,
    lexro: Option<&Path>,
    counts: Option<&Path>,
    options: &BuildOptions,
    out_dir: &Path,
) -> Result<BuildReport, BuildError> {
    let pt = read(phrase_table)?;
    let lexro = lexro.map(read).transpose()?;
    let counts = counts.map(read).transpose()?;
    let compiled = compile(&pt, lexro.as_deref(), counts.as_deref(), options)?;
    let write = |name: &str, bytes: &[u8]| {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|source| BuildError::Io { path, source })
    };
    fs::create_dir_all(out_dir).map_err(|source| BuildError::Io { path: out_dir.to_path_buf(), source })?;
    write(TABLE_FILE, &compiled.table)?;
    write(PAYLOAD_FILE, &compiled.payload)?;
    write(CACHE_FILE, compiled.manifest.as_bytes())?;
    Ok(compiled.report)
}

#[cfg(test)]
mod tests {
    use super::super::{LookupStats, OpenOptions, RuleTable, TableError};
    use super::*;

    const PT: &str = "\
a ||| x ||| 0.5 0.5 0.2 0.5
a ||| y ||| 0.5 0.5 0.7 0.5
a ||| z ||| 0.5 0.5 0.1 0.5
b c ||| y z ||| 0.4 0.3 0.9 0.2
";

    fn open(c: &CompiledTable, opts: OpenOptions) -> Result<RuleTable, TableError> {
        RuleTable::from_buffers(c.table.clone(), c.payload.clone(), &c.manifest, opts)
    }

    fn targets(t: &RuleTable, src: &[&str]) -> Vec<String> {
        let c = t.lookup_tokens(src, &mut LookupStats::default()).unwrap().unwrap();
        c.rules.iter().map(|r| r.target.iter().map(|&w| t.vocab().word(w)).collect::<Vec<_>>().join(" ")).collect()
    }

    #[test]
    fn cache_manifest_ranking() {
        assert!(build_cache_manifest("a ||| 5\nb ||| 3\nc ||| 3\n", 0).unwrap().is_empty());
        assert_eq!(build_cache_manifest("a ||| 5\nc ||| 3\nb ||| 3\n", 2).unwrap(), vec!["a", "b"]);
        assert_eq!(build_cache_manifest("c ||| 3\na ||| 5\nb ||| 4\n", 10).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn prunes_to_table_limit_by_p_t_given_s() {
        let opts = BuildOptions { table_limit: 2, ..Default::default() };
        let c = compile(PT, None, None, &opts).unwrap();
        assert_eq!(c.report.rules_read, 4);
        assert_eq!(c.report.rules_kept, 3);
        let t = open(&c, OpenOptions::default()).unwrap();
        assert_eq!(targets(&t, &["a"]), vec!["y", "x"]);
        assert_eq!(targets(&t, &["b", "c"]), vec!["y z"]);
        assert_eq!(t.max_source_len(), 2);
    }

    #[test]
    fn missing_lexro_falls_back_to_uniform() {
        let c = compile(PT, Some(""), None, &BuildOptions::default()).unwrap();
        assert_eq!(c.report.lexro_fallbacks, 4);
        assert_eq!(c.report.lexro_fallback_rate(), 1.0);
        let t = open(&c, OpenOptions::default()).unwrap();
        let col = t.lookup_tokens(&["a"], &mut LookupStats::default()).unwrap().unwrap();
        assert!(col.rules.iter().all(|r| r.lexro == uniform_lexro()));
    }

    #[test]
    fn lexro_values_are_embedded() {
        let lexro = "a ||| y ||| 0.7 0.2 0.1 0.6 0.3 0.1\n";
        let c = compile(PT, Some(lexro), None, &BuildOptions::default()).unwrap();
        assert_eq!(c.report.lexro_fallbacks, 3);
        let t = open(&c, OpenOptions::default()).unwrap();
        let col = t.lookup_tokens(&["a"], &mut LookupStats::default()).unwrap().unwrap();
        assert_eq!(col.rules[0].lexro[0], 0.7f64.ln() as f32);
        assert_eq!(col.rules[0].lexro[5], 0.1f64.ln() as f32);
    }

    #[test]
    fn cache_size_and_counters() {
        let opts = BuildOptions { cache_size: 1, ..Default::default() };
        let c = compile(PT, None, Some("b c ||| 10\na ||| 2\n"), &opts).unwrap();
        assert_eq!(c.manifest, "b c\n");
        let t = open(&c, OpenOptions::default()).unwrap();
        assert_eq!(t.cache_len(), 1);
        let mut stats = LookupStats::default();
        t.lookup_tokens(&["b", "c"], &mut stats).unwrap().unwrap();
        assert_eq!((stats.cache_hits, stats.decodes), (1, 0));
        t.lookup_tokens(&["a"], &mut stats).unwrap().unwrap();
        assert_eq!((stats.cache_hits, stats.decodes), (1, 1));
        assert!(t.lookup_tokens(&["q"], &mut stats).unwrap().is_none());
        assert!(t.lookup_tokens(&["c", "b"], &mut stats).unwrap().is_none());

        let none = open(&c, OpenOptions { cache_limit: Some(0), ..Default::default() }).unwrap();
        assert_eq!(none.cache_len(), 0);
        assert_eq!(targets(&none, &["b", "c"]), vec!["y z"]);
    }

    #[test]
    fn cache_without_counts_uses_probability_mass() {
        let opts = BuildOptions { cache_size: 1, ..Default::default() };
        let c = compile(PT, None, None, &opts).unwrap();
        assert!(!c.report.cache_from_counts);
        // a: 0.2 + 0.7 + 0.1 = 1.0 beats b c: 0.9
        assert_eq!(c.manifest, "a\n");
    }

    #[test]
    fn corrupted_files_fail_to_open() {
        let c = compile(PT, None, None, &BuildOptions::default()).unwrap();
        let mut bad = c.clone();
        bad.table[0] = b'X';
        assert!(matches!(open(&bad, OpenOptions::default()), Err(TableError::BadMagic)));
        let mut bad = c.clone();
        bad.table[4] = 9;
        assert!(matches!(open(&bad, OpenOptions::default()), Err(TableError::Version { found: 9 })));
        let mut bad = c.clone();
        bad.table.truncate(bad.table.len() - 3);
        assert!(matches!(open(&bad, OpenOptions::default()), Err(TableError::Truncated(_))));
        let mut bad = c.clone();
        let n = bad.table.len();
        bad.table[n - 1] ^= 0xff;
        assert!(matches!(open(&bad, OpenOptions::default()), Err(TableError::Checksum(_))));
        let mut bad = c.clone();
        bad.payload.pop();
        assert!(matches!(open(&bad, OpenOptions::default()), Err(TableError::Truncated(_))));
        let mut bad = c.clone();
        let n = bad.payload.len();
        bad.payload[n - 1] ^= 0xff;
        let opts = OpenOptions { verify_payload: true, ..Default::default() };
        assert!(matches!(open(&bad, opts), Err(TableError::Checksum(_))));
        assert!(open(&c, opts).is_ok());
    }

    #[test]
    fn bad_options_and_lines() {
        let opts = BuildOptions { table_limit: 0, ..Default::default() };
        assert!(matches!(compile(PT, None, None, &opts), Err(BuildError::Options(_))));
        let err = compile("a ||| b ||| 0.1 0.1 0.1 0.1\nbroken\n", None, None, &BuildOptions::default()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn writes_and_opens_directory() {
        let dir = tempfile::tempdir().unwrap();
        let pt = dir.path().join("pt.txt");
        fs::write(&pt, PT).unwrap();
        let out = dir.path().join("bin");
        let report = build_binary(&pt, None, None, &BuildOptions::default(), &out).unwrap();
        assert_eq!(report.source_phrases, 2);
        let t = RuleTable::open(&out).unwrap();
        assert_eq!(t.cache_len(), 2);
        assert_eq!(targets(&t, &["a"]), vec!["y", "x", "z"]);
    }
}
