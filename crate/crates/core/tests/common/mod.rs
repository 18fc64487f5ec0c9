#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swiftdec::features::{LexRoTable, WeightVector, NUM_FEATURES};
use swiftdec::lm::NGramModel;
use swiftdec::oracle_bench::{generate_synthetic, SyntheticData, SyntheticSpec};
use swiftdec::search::Models;
use swiftdec::tm::{build_binary, compile, BuildOptions, Codec, OpenOptions, RuleTable};
use tempfile::TempDir;

/// Serializes the heavy tests of one binary so timings don't interfere.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// The 10k-sentence desk corpus with its models on disk.
pub struct Desk {
    pub data: SyntheticData,
    pub sentences: Vec<String>,
    pub dir: TempDir,
}

pub const IDENTITY_DIR: &str = "table-identity";
pub const COMPRESSED_DIR: &str = "table-compressed";
/// Built without reordering scores, for the separate-file path.
pub const PLAIN_DIR: &str = "table-plain";

pub fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let data = generate_synthetic(&SyntheticSpec::default());
        let dir = tempfile::tempdir().unwrap();
        data.write_to(dir.path()).unwrap();
        let p = |f: &str| dir.path().join(f);
        let pt = p(swiftdec::oracle_bench::synth::PHRASE_TABLE_FILE);
        let lexro = p(swiftdec::oracle_bench::synth::LEXRO_FILE);
        let counts = p(swiftdec::oracle_bench::synth::COUNTS_FILE);
        let opts = BuildOptions { cache_size: 10_000, ..Default::default() };
        build_binary(&pt, Some(&lexro), Some(&counts), &opts, &p(IDENTITY_DIR)).unwrap();
        let compressed = BuildOptions { codec: Codec::Compressed, ..opts };
        build_binary(&pt, Some(&lexro), Some(&counts), &compressed, &p(COMPRESSED_DIR)).unwrap();
        build_binary(&pt, None, Some(&counts), &opts, &p(PLAIN_DIR)).unwrap();
        let sentences = data.corpus_lines();
        Desk { data, sentences, dir }
    })
}

impl Desk {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn lm(&self) -> NGramModel {
        NGramModel::from_arpa_str(&self.data.arpa).unwrap()
    }

    pub fn models(&self, table_dir: &str, cache_limit: Option<usize>) -> Models {
        let table =
            RuleTable::open_with(self.path(table_dir), OpenOptions { cache_limit, verify_payload: true }).unwrap();
        Models::new(table, self.lm(), WeightVector::default())
    }

    pub fn separate_lexro_models(&self, cache_limit: Option<usize>) -> Models {
        let models = self.models(PLAIN_DIR, cache_limit);
        let lexro = LexRoTable::from_text(&self.data.lexro, models.table.vocab()).unwrap();
        models.with_separate_lexro(lexro)
    }
}

/// A small random model: grammar, back-off LM and weights.
pub struct Instance {
    pub sentence: String,
    pub phrase_table: String,
    pub lexro: String,
    pub arpa: String,
    pub weights: WeightVector,
}

const SRC: [&str; 5] = ["a", "b", "c", "d", "e"];
const TGT: [&str; 6] = ["x", "y", "z", "w", "v", "u"];

fn prob(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.01..1.0)
}

/// Sentences of 4 to 6 words, at most 20 rules (some words may lack one and
/// become pass-through), an order-2 or order-3 LM with back-off paths.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(4..=6);
    let words: Vec<&str> = (0..len).map(|_| SRC[rng.random_range(0..SRC.len())]).collect();

    let n_rules = rng.random_range(4..=20);
    let mut phrase_table = String::new();
    let mut lexro = String::new();
    for _ in 0..n_rules {
        let plen = rng.random_range(1..=3usize).min(len);
        let start = rng.random_range(0..=len - plen);
        let src = words[start..start + plen].join(" ");
        let tlen = rng.random_range(1..=3);
        let tgt: Vec<&str> = (0..tlen).map(|_| TGT[rng.random_range(0..TGT.len())]).collect();
        let tgt = tgt.join(" ");
        let probs: Vec<String> = (0..4).map(|_| format!("{:.4}", prob(&mut rng))).collect();
        writeln!(phrase_table, "{src} ||| {tgt} ||| {}", probs.join(" ")).unwrap();
        if rng.random_bool(0.8) {
            let probs: Vec<String> = (0..6).map(|_| format!("{:.4}", prob(&mut rng))).collect();
            writeln!(lexro, "{src} ||| {tgt} ||| {}", probs.join(" ")).unwrap();
        }
    }

    let order = rng.random_range(2..=3);
    let mut vocab: Vec<&str> = vec!["</s>"];
    vocab.extend(TGT);
    // Pass-through words sometimes are known to the LM.
    vocab.extend(SRC.iter().filter(|_| rng.random_bool(0.3)));
    let with_unk = rng.random_bool(0.5);
    let mut uni = Vec::new();
    let bo = |rng: &mut ChaCha8Rng| if rng.random_bool(0.7) { format!("\t{:.3}", -rng.random_range(0.0..1.0)) } else { String::new() };
    uni.push(format!("-99\t<s>{}", bo(&mut rng)));
    if with_unk {
        uni.push(format!("{:.3}\t<unk>", -rng.random_range(1.0..3.0)));
    }
    for w in &vocab {
        let b = if *w == "</s>" { String::new() } else { bo(&mut rng) };
        uni.push(format!("{:.3}\t{w}{b}", -rng.random_range(0.3..2.5)));
    }
    let mut hist: Vec<&str> = vec!["<s>"];
    hist.extend(vocab.iter().filter(|w| **w != "</s>"));
    let mut bigrams: Vec<(String, String)> = Vec::new();
    let mut bi = Vec::new();
    for h in &hist {
        for w in &vocab {
            if rng.random_bool(0.3) {
                let b = if order > 2 && *w != "</s>" { bo(&mut rng) } else { String::new() };
                bi.push(format!("{:.3}\t{h} {w}{b}", -rng.random_range(0.1..1.5)));
                bigrams.push((h.to_string(), w.to_string()));
            }
        }
    }
    let mut tri = Vec::new();
    if order > 2 {
        for (h1, h2) in &bigrams {
            if h2 == "</s>" {
                continue;
            }
            for w in &vocab {
                if rng.random_bool(0.2) {
                    tri.push(format!("{:.3}\t{h1} {h2} {w}", -rng.random_range(0.05..1.2)));
                }
            }
        }
    }
    let mut arpa = format!("\\data\\\nngram 1={}\nngram 2={}\n", uni.len(), bi.len());
    if order > 2 {
        writeln!(arpa, "ngram 3={}", tri.len()).unwrap();
    }
    arpa.push_str("\n\\1-grams:\n");
    for l in &uni {
        writeln!(arpa, "{l}").unwrap();
    }
    arpa.push_str("\n\\2-grams:\n");
    for l in &bi {
        writeln!(arpa, "{l}").unwrap();
    }
    if order > 2 {
        arpa.push_str("\n\\3-grams:\n");
        for l in &tri {
            writeln!(arpa, "{l}").unwrap();
        }
    }
    arpa.push_str("\n\\end\\\n");

    let mut weights = WeightVector::default();
    for k in 0..NUM_FEATURES {
        weights.0[k] *= rng.random_range(0.5..1.5);
    }
    Instance { sentence: words.join(" "), phrase_table, lexro, arpa, weights }
}

impl Instance {
    pub fn models(&self, codec: Codec) -> Models {
        let opts = BuildOptions { codec, cache_size: 2, ..Default::default() };
        let built = compile(&self.phrase_table, Some(&self.lexro), None, &opts).unwrap();
        let table = RuleTable::from_buffers(built.table, built.payload, &built.manifest, OpenOptions::default()).unwrap();
        Models::new(table, NGramModel::from_arpa_str(&self.arpa).unwrap(), self.weights)
    }

    pub fn separate_lexro_models(&self) -> Models {
        let built = compile(&self.phrase_table, None, None, &BuildOptions::default()).unwrap();
        let table = RuleTable::from_buffers(built.table, built.payload, &built.manifest, OpenOptions::default()).unwrap();
        let lexro = LexRoTable::from_text(&self.lexro, table.vocab()).unwrap();
        Models::new(table, NGramModel::from_arpa_str(&self.arpa).unwrap(), self.weights).with_separate_lexro(lexro)
    }
}

pub fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}
