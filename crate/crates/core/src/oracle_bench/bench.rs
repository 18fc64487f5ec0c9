//! Benchmark runners. Every runner returns rows that print as TSV with a
//! header line, so scripts parse them directly.

use std::hint::black_box;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arena::Pool;
use crate::driver::run_corpus;
use crate::search::{Models, SearchParams};
use crate::tm::{compile, BuildError, BuildOptions, Codec, LookupStats, OpenOptions, RuleTable, TableError, WordId};

/// Default grid for the pop-limit sweep.
pub const POP_LIMIT_GRID: [usize; 6] = [10, 50, 100, 400, 1000, 5000];
pub const CACHE_SIZE_GRID: [usize; 5] = [0, 1000, 2000, 4000, 10000];

pub trait TsvRow {
    const HEADER: &'static str;
    fn tsv(&self) -> String;
}

pub fn to_tsv<R: TsvRow>(rows: &[R]) -> String {
    let mut out = format!("{}\n", R::HEADER);
    for r in rows {
        out.push_str(&r.tsv());
        out.push('\n');
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub threads: usize,
    /// Median over the repeats.
    pub words_per_sec: f64,
    pub runs: Vec<f64>,
}

impl TsvRow for ScalingRow {
    const HEADER: &'static str = "threads\twords_per_sec\truns";
    fn tsv(&self) -> String {
        let runs: Vec<String> = self.runs.iter().map(|r| format!("{r:.1}")).collect();
        format!("{}\t{:.3}\t{}", self.threads, self.words_per_sec, runs.join(","))
    }
}

/// Words per second for each thread count, median of `repeats` runs after
/// one warm-up run. Models are loaded by the caller, so load time is out.
pub fn bench_scaling(
    models: &Models,
    sentences: &[String],
    params: &SearchParams,
    threads: &[usize],
    repeats: usize,
) -> Vec<ScalingRow> {
    run_corpus(models, sentences, params, threads.first().copied().unwrap_or(1));
    threads
        .iter()
        .map(|&t| {
            let runs: Vec<f64> =
                (0..repeats.max(1)).map(|_| run_corpus(models, sentences, params, t).words_per_sec()).collect();
            ScalingRow { threads: t, words_per_sec: median(runs.clone()), runs }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRow {
    pub cache_size: usize,
    /// Entries actually loaded (the manifest may be shorter).
    pub cache_entries: usize,
    pub lookups: u64,
    pub cache_hits: u64,
    pub hit_rate: f64,
    pub words_per_sec: f64,
    pub outputs: Vec<String>,
}

impl TsvRow for CacheRow {
    const HEADER: &'static str = "cache_size\tcache_entries\tlookups\tcache_hits\thit_rate\twords_per_sec";
    fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.3}",
            self.cache_size, self.cache_entries, self.lookups, self.cache_hits, self.hit_rate, self.words_per_sec
        )
    }
}

/// Reopens the table at `table_dir` with each cache size and decodes the
/// corpus. `models.table` is left at the last size.
pub fn bench_cache(
    models: &mut Models,
    table_dir: &Path,
    sentences: &[String],
    params: &SearchParams,
    threads: usize,
    sizes: &[usize],
) -> Result<Vec<CacheRow>, TableError> {
    let mut rows = Vec::new();
    for &size in sizes {
        let table = RuleTable::open_with(table_dir, OpenOptions { cache_limit: Some(size), verify_payload: false })?;
        models.set_table(table);
        let run = run_corpus(models, sentences, params, threads);
        let l = run.stats.lookups;
        rows.push(CacheRow {
            cache_size: size,
            cache_entries: models.table.cache_len(),
            lookups: l.lookups,
            cache_hits: l.cache_hits,
            hit_rate: l.hit_rate(),
            words_per_sec: run.words_per_sec(),
            outputs: run.lines().collect(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecRow {
    pub codec: Codec,
    pub table_bytes: usize,
    pub payload_bytes: usize,
    /// Median wall time of one uncached lookup, decode included.
    pub median_lookup_ns: f64,
}

impl CodecRow {
    pub fn total_bytes(&self) -> usize {
        self.table_bytes + self.payload_bytes
    }
}

impl TsvRow for CodecRow {
    const HEADER: &'static str = "codec\ttable_bytes\tpayload_bytes\ttotal_bytes\tmedian_lookup_ns";
    fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.1}",
            self.codec.name(),
            self.table_bytes,
            self.payload_bytes,
            self.total_bytes(),
            self.median_lookup_ns
        )
    }
}

/// Builds the phrase table with each codec and times `lookups` random
/// uncached lookups. The two tables are queried alternately with the same
/// phrase so drift in machine load hits both equally.
pub fn bench_codec(
    phrase_table: &str,
    lexro: Option<&str>,
    options: &BuildOptions,
    lookups: usize,
    seed: u64,
) -> Result<Vec<CodecRow>, BuildError> {
    let codecs = [Codec::Identity, Codec::Compressed];
    let mut tables = Vec::new();
    let mut rows = Vec::new();
    for codec in codecs {
        let built = compile(phrase_table, lexro, None, &BuildOptions { codec, cache_size: 0, ..*options })?;
        rows.push(CodecRow {
            codec,
            table_bytes: built.table.len(),
            payload_bytes: built.payload.len(),
            median_lookup_ns: 0.0,
        });
        let table = RuleTable::from_buffers(
            built.table,
            built.payload,
            &built.manifest,
            OpenOptions { cache_limit: Some(0), verify_payload: false },
        )
        .map_err(BuildError::from)?;
        tables.push(table);
    }

    let mut sources: Vec<Vec<WordId>> = Vec::new();
    let mut last = "";
    for line in phrase_table.lines() {
        let src = line.split(" ||| ").next().unwrap_or("").trim();
        if src != last && !src.is_empty() {
            if let Some(ids) = tables[0].vocab().ids_of(src.split_whitespace()) {
                sources.push(ids);
            }
            last = src;
        }
    }
    if sources.is_empty() {
        return Ok(rows);
    }
    // Both tables intern the vocabulary in the same order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = vec![Vec::with_capacity(lookups); tables.len()];
    let mut stats = LookupStats::default();
    for _ in 0..lookups {
        let q = &sources[rng.random_range(0..sources.len())];
        for (k, t) in tables.iter().enumerate() {
            let started = Instant::now();
            black_box(t.lookup(black_box(q), &mut stats).map_err(BuildError::from)?);
            times[k].push(started.elapsed().as_nanos() as f64);
        }
    }
    for (row, t) in rows.iter_mut().zip(times) {
        row.median_lookup_ns = median(t);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub pop_limit: usize,
    pub mean_score: f64,
    pub seconds: f64,
    pub words_per_sec: f64,
    pub translations: Vec<String>,
}

impl TsvRow for SweepRow {
    const HEADER: &'static str = "pop_limit\tmean_score\tseconds\twords_per_sec";
    fn tsv(&self) -> String {
        format!("{}\t{:.6}\t{:.4}\t{:.3}", self.pop_limit, self.mean_score, self.seconds, self.words_per_sec)
    }
}

/// Decodes the corpus at each pop-limit (median of `repeats` timings).
pub fn pop_limit_sweep(
    models: &Models,
    sentences: &[String],
    params: &SearchParams,
    threads: usize,
    limits: &[usize],
    repeats: usize,
) -> Vec<SweepRow> {
    limits
        .iter()
        .map(|&pop_limit| {
            let p = SearchParams { pop_limit, ..*params };
            let mut secs = Vec::new();
            let mut run = None;
            for _ in 0..repeats.max(1) {
                let r = run_corpus(models, sentences, &p, threads);
                secs.push(r.decode_time.as_secs_f64());
                run = Some(r);
            }
            let run = run.expect("at least one repeat");
            let n = run.outputs.len().max(1) as f64;
            let seconds = median(secs);
            SweepRow {
                pop_limit,
                mean_score: run.outputs.iter().map(|o| o.score).sum::<f64>() / n,
                seconds,
                words_per_sec: if seconds > 0.0 { run.stats.words as f64 / seconds } else { 0.0 },
                translations: run.lines().collect(),
            }
        })
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("corpus mismatch: {a} lines vs {b} lines")]
    CorpusMismatch { a: usize, b: usize },
    #[error("line {line}: expected score<TAB>translation")]
    Format { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreComparison {
    pub sentences: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Mean of `b - a`.
    pub mean_delta: f64,
    pub max_abs_delta: f64,
    pub differing_translations: usize,
}

impl TsvRow for ScoreComparison {
    const HEADER: &'static str = "sentences\tmean_a\tmean_b\tmean_delta\tmax_abs_delta\tdiffering_translations";
    fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.sentences, self.mean_a, self.mean_b, self.mean_delta, self.max_abs_delta, self.differing_translations
        )
    }
}

fn parse_scores(text: &str) -> Result<Vec<(f64, &str)>, CompareError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let (s, t) = l.split_once('\t').ok_or(CompareError::Format { line: i + 1 })?;
            let s: f64 = s.parse().map_err(|_| CompareError::Format { line: i + 1 })?;
            Ok((s, t))
        })
        .collect()
}

/// Per-sentence comparison of two `score<TAB>translation` files.
pub fn compare_scores(a: &str, b: &str) -> Result<ScoreComparison, CompareError> {
    let (a, b) = (parse_scores(a)?, parse_scores(b)?);
    if a.len() != b.len() {
        return Err(CompareError::CorpusMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    let mut c = ScoreComparison {
        sentences: n,
        mean_a: 0.0,
        mean_b: 0.0,
        mean_delta: 0.0,
        max_abs_delta: 0.0,
        differing_translations: 0,
    };
    for ((sa, ta), (sb, tb)) in a.iter().zip(&b) {
        c.mean_a += sa;
        c.mean_b += sb;
        let d = if sa == sb { 0.0 } else { sb - sa };
        c.mean_delta += d;
        c.max_abs_delta = c.max_abs_delta.max(d.abs());
        c.differing_translations += (ta != tb) as usize;
    }
    if n > 0 {
        c.mean_a /= n as f64;
        c.mean_b /= n as f64;
        c.mean_delta /= n as f64;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocRow {
    pub method: &'static str,
    pub ns_per_alloc: f64,
}

impl TsvRow for AllocRow {
    const HEADER: &'static str = "method\tns_per_alloc";
    fn tsv(&self) -> String {
        format!("{}\t{:.2}", self.method, self.ns_per_alloc)
    }
}

#[derive(Clone, Copy)]
struct Node {
    _payload: [u64; 12],
}

/// Allocation cost of hypothesis-sized objects from a reset pool versus the
/// global allocator, in rounds of `batch` objects freed together.
pub fn bench_alloc(rounds: usize, batch: usize) -> Vec<AllocRow> {
    let node = Node { _payload: [7; 12] };
    let total = (rounds * batch).max(1) as f64;

    let mut pool = Pool::new();
    let started = Instant::now();
    for _ in 0..rounds {
        for _ in 0..batch {
            black_box(pool.alloc_value(node));
        }
        pool.reset();
    }
    let pool_time = started.elapsed();

    let started = Instant::now();
    for _ in 0..rounds {
        let v: Vec<Box<Node>> = (0..batch).map(|_| black_box(Box::new(node))).collect();
        drop(black_box(v));
    }
    let box_time = started.elapsed();

    let ns = |d: Duration| d.as_nanos() as f64 / total;
    vec![AllocRow { method: "pool", ns_per_alloc: ns(pool_time) }, AllocRow { method: "box", ns_per_alloc: ns(box_time) }]
}
