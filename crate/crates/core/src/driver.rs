//! Batch decoding: configuration, model loading, parallel sentence-per-worker
//! decoding with order-preserving output, and the end-of-run report.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, BufRead, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::arena::{Pool, PoolPair, PoolStats};
use crate::features::{LexRoTable, WeightVector};
use crate::lm::{ArpaError, NGramModel};
use crate::search::{decode_in, DecodeStats, Models, Phases, SearchParams, StackConfiguration};
use crate::tm::{OpenOptions, RuleTable, TableError, TextError};

/// Prefix of the output line written for a sentence that failed to decode.
pub const ERROR_MARKER: &str = "#ERROR: ";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("bad value {value:?} for {key}: {msg}")]
    Value { key: String, value: String, msg: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("missing required setting {0}")]
    Missing(&'static str),
    #[error("{key} path does not exist: {path}")]
    MissingPath { key: &'static str, path: PathBuf },
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading rule table {path}: {source}")]
    Table { path: PathBuf, source: TableError },
    #[error("loading language model {path}: {source}")]
    Lm { path: PathBuf, source: ArpaError },
    #[error("loading weights {path}: {msg}")]
    Weights { path: PathBuf, msg: String },
    #[error("loading reordering table {path}: {source}")]
    Lexro { path: PathBuf, source: TextError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    /// Human-readable summary followed by the `key<TAB>value` block.
    #[default]
    Both,
    Tsv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Binary rule table directory.
    pub table: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    /// Weight file; built-in defaults when absent.
    pub weights: Option<PathBuf>,
    /// Reordering scores from a text file instead of the rule table.
    pub lexro: Option<PathBuf>,
    pub search: SearchParams,
    pub threads: usize,
    /// Static cache entries to load (`None` = all the table lists).
    pub cache_size: Option<usize>,
    /// Standard input / output when `None`.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub report_format: ReportFormat,
    /// Per-sentence `score<TAB>translation` lines.
    pub scores: Option<PathBuf>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            table: None,
            lm: None,
            weights: None,
            lexro: None,
            search: SearchParams::default(),
            threads: 1,
            cache_size: None,
            input: None,
            output: None,
            report: None,
            report_format: ReportFormat::Both,
            scores: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        msg: e.to_string(),
    })
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    match value {
        "none" | "unlimited" | "-1" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value { key: key.into(), value: value.into(), msg: "expected true or false".into() }),
    }
}

impl DecoderConfig {
    /// Parses `key = value` lines. `#`/`;` comments and `[section]` headers
    /// are skipped; relative paths are taken relative to `base`.
    pub fn from_ini_str(text: &str, base: &Path) -> Result<DecoderConfig, ConfigError> {
        let mut config = DecoderConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, msg: "expected key = value".into() })?;
            config.set(key.trim(), value.trim(), base)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<DecoderConfig, ConfigError> {
        let text =
            fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        DecoderConfig::from_ini_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies one setting; command-line overrides go through here too.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let path = || Some(base.join(value));
        let key_norm = key.replace('_', "-");
        match key_norm.as_str() {
            "table" | "rule-table" => self.table = path(),
            "lm" | "language-model" => self.lm = path(),
            "weights" => self.weights = path(),
            "lexro" | "reordering-table" => self.lexro = path(),
            "input" => self.input = path(),
            "output" => self.output = path(),
            "report" => self.report = path(),
            "scores" => self.scores = path(),
            "report-format" => {
                self.report_format = match value {
                    "tsv" => ReportFormat::Tsv,
                    "both" | "text" => ReportFormat::Both,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            msg: "expected tsv or both".into(),
                        })
                    }
                }
            }
            "threads" => {
                let n: usize = parse_num(key, value)?;
                if n == 0 {
                    return Err(ConfigError::Value { key: key.into(), value: value.into(), msg: "must be ≥ 1".into() });
                }
                self.threads = n;
            }
            "pop-limit" => self.search.pop_limit = parse_optional(key, value)?.unwrap_or(usize::MAX),
            "distortion-limit" => self.search.distortion_limit = parse_optional(key, value)?,
            "beam-size" => self.search.beam_size = parse_optional(key, value)?,
            "table-limit" => self.search.table_limit = parse_optional(key, value)?,
            "cache-size" => self.cache_size = parse_optional(key, value)?,
            "max-sentence-len" => self.search.max_sentence_len = parse_num(key, value)?,
            "recombine" => self.search.recombine = parse_bool(key, value)?,
            "profile" => self.search.profile = parse_bool(key, value)?,
            "stack" => {
                self.search.stack = value.parse::<StackConfiguration>().map_err(|msg| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                    msg,
                })?
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Fails fast on missing model files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let table = self.table.as_ref().ok_or(ConfigError::Missing("table"))?;
        let lm = self.lm.as_ref().ok_or(ConfigError::Missing("lm"))?;
        let mut required = vec![("table", table), ("lm", lm)];
        required.extend(self.weights.as_ref().map(|p| ("weights", p)));
        required.extend(self.lexro.as_ref().map(|p| ("lexro", p)));
        required.extend(self.input.as_ref().map(|p| ("input", p)));
        for (key, path) in required {
            if !path.exists() {
                return Err(ConfigError::MissingPath { key, path: path.clone() });
            }
        }
        if self.threads == 0 {
            return Err(ConfigError::Value { key: "threads".into(), value: "0".into(), msg: "must be ≥ 1".into() });
        }
        Ok(())
    }
}

/// Loads the rule table, LM, weights and optional reordering table. The
/// returned duration is reported apart from decoding time.
pub fn load_models(config: &DecoderConfig) -> Result<(Models, Duration), DriverError> {
    config.validate()?;
    let started = Instant::now();
    let table_path = config.table.clone().expect("validated");
    let lm_path = config.lm.clone().expect("validated");
    let table = RuleTable::open_with(&table_path, OpenOptions { cache_limit: config.cache_size, verify_payload: false })
        .map_err(|source| DriverError::Table { path: table_path, source })?;
    let lm = NGramModel::load_arpa(&lm_path).map_err(|source| DriverError::Lm { path: lm_path, source })?;
    let weights = match &config.weights {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| DriverError::Io { path: p.clone(), source })?;
            WeightVector::parse(&text).map_err(|e| DriverError::Weights { path: p.clone(), msg: e.to_string() })?
        }
        None => WeightVector::default(),
    };
    let mut models = Models::new(table, lm, weights);
    if let Some(p) = &config.lexro {
        let text = fs::read_to_string(p).map_err(|source| DriverError::Io { path: p.clone(), source })?;
        let lexro = LexRoTable::from_text(&text, models.table.vocab())
            .map_err(|source| DriverError::Lexro { path: p.clone(), source })?;
        models = models.with_separate_lexro(lexro);
    }
    Ok((models, started.elapsed()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceOutput {
    pub translation: String,
    pub score: f64,
    pub error: Option<String>,
}

impl SentenceOutput {
    /// The output file line for this sentence.
    pub fn line(&self) -> String {
        match &self.error {
            Some(e) => format!("{ERROR_MARKER}{e}"),
            None => self.translation.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorkerStats {
    pub sentences: u64,
    pub ephemeral: PoolStats,
    pub persistent: PoolStats,
    /// Largest single-sentence ephemeral footprint.
    pub max_sentence_bytes: usize,
}

/// Everything a corpus run produces apart from file output.
#[derive(Debug, Clone, Default)]
pub struct CorpusRun {
    pub outputs: Vec<SentenceOutput>,
    pub stats: DecodeStats,
    pub workers: Vec<WorkerStats>,
    pub decode_time: Duration,
    /// Shared-state operations (cursor claims and slot posts).
    pub sync_ops: u64,
    pub errors: u64,
}

impl CorpusRun {
    pub fn words(&self) -> u64 {
        self.stats.words
    }

    pub fn words_per_sec(&self) -> f64 {
        let secs = self.decode_time.as_secs_f64();
        if secs > 0.0 {
            self.stats.words as f64 / secs
        } else {
            0.0
        }
    }

    pub fn lines(&self) -> impl Iterator<Item = String> + '_ {
        self.outputs.iter().map(SentenceOutput::line)
    }

    pub fn pool_stats(&self) -> PoolStats {
        let mut s = PoolStats::default();
        for w in &self.workers {
            s.merge(&w.ephemeral);
            s.merge(&w.persistent);
        }
        s
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "decoder panicked".to_string()
    }
}

struct Shared<'s> {
    sentences: &'s [String],
    cursor: AtomicUsize,
    slots: Vec<OnceLock<SentenceOutput>>,
    sync_ops: AtomicU64,
}

/// Decodes every sentence once on `threads` workers. Output order follows
/// input order whatever the completion order.
pub fn run_corpus(models: &Models, sentences: &[String], params: &SearchParams, threads: usize) -> CorpusRun {
    let threads = threads.max(1).min(sentences.len().max(1));
    let shared = Shared {
        sentences,
        cursor: AtomicUsize::new(0),
        slots: (0..sentences.len()).map(|_| OnceLock::new()).collect(),
        sync_ops: AtomicU64::new(0),
    };
    let started = Instant::now();
    let results: Vec<(DecodeStats, WorkerStats)> = thread::scope(|scope| {
        let handles: Vec<_> =
            (0..threads).map(|_| scope.spawn(|| worker_loop(models, params, &shared))).collect();
        handles.into_iter().map(|h| h.join().expect("worker loop never unwinds")).collect()
    });
    let decode_time = if sentences.is_empty() { Duration::ZERO } else { started.elapsed() };

    let mut run = CorpusRun { decode_time, sync_ops: shared.sync_ops.into_inner(), ..Default::default() };
    for (stats, worker) in results {
        run.stats.merge(&stats);
        run.workers.push(worker);
    }
    run.outputs = shared
        .slots
        .into_iter()
        .map(|s| s.into_inner().expect("every sentence is claimed exactly once"))
        .collect();
    run.errors = run.outputs.iter().filter(|o| o.error.is_some()).count() as u64;
    run
}

/// One worker: claims the next sentence index, decodes it in its own
/// ephemeral pool, posts the result to that index's slot, resets the pool.
fn worker_loop(models: &Models, params: &SearchParams, shared: &Shared<'_>) -> (DecodeStats, WorkerStats) {
    let mut pools = PoolPair::new();
    let mut stats = DecodeStats::default();
    let mut worker = WorkerStats::default();
    loop {
        let i = shared.cursor.fetch_add(1, Ordering::Relaxed);
        shared.sync_ops.fetch_add(1, Ordering::Relaxed);
        let Some(sentence) = shared.sentences.get(i) else { break };
        let outcome = {
            let pool: &Pool = &pools.ephemeral;
            panic::catch_unwind(AssertUnwindSafe(|| decode_in(models, sentence, params, pool)))
        };
        let output = match outcome {
            Ok(Ok(r)) => {
                stats.merge(&r.stats);
                SentenceOutput { translation: r.translation, score: r.score, error: None }
            }
            Ok(Err(e)) => {
                stats.sentences += 1;
                SentenceOutput { translation: String::new(), score: f64::NEG_INFINITY, error: Some(e.to_string()) }
            }
            Err(payload) => {
                stats.sentences += 1;
                // The pool may be mid-update; start over with a fresh one.
                pools.ephemeral = Pool::new();
                SentenceOutput {
                    translation: String::new(),
                    score: f64::NEG_INFINITY,
                    error: Some(panic_message(payload.as_ref())),
                }
            }
        };
        worker.max_sentence_bytes = worker.max_sentence_bytes.max(pools.ephemeral.in_use());
        let t = Instant::now();
        pools.ephemeral.reset();
        if params.profile {
            stats.phases.memory += t.elapsed();
        }
        worker.sentences += 1;
        let posted = shared.slots[i].set(output).is_ok();
        debug_assert!(posted, "sentence {i} decoded twice");
        shared.sync_ops.fetch_add(1, Ordering::Relaxed);
    }
    worker.ephemeral = pools.ephemeral.stats();
    worker.persistent = pools.persistent.stats();
    (stats, worker)
}

/// End-of-run summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub threads: usize,
    pub sentences: u64,
    pub words: u64,
    pub errors: u64,
    pub load_time: Duration,
    pub decode_time: Duration,
    pub words_per_sec: f64,
    /// Summed over workers.
    pub phases: Phases,
    pub lookups: u64,
    pub cache_hits: u64,
    pub cache_hit_rate: f64,
    pub pool: PoolStats,
    pub hypotheses: u64,
    pub recombined: u64,
    pub pops: u64,
    pub monotone_fallbacks: u64,
    pub sync_ops: u64,
    pub scores: Vec<f64>,
}

impl RunReport {
    pub fn new(run: &CorpusRun, threads: usize, load_time: Duration) -> RunReport {
        let s = &run.stats;
        RunReport {
            threads,
            sentences: run.outputs.len() as u64,
            words: s.words,
            errors: run.errors,
            load_time,
            decode_time: run.decode_time,
            words_per_sec: run.words_per_sec(),
            phases: s.phases,
            lookups: s.lookups.lookups,
            cache_hits: s.lookups.cache_hits,
            cache_hit_rate: s.lookups.hit_rate(),
            pool: run.pool_stats(),
            hypotheses: s.hypotheses,
            recombined: s.recombined,
            pops: s.pops,
            monotone_fallbacks: s.monotone_fallbacks,
            sync_ops: run.sync_ops,
            scores: run.outputs.iter().map(|o| o.score).collect(),
        }
    }

    /// Share of the summed sentence time per phase, in percent. Misc takes
    /// whatever the named phases leave, so the six add up to 100 (or 0).
    pub fn phase_percentages(&self) -> [(&'static str, f64); 6] {
        let p = &self.phases;
        let total = p.total + p.memory;
        let pct = |d: Duration| {
            if total.is_zero() {
                0.0
            } else {
                100.0 * d.as_secs_f64() / total.as_secs_f64()
            }
        };
        let named = [p.memory, p.lm, p.phrase_table, p.lexro, p.search];
        let misc = total.saturating_sub(named.iter().sum());
        [
            ("memory", pct(p.memory)),
            ("lm", pct(p.lm)),
            ("phrase_table", pct(p.phrase_table)),
            ("lexro", pct(p.lexro)),
            ("search", pct(p.search)),
            ("misc", pct(misc)),
        ]
    }

    pub fn sync_ops_per_sentence(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            self.sync_ops as f64 / self.sentences as f64
        }
    }

    /// Machine-readable `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        kv("threads", self.threads.to_string());
        kv("sentences", self.sentences.to_string());
        kv("words", self.words.to_string());
        kv("errors", self.errors.to_string());
        kv("load_seconds", format!("{:.6}", self.load_time.as_secs_f64()));
        kv("decode_seconds", format!("{:.6}", self.decode_time.as_secs_f64()));
        kv("words_per_sec", format!("{:.3}", self.words_per_sec));
        for (name, pct) in self.phase_percentages() {
            kv(&format!("phase_{name}_pct"), format!("{pct:.3}"));
        }
        kv("lookups", self.lookups.to_string());
        kv("cache_hits", self.cache_hits.to_string());
        kv("cache_hit_rate", format!("{:.6}", self.cache_hit_rate));
        kv("pool_capacity_bytes", self.pool.total_capacity.to_string());
        kv("pool_high_water_bytes", self.pool.high_water_mark.to_string());
        kv("pool_blocks", self.pool.block_count.to_string());
        kv("pool_resets", self.pool.reset_count.to_string());
        kv("hypotheses", self.hypotheses.to_string());
        kv("recombined", self.recombined.to_string());
        kv("pops", self.pops.to_string());
        kv("monotone_fallbacks", self.monotone_fallbacks.to_string());
        kv("sync_ops", self.sync_ops.to_string());
        let mean = if self.scores.is_empty() {
            0.0
        } else {
            self.scores.iter().filter(|s| s.is_finite()).sum::<f64>() / self.scores.len() as f64
        };
        kv("mean_score", format!("{mean:.6}"));
        out
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "decoded {} sentences ({} words) on {} threads in {:.3}s, {:.1} words/s; models loaded in {:.3}s",
            self.sentences,
            self.words,
            self.threads,
            self.decode_time.as_secs_f64(),
            self.words_per_sec,
            self.load_time.as_secs_f64()
        )?;
        if self.errors > 0 {
            writeln!(f, "{} sentences failed", self.errors)?;
        }
        writeln!(f, "cache hit rate {:.2}% of {} lookups", 100.0 * self.cache_hit_rate, self.lookups)?;
        if !self.phases.total.is_zero() {
            let parts: Vec<String> =
                self.phase_percentages().iter().map(|(n, p)| format!("{n} {p:.1}%")).collect();
            writeln!(f, "profile: {}", parts.join(", "))?;
        }
        Ok(())
    }
}

fn read_lines(reader: impl BufRead) -> io::Result<Vec<String>> {
    reader.lines().collect()
}

fn write_file(path: &Path, text: &str) -> Result<(), DriverError> {
    fs::write(path, text).map_err(|source| DriverError::Io { path: path.to_path_buf(), source })
}

/// Loads models, decodes the whole input and writes output, scores and
/// report as configured.
pub fn run(config: &DecoderConfig) -> Result<RunReport, DriverError> {
    let (models, load_time) = load_models(config)?;
    let sentences = match &config.input {
        Some(p) => {
            let f = fs::File::open(p).map_err(|source| DriverError::Io { path: p.clone(), source })?;
            read_lines(io::BufReader::new(f))
        }
        None => read_lines(io::stdin().lock()),
    }
    .map_err(|source| DriverError::Io { path: config.input.clone().unwrap_or_else(|| "<stdin>".into()), source })?;

    let run = run_corpus(&models, &sentences, &config.search, config.threads);
    let mut text = String::new();
    for line in run.lines() {
        text.push_str(&line);
        text.push('\n');
    }
    match &config.output {
        Some(p) => write_file(p, &text)?,
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| DriverError::Io { path: "<stdout>".into(), source })?,
    }
    if let Some(p) = &config.scores {
        write_file(p, &scores_text(&run))?;
    }
    let report = RunReport::new(&run, config.threads, load_time);
    if let Some(p) = &config.report {
        let body = match config.report_format {
            ReportFormat::Tsv => report.to_tsv(),
            ReportFormat::Both => format!("{report}\n{}", report.to_tsv()),
        };
        write_file(p, &body)?;
    }
    Ok(report)
}

/// `score<TAB>translation` per sentence, the input of score comparison.
pub fn scores_text(run: &CorpusRun) -> String {
    let mut out = String::new();
    for o in &run.outputs {
        let _ = writeln!(out, "{}\t{}", o.score, o.line());
    }
    out
}
