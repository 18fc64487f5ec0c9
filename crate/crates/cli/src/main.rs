use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use swiftdec::driver::{self, load_models, DecoderConfig};
use swiftdec::features::WeightVector;
use swiftdec::lm::NGramModel;
use swiftdec::oracle_bench::{self as ob, synth, to_tsv, SyntheticSpec, TsvRow};
use swiftdec::search::{Models, StackConfiguration};
use swiftdec::tm::{build_binary, BuildOptions, Codec, RuleTable};

#[derive(Parser)]
#[command(name = "swiftdec", version, about = "Multicore phrase-based translation decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a text phrase table into the binary rule table format.
    Compile(CompileArgs),
    /// Decode sentences from standard input (or the configured input file).
    Decode(DecodeArgs),
    /// Exhaustive search on short sentences (at most 8 words).
    Oracle(OracleArgs),
    /// Corpus BLEU-4 of a hypothesis file against a reference file.
    Bleu {
        hypotheses: PathBuf,
        references: PathBuf,
    },
    /// Generate a synthetic model and corpus.
    Gen(GenArgs),
    /// Words per second for several thread counts.
    BenchScaling {
        #[command(flatten)]
        decode: DecodeArgs,
        /// Comma-separated thread counts.
        #[arg(long, default_value = "1,2,4")]
        thread_list: String,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Cache hit rate and speed for several cache sizes.
    BenchCache {
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value = "0,1000,2000,4000,10000")]
        sizes: String,
    },
    /// Binary size and lookup time of the identity and compressed codecs.
    BenchCodec {
        #[arg(long)]
        phrase_table: PathBuf,
        #[arg(long)]
        lexro: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        lookups: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Mean model score and time for several pop-limits.
    BenchPopLimit {
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value = "10,50,100,400,1000,5000")]
        limits: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Pool allocation against the global allocator.
    BenchAlloc {
        #[arg(long, default_value_t = 1000)]
        rounds: usize,
        #[arg(long, default_value_t = 10_000)]
        batch: usize,
    },
    /// Compare two score files written by `decode --scores`.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    phrase_table: PathBuf,
    #[arg(long)]
    lexro: Option<PathBuf>,
    /// `phrase ||| count` lines ranking the static cache.
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "identity")]
    codec: Codec,
    #[arg(long, default_value_t = 100)]
    table_limit: usize,
    #[arg(long, default_value_t = 1000)]
    cache_size: usize,
}

#[derive(Args, Default)]
struct DecodeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Score reordering from this text table instead of the rule table.
    #[arg(long)]
    lexro: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// `none` for no limit.
    #[arg(long)]
    pop_limit: Option<String>,
    /// `none` for unlimited reordering.
    #[arg(long)]
    distortion_limit: Option<String>,
    #[arg(long)]
    stack: Option<StackConfiguration>,
    #[arg(long)]
    beam_size: Option<String>,
    #[arg(long)]
    cache_size: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Collect per-phase timings.
    #[arg(long)]
    profile: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    distortion_limit: Option<u32>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    sentences: usize,
    #[arg(long, default_value_t = 7.3)]
    mean_len: f64,
    #[arg(long, default_value_t = 2000)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    rules_per_phrase: usize,
    #[arg(long, default_value_t = 0.0)]
    oov_rate: f64,
    /// Also compile the binary table into OUT/table.
    #[arg(long)]
    compile: bool,
    #[arg(long, default_value = "identity")]
    codec: Codec,
}

impl DecodeArgs {
    fn config(&self) -> Result<DecoderConfig> {
        let mut c = match &self.config {
            Some(p) => DecoderConfig::load(p)?,
            None => DecoderConfig::default(),
        };
        let here = Path::new("");
        let mut set = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(v) = value {
                c.set(key, &v, here)?;
            }
            Ok(())
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("table", path(&self.table))?;
        set("lm", path(&self.lm))?;
        set("weights", path(&self.weights))?;
        set("lexro", path(&self.lexro))?;
        set("input", path(&self.input))?;
        set("output", path(&self.output))?;
        set("report", path(&self.report))?;
        set("scores", path(&self.scores))?;
        set("threads", self.threads.map(|t| t.to_string()))?;
        set("pop-limit", self.pop_limit.clone())?;
        set("distortion-limit", self.distortion_limit.clone())?;
        set("stack", self.stack.map(|s| s.to_string()))?;
        set("beam-size", self.beam_size.clone())?;
        set("cache-size", self.cache_size.clone())?;
        if self.profile {
            set("profile", Some("true".into()))?;
        }
        Ok(c)
    }
}

fn read_input(config: &DecoderConfig) -> Result<Vec<String>> {
    Ok(match &config.input {
        Some(p) => fs::read_to_string(p).with_context(|| p.display().to_string())?.lines().map(String::from).collect(),
        None => io::stdin().lock().lines().collect::<io::Result<_>>()?,
    })
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(|x| x.trim().parse::<usize>().with_context(|| format!("bad list entry {x:?}"))).collect()
}

fn print_rows<R: TsvRow>(rows: &[R]) {
    print!("{}", to_tsv(rows));
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Compile(a) => {
            let opts =
                BuildOptions { codec: a.codec, table_limit: a.table_limit, cache_size: a.cache_size, ..Default::default() };
            let report =
                build_binary(&a.phrase_table, a.lexro.as_deref(), a.counts.as_deref(), &opts, &a.out)?;
            print!("{report}");
        }
        Command::Decode(a) => {
            let config = a.config()?;
            let report = driver::run(&config)?;
            if config.report.is_none() {
                eprint!("{report}");
            }
        }
        Command::Oracle(a) => {
            let weights = match &a.weights {
                Some(p) => WeightVector::parse(&fs::read_to_string(p)?)?,
                None => WeightVector::default(),
            };
            let models = Models::new(RuleTable::open(&a.table)?, NGramModel::load_arpa(&a.lm)?, weights);
            let mut out = io::stdout().lock();
            for line in io::stdin().lock().lines() {
                let r = ob::exhaustive_decode(&models, &line?, a.distortion_limit)?;
                writeln!(out, "{}\t{}", r.score, r.translation)?;
            }
        }
        Command::Bleu { hypotheses, references } => {
            let h = fs::read_to_string(&hypotheses).with_context(|| hypotheses.display().to_string())?;
            let r = fs::read_to_string(&references).with_context(|| references.display().to_string())?;
            let h: Vec<&str> = h.lines().collect();
            let r: Vec<&str> = r.lines().collect();
            let b = ob::bleu(&h, &r)?;
            println!("bleu\t{:.6}", b.score);
            for n in 1..=ob::bleu::MAX_N {
                println!("precision_{n}\t{:.6}\t{}/{}", b.precision(n), b.matches[n - 1], b.totals[n - 1]);
            }
            println!("brevity_penalty\t{:.6}", b.brevity_penalty);
            println!("hyp_len\t{}\nref_len\t{}", b.hyp_len, b.ref_len);
        }
        Command::Gen(a) => {
            let spec = SyntheticSpec {
                seed: a.seed,
                sentences: a.sentences,
                mean_len: a.mean_len,
                source_vocab: a.vocab,
                target_vocab: a.vocab,
                rules_per_phrase: a.rules_per_phrase,
                oov_rate: a.oov_rate,
                ..Default::default()
            };
            let data = ob::generate_synthetic(&spec);
            data.write_to(&a.out)?;
            if a.compile {
                let p = |f: &str| a.out.join(f);
                let opts = BuildOptions { codec: a.codec, ..Default::default() };
                build_binary(
                    &p(synth::PHRASE_TABLE_FILE),
                    Some(&p(synth::LEXRO_FILE)),
                    Some(&p(synth::COUNTS_FILE)),
                    &opts,
                    &p("table"),
                )?;
                fs::write(
                    p("decoder.ini"),
                    format!("table = table\nlm = {}\ninput = {}\n", synth::LM_FILE, synth::CORPUS_FILE),
                )?;
            }
            eprintln!("wrote {} sentences to {}", spec.sentences, a.out.display());
        }
        Command::BenchScaling { decode, thread_list, repeats } => {
            let config = decode.config()?;
            let (models, _) = load_models(&config)?;
            let sentences = read_input(&config)?;
            print_rows(&ob::bench_scaling(&models, &sentences, &config.search, &parse_list(&thread_list)?, repeats));
        }
        Command::BenchCache { decode, sizes } => {
            let config = decode.config()?;
            let (mut models, _) = load_models(&config)?;
            let sentences = read_input(&config)?;
            let dir = config.table.clone().expect("validated by load_models");
            print_rows(&ob::bench_cache(
                &mut models,
                &dir,
                &sentences,
                &config.search,
                config.threads,
                &parse_list(&sizes)?,
            )?);
        }
        Command::BenchCodec { phrase_table, lexro, lookups, seed } => {
            let pt = fs::read_to_string(&phrase_table).with_context(|| phrase_table.display().to_string())?;
            let lexro = lexro.map(fs::read_to_string).transpose()?;
            print_rows(&ob::bench_codec(&pt, lexro.as_deref(), &BuildOptions::default(), lookups, seed)?);
        }
        Command::BenchPopLimit { decode, limits, repeats } => {
            let config = decode.config()?;
            let (models, _) = load_models(&config)?;
            let sentences = read_input(&config)?;
            let rows = ob::pop_limit_sweep(
                &models,
                &sentences,
                &config.search,
                config.threads,
                &parse_list(&limits)?,
                repeats,
            );
            print_rows(&rows);
        }
        Command::BenchAlloc { rounds, batch } => print_rows(&ob::bench_alloc(rounds, batch)),
        Command::Compare { a, b } => {
            let ta = fs::read_to_string(&a).with_context(|| a.display().to_string())?;
            let tb = fs::read_to_string(&b).with_context(|| b.display().to_string())?;
            let c = ob::compare_scores(&ta, &tb)?;
            print_rows(&[c]);
        }
    }
    Ok(())
}
