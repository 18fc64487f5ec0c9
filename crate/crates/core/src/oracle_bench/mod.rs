//! Verification and measurement: an exhaustive reference decoder, BLEU, a
//! synthetic model generator and the benchmark runners.

pub mod bench;
pub mod bleu;
pub mod oracle;
pub mod synth;

pub use bench::{
    bench_alloc, bench_cache, bench_codec, bench_scaling, compare_scores, pop_limit_sweep, to_tsv, AllocRow,
    CacheRow, CodecRow, CompareError, ScalingRow, ScoreComparison, SweepRow, TsvRow, CACHE_SIZE_GRID,
    POP_LIMIT_GRID,
};
pub use bleu::{bleu, Bleu, BleuError};
pub use oracle::{exhaustive_decode, OracleError, OracleResult, OracleStep, ORACLE_MAX_LEN};
pub use synth::{generate_corpus, generate_synthetic, SyntheticData, SyntheticSpec};
