use std::fs;
use std::io;
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use memmap2::Mmap;
use rustc_hash::FxHashMap;
use thiserror::Error;
use twox_hash::XxHash64;

use super::codec::{decode_targets, CodecError, Reader};
use super::index::{fingerprint, ProbingIndex, Slot, SLOT_BYTES};
use super::{Codec, TargetPhraseCollection, Vocab, WordId, LEXRO_ARITY, TM_ARITY};

pub const MAGIC: [u8; 4] = *b"SWPT";
pub const FORMAT_VERSION: u32 = 1;
pub(crate) const HEADER_BYTES: usize = 96;

pub const TABLE_FILE: &str = "table.bin";
pub const PAYLOAD_FILE: &str = "payload.bin";
pub const CACHE_FILE: &str = "cache.manifest";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a rule table (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch in {0}")]
    Checksum(&'static str),
    #[error("corrupt table: {0}")]
    Corrupt(String),
    #[error("corrupt record at offset {offset}: {source}")]
    Record {
        offset: u64,
        #[source]
        source: CodecError,
    },
}

/// Fixed-size file header of `table.bin`. All fields little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Header {
    pub codec: Codec,
    pub max_source_len: u8,
    pub table_limit: u32,
    pub source_phrases: u64,
    pub rules: u64,
    pub slots: u64,
    pub vocab_words: u64,
    pub vocab_bytes: u64,
    pub payload_len: u64,
    pub payload_checksum: u64,
    pub body_checksum: u64,
    pub seed: u64,
}

impl Header {
    pub fn to_bytes(self) -> [u8; HEADER_BYTES] {
        let mut b = [0u8; HEADER_BYTES];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        b[8] = self.codec.id();
        b[9] = TM_ARITY as u8;
        b[10] = LEXRO_ARITY as u8;
        b[11] = self.max_source_len;
        b[12..16].copy_from_slice(&self.table_limit.to_le_bytes());
        let words = [
            self.source_phrases,
            self.rules,
            self.slots,
            self.vocab_words,
            self.vocab_bytes,
            self.payload_len,
            self.payload_checksum,
            self.body_checksum,
            self.seed,
        ];
        for (i, w) in words.iter().enumerate() {
            b[16 + 8 * i..24 + 8 * i].copy_from_slice(&w.to_le_bytes());
        }
        b
    }

    pub fn parse(bytes: &[u8]) -> Result<Header, TableError> {
        if bytes.len() < 8 || bytes[0..4] != MAGIC {
            return Err(if bytes.len() < 4 { TableError::Truncated("header") } else { TableError::BadMagic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(TableError::Version { found: version });
        }
        if bytes.len() < HEADER_BYTES {
            return Err(TableError::Truncated("header"));
        }
        let codec = Codec::from_id(bytes[8]).ok_or_else(|| TableError::Corrupt(format!("codec id {}", bytes[8])))?;
        if bytes[9] as usize != TM_ARITY || bytes[10] as usize != LEXRO_ARITY {
            return Err(TableError::Corrupt(format!("score arity {}/{}", bytes[9], bytes[10])));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap());
        Ok(Header {
            codec,
            max_source_len: bytes[11],
            table_limit: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
            source_phrases: word(0),
            rules: word(1),
            slots: word(2),
            vocab_words: word(3),
            vocab_bytes: word(4),
            payload_len: word(5),
            payload_checksum: word(6),
            body_checksum: word(7),
            seed: word(8),
        })
    }
}

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    XxHash64::oneshot(0x5357_5054, bytes)
}

enum Bytes {
    Mapped(Mmap),
    Owned(Vec<u8>),
}

impl Deref for Bytes {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        match self {
            Bytes::Mapped(m) => m,
            Bytes::Owned(v) => v,
        }
    }
}

fn map_file(path: &Path) -> Result<Bytes, TableError> {
    let io_err = |source| TableError::Io { path: path.to_path_buf(), source };
    let file = fs::File::open(path).map_err(io_err)?;
    let len = file.metadata().map_err(io_err)?.len();
    if len == 0 {
        return Ok(Bytes::Owned(Vec::new()));
    }
    // SAFETY: the table files are written once by the compiler and treated as
    // read-only; every access below is bounds-checked against the mapping.
    let map = unsafe { Mmap::map(&file) }.map_err(io_err)?;
    Ok(Bytes::Mapped(map))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OpenOptions {
    /// Use at most this many entries of the cache manifest (`None` = all).
    pub cache_limit: Option<usize>,
    /// Checksum the whole payload at open time.
    pub verify_payload: bool,
}

/// Per-worker lookup counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LookupStats {
    pub lookups: u64,
    pub cache_hits: u64,
    pub decodes: u64,
    pub probes: u64,
    pub misses: u64,
}

impl LookupStats {
    pub fn merge(&mut self, other: &LookupStats) {
        self.lookups += other.lookups;
        self.cache_hits += other.cache_hits;
        self.decodes += other.decodes;
        self.probes += other.probes;
        self.misses += other.misses;
    }

    pub fn hit_rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.lookups as f64
        }
    }
}

/// Read-only binary rule table.
pub struct RuleTable {
    header: Header,
    table: Bytes,
    payload: Bytes,
    vocab: Vocab,
    cache: FxHashMap<Box<[WordId]>, Arc<TargetPhraseCollection>>,
}

impl std::fmt::Debug for RuleTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuleTable")
            .field("header", &self.header)
            .field("vocab", &self.vocab.len())
            .field("cache", &self.cache.len())
            .finish()
    }
}

impl RuleTable {
    pub fn open(dir: impl AsRef<Path>) -> Result<RuleTable, TableError> {
        RuleTable::open_with(dir, OpenOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: OpenOptions) -> Result<RuleTable, TableError> {
        let dir = dir.as_ref();
        let table = map_file(&dir.join(TABLE_FILE))?;
        let payload = map_file(&dir.join(PAYLOAD_FILE))?;
        let manifest_path = dir.join(CACHE_FILE);
        let manifest = match fs::read_to_string(&manifest_path) {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(source) => return Err(TableError::Io { path: manifest_path, source }),
        };
        RuleTable::from_parts(table, payload, &manifest, options)
    }

    /// Opens a table held in memory (the output of [`super::compile`]).
    pub fn from_buffers(
        table: Vec<u8>,
        payload: Vec<u8>,
        manifest: &str,
        options: OpenOptions,
    ) -> Result<RuleTable, TableError> {
        RuleTable::from_parts(Bytes::Owned(table), Bytes::Owned(payload), manifest, options)
    }

    fn from_parts(table: Bytes, payload: Bytes, manifest: &str, options: OpenOptions) -> Result<RuleTable, TableError> {
        let header = Header::parse(&table)?;
        let index_bytes = (header.slots as usize)
            .checked_mul(SLOT_BYTES)
            .ok_or_else(|| TableError::Corrupt("slot count".into()))?;
        let expected = HEADER_BYTES as u64 + index_bytes as u64 + header.vocab_bytes;
        if (table.len() as u64) < expected {
            return Err(TableError::Truncated(TABLE_FILE));
        }
        if table.len() as u64 != expected {
            return Err(TableError::Corrupt(format!("{TABLE_FILE} has trailing bytes")));
        }
        if checksum(&table[HEADER_BYTES..]) != header.body_checksum {
            return Err(TableError::Checksum(TABLE_FILE));
        }
        if (payload.len() as u64) < header.payload_len {
            return Err(TableError::Truncated(PAYLOAD_FILE));
        }
        if payload.len() as u64 != header.payload_len {
            return Err(TableError::Corrupt(format!("{PAYLOAD_FILE} has trailing bytes")));
        }
        if options.verify_payload && checksum(&payload) != header.payload_checksum {
            return Err(TableError::Checksum(PAYLOAD_FILE));
        }
        if ProbingIndex::new(&table[HEADER_BYTES..HEADER_BYTES + index_bytes]).is_none() {
            return Err(TableError::Corrupt("index size is not a power of two".into()));
        }

        let mut vocab = Vocab::new();
        let mut r = Reader::new(&table[HEADER_BYTES + index_bytes..]);
        let bad_vocab = |_| TableError::Corrupt("vocabulary section".into());
        for _ in 0..header.vocab_words {
            let len = r.u32().map_err(bad_vocab)? as usize;
            let word = std::str::from_utf8(r.take(len).map_err(bad_vocab)?)
                .map_err(|_| TableError::Corrupt("vocabulary is not UTF-8".into()))?;
            vocab.intern(word);
        }
        r.finish().map_err(bad_vocab)?;
        if vocab.len() as u64 != header.vocab_words {
            return Err(TableError::Corrupt("duplicate vocabulary entries".into()));
        }

        let mut rt = RuleTable { header, table, payload, vocab, cache: FxHashMap::default() };
        let limit = options.cache_limit.unwrap_or(usize::MAX);
        let mut scratch = LookupStats::default();
        for phrase in manifest.lines().map(str::trim).filter(|l| !l.is_empty()).take(limit) {
            let Some(ids) = rt.vocab.ids_of(phrase.split_whitespace()) else { continue };
            if let Some(c) = rt.lookup_uncached(&ids, &mut scratch)? {
                rt.cache.insert(ids.into_boxed_slice(), c);
            }
        }
        Ok(rt)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn codec(&self) -> Codec {
        self.header.codec
    }

    pub fn table_limit(&self) -> usize {
        self.header.table_limit as usize
    }

    pub fn max_source_len(&self) -> usize {
        self.header.max_source_len as usize
    }

    pub fn source_phrase_count(&self) -> usize {
        self.header.source_phrases as usize
    }

    pub fn rule_count(&self) -> usize {
        self.header.rules as usize
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_cached(&self, source: &[WordId]) -> bool {
        self.cache.contains_key(source)
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload.len()
    }

    pub fn lookup(
        &self,
        source: &[WordId],
        stats: &mut LookupStats,
    ) -> Result<Option<Arc<TargetPhraseCollection>>, TableError> {
        stats.lookups += 1;
        if let Some(c) = self.cache.get(source) {
            stats.cache_hits += 1;
            return Ok(Some(Arc::clone(c)));
        }
        self.lookup_uncached(source, stats)
    }

    /// Looks up a phrase given as tokens; unknown tokens mean no entry.
    pub fn lookup_tokens(
        &self,
        tokens: &[&str],
        stats: &mut LookupStats,
    ) -> Result<Option<Arc<TargetPhraseCollection>>, TableError> {
        match self.vocab.ids_of(tokens.iter().copied()) {
            Some(ids) => self.lookup(&ids, stats),
            None => Ok(None),
        }
    }

    fn lookup_uncached(
        &self,
        source: &[WordId],
        stats: &mut LookupStats,
    ) -> Result<Option<Arc<TargetPhraseCollection>>, TableError> {
        if source.is_empty() || source.len() > self.max_source_len() {
            stats.misses += 1;
            return Ok(None);
        }
        let index_bytes = self.header.slots as usize * SLOT_BYTES;
        let index = ProbingIndex::new(&self.table[HEADER_BYTES..HEADER_BYTES + index_bytes]).expect("checked at open");
        let fp = fingerprint(source, self.header.seed);
        let (slot, probes) = index.find(fp, |slot| {
            let (key, _) = self.record(slot)?;
            Ok::<_, TableError>(
                key.len() == 4 * source.len()
                    && key.chunks_exact(4).zip(source).all(|(b, &w)| b == w.to_le_bytes()),
            )
        })?;
        stats.probes += probes as u64;
        let Some(slot) = slot else {
            stats.misses += 1;
            return Ok(None);
        };
        let (_, body) = self.record(&slot)?;
        let collection = decode_targets(body, self.header.codec)
            .map_err(|source| TableError::Record { offset: slot.offset, source })?;
        stats.decodes += 1;
        Ok(Some(Arc::new(collection)))
    }

    /// Splits a payload record into its source key (raw little-endian ids)
    /// and encoded body.
    fn record(&self, slot: &Slot) -> Result<(&[u8], &[u8]), TableError> {
        let corrupt = |source| TableError::Record { offset: slot.offset, source };
        let start = usize::try_from(slot.offset).map_err(|_| corrupt(CodecError::Truncated))?;
        let end = start.checked_add(slot.len as usize).ok_or(corrupt(CodecError::Truncated))?;
        let bytes = self.payload.get(start..end).ok_or(corrupt(CodecError::Truncated))?;
        let mut r = Reader::new(bytes);
        let n = r.u16().map_err(corrupt)? as usize;
        let source = r.take(4 * n).map_err(corrupt)?;
        let body_len = r.u32().map_err(corrupt)? as usize;
        let body = r.take(body_len).map_err(corrupt)?;
        r.finish().map_err(corrupt)?;
        Ok((source, body))
    }
}
