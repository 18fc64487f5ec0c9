//! Encodings of a [`TargetPhraseCollection`].
//!
//! Identity layout, all little-endian:
//!
//! ```text
//! u32 rule_count
//! per rule: u16 target_len, u32 word_id * target_len, f32 * 4 tm, f32 * 6 lexro
//! ```
//!
//! Compressed layout: a flag byte, then either the varint body verbatim
//! (flag 0) or a `u32` decompressed length followed by an LZ4 block of the
//! varint body (flag 1). The varint body stores the rule count, each target
//! length and word id as LEB128 and the scores as raw `f32`.

use thiserror::Error;

use super::{TargetPhraseCollection, TranslationRule, WordId, LEXRO_ARITY, TM_ARITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Codec {
    Identity,
    Compressed,
}

impl Codec {
    pub fn id(self) -> u8 {
        match self {
            Codec::Identity => 0,
            Codec::Compressed => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Codec::Identity => "identity",
            Codec::Compressed => "compressed",
        }
    }

    pub fn from_id(id: u8) -> Option<Codec> {
        match id {
            0 => Some(Codec::Identity),
            1 => Some(Codec::Compressed),
            _ => None,
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;
    fn from_str(s: &str) -> Result<Codec, String> {
        match s {
            "identity" | "none" => Ok(Codec::Identity),
            "compressed" | "lz4" => Ok(Codec::Compressed),
            _ => Err(format!("unknown codec {s:?} (identity|compressed)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("record truncated")]
    Truncated,
    #[error("varint overflow")]
    VarintOverflow,
    #[error("unknown compression flag {0}")]
    BadFlag(u8),
    #[error("decompressed length {0} out of range")]
    BadLength(usize),
    #[error("block decompression failed")]
    Decompress,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

// No legitimate collection gets anywhere near this.
const MAX_DECOMPRESSED: usize = 64 << 20;

pub fn encode_targets(collection: &TargetPhraseCollection, codec: Codec) -> Vec<u8> {
    match codec {
        Codec::Identity => encode_identity(collection),
        Codec::Compressed => {
            let body = encode_varint(collection);
            let packed = lz4_flex::block::compress(&body);
            let mut out;
            if packed.len() + 4 < body.len() {
                out = Vec::with_capacity(packed.len() + 5);
                out.push(1);
                out.extend_from_slice(&(body.len() as u32).to_le_bytes());
                out.extend_from_slice(&packed);
            } else {
                out = Vec::with_capacity(body.len() + 1);
                out.push(0);
                out.extend_from_slice(&body);
            }
            out
        }
    }
}

pub fn decode_targets(bytes: &[u8], codec: Codec) -> Result<TargetPhraseCollection, CodecError> {
    match codec {
        Codec::Identity => decode_identity(bytes),
        Codec::Compressed => {
            let (&flag, rest) = bytes.split_first().ok_or(CodecError::Truncated)?;
            match flag {
                0 => decode_varint(rest),
                1 => {
                    let mut r = Reader::new(rest);
                    let len = r.u32()? as usize;
                    if len > MAX_DECOMPRESSED {
                        return Err(CodecError::BadLength(len));
                    }
                    let body = lz4_flex::block::decompress(r.rest(), len).map_err(|_| CodecError::Decompress)?;
                    if body.len() != len {
                        return Err(CodecError::BadLength(body.len()));
                    }
                    decode_varint(&body)
                }
                other => Err(CodecError::BadFlag(other)),
            }
        }
    }
}

fn encode_identity(c: &TargetPhraseCollection) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(c.rules.len() as u32).to_le_bytes());
    for rule in &c.rules {
        out.extend_from_slice(&(rule.target.len() as u16).to_le_bytes());
        for &w in &rule.target {
            out.extend_from_slice(&w.to_le_bytes());
        }
        put_scores(&mut out, rule);
    }
    out
}

fn put_scores(out: &mut Vec<u8>, rule: &TranslationRule) {
    for s in rule.tm_scores.iter().chain(rule.lexro.iter()) {
        out.extend_from_slice(&s.to_le_bytes());
    }
}

fn decode_identity(bytes: &[u8]) -> Result<TargetPhraseCollection, CodecError> {
    let mut r = Reader::new(bytes);
    let count = r.u32()? as usize;
    // Each rule takes at least 42 bytes; reject counts the input cannot hold.
    if count > bytes.len() / 42 + 1 {
        return Err(CodecError::Truncated);
    }
    let mut rules = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let mut target = Vec::with_capacity(len);
        for _ in 0..len {
            target.push(r.u32()?);
        }
        rules.push(read_scores(&mut r, target)?);
    }
    r.finish()?;
    Ok(TargetPhraseCollection { rules })
}

fn read_scores(r: &mut Reader<'_>, target: Vec<WordId>) -> Result<TranslationRule, CodecError> {
    let mut tm_scores = [0f32; TM_ARITY];
    for s in &mut tm_scores {
        *s = r.f32()?;
    }
    let mut lexro = [0f32; LEXRO_ARITY];
    for s in &mut lexro {
        *s = r.f32()?;
    }
    Ok(TranslationRule { target, tm_scores, lexro, unknown: false })
}

fn encode_varint(c: &TargetPhraseCollection) -> Vec<u8> {
    let mut out = Vec::new();
    put_varint(&mut out, c.rules.len() as u64);
    for rule in &c.rules {
        put_varint(&mut out, rule.target.len() as u64);
        for &w in &rule.target {
            put_varint(&mut out, w as u64);
        }
        put_scores(&mut out, rule);
    }
    out
}

fn decode_varint(bytes: &[u8]) -> Result<TargetPhraseCollection, CodecError> {
    let mut r = Reader::new(bytes);
    let count = r.varint()? as usize;
    if count > bytes.len() / 41 + 1 {
        return Err(CodecError::Truncated);
    }
    let mut rules = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.varint()? as usize;
        if len > r.remaining() {
            return Err(CodecError::Truncated);
        }
        let mut target = Vec::with_capacity(len);
        for _ in 0..len {
            target.push(u32::try_from(r.varint()?).map_err(|_| CodecError::VarintOverflow)?);
        }
        rules.push(read_scores(&mut r, target)?);
    }
    r.finish()?;
    Ok(TargetPhraseCollection { rules })
}

pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = *self.take(1)?.first().unwrap();
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(CodecError::VarintOverflow)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::Trailing(n)),
        }
    }
}
