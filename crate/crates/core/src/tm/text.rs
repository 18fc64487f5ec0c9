//! Readers for the `|||`-separated text inputs of the model compiler.

use thiserror::Error;

use super::{LEXRO_ARITY, TM_ARITY};

#[derive(Debug, Error, PartialEq)]
#[error("{file} line {line}: {msg}")]
pub struct TextError {
    pub file: &'static str,
    pub line: usize,
    pub msg: String,
}

/// One phrase-table entry with raw probabilities in file order:
/// p(s|t), lex(s|t), p(t|s), lex(t|s).
#[derive(Debug, Clone, PartialEq)]
pub struct TextRule {
    pub source: String,
    pub target: String,
    pub probs: [f64; TM_ARITY],
}

impl TextRule {
    pub fn p_target_given_source(&self) -> f64 {
        self.probs[2]
    }

    /// Natural-log scores in rule order: p(t|s), p(s|t), lex(t|s), lex(s|t).
    pub fn log_scores(&self) -> [f64; TM_ARITY] {
        let p = &self.probs;
        [p[2].ln(), p[0].ln(), p[3].ln(), p[1].ln()]
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split("|||").map(str::trim).collect()
}

fn normalize(phrase: &str) -> String {
    phrase.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn probabilities<const N: usize>(
    field: &str,
    file: &'static str,
    line: usize,
) -> Result<[f64; N], TextError> {
    let err = |msg: String| TextError { file, line, msg };
    let values: Vec<f64> = field
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| err(format!("non-numeric score {v:?}"))))
        .collect::<Result<_, _>>()?;
    let arr: [f64; N] = values
        .try_into()
        .map_err(|v: Vec<f64>| err(format!("expected {N} scores, found {}", v.len())))?;
    if let Some(p) = arr.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(err(format!("probability {p} outside (0, 1]")));
    }
    Ok(arr)
}

pub fn parse_phrase_table(text: &str) -> Result<Vec<TextRule>, TextError> {
    const FILE: &str = "phrase table";
    let mut rules = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if f.len() < 3 {
            return Err(TextError { file: FILE, line: lineno, msg: "expected 'src ||| tgt ||| scores'".into() });
        }
        if f[0].is_empty() || f[1].is_empty() {
            return Err(TextError { file: FILE, line: lineno, msg: "empty phrase".into() });
        }
        rules.push(TextRule {
            source: normalize(f[0]),
            target: normalize(f[1]),
            probs: probabilities::<TM_ARITY>(f[2], FILE, lineno)?,
        });
    }
    Ok(rules)
}

/// Entries `(source, target, probabilities)` of a reordering table.
pub fn parse_lexro(text: &str) -> Result<Vec<(String, String, [f64; LEXRO_ARITY])>, TextError> {
    const FILE: &str = "reordering table";
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if f.len() < 3 || f[0].is_empty() || f[1].is_empty() {
            return Err(TextError { file: FILE, line: lineno, msg: "expected 'src ||| tgt ||| p1 .. p6'".into() });
        }
        out.push((normalize(f[0]), normalize(f[1]), probabilities::<LEXRO_ARITY>(f[2], FILE, lineno)?));
    }
    Ok(out)
}

/// Entries `(source, count)` of a source-count file (`src ||| count`).
pub fn parse_counts(text: &str) -> Result<Vec<(String, f64)>, TextError> {
    const FILE: &str = "counts";
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        let err = |msg: &str| TextError { file: FILE, line: lineno, msg: msg.into() };
        if f.len() != 2 || f[0].is_empty() {
            return Err(err("expected 'src ||| count'"));
        }
        let count: f64 = f[1].parse().map_err(|_| err("non-numeric count"))?;
        if count.is_nan() || count < 0.0 {
            return Err(err("negative count"));
        }
        out.push((normalize(f[0]), count));
    }
    Ok(out)
}
