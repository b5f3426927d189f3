//! JSONL corpora.
//!
//! One JSON object per line. Token content comes from a `"tokens"` array of
//! strings or a `"text"` string split on whitespace; an optional integer
//! `"id"` is carried along. Blank lines are skipped. Line numbers in errors
//! are 1-based.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::seq::{TokenSeq, DEFAULT_MAX_LEN};
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: sequence of length {len} exceeds L_max={max_len}")]
    TooLong {
        line: usize,
        len: usize,
        max_len: usize,
    },
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Io(_) => None,
            CorpusError::Malformed { line, .. } | CorpusError::TooLong { line, .. } => Some(*line),
        }
    }

    pub fn malformed(line: usize, message: impl Into<String>) -> Self {
        CorpusError::Malformed {
            line,
            message: message.into(),
        }
    }
}

/// Streams `(line_number, object)` pairs from a JSONL source.
pub struct JsonlReader<R> {
    lines: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(reader: R) -> Self {
        JsonlReader {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl JsonlReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        Ok(JsonlReader::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = Result<(usize, Map<String, Value>), CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            let line = self.line;
            return Some(match serde_json::from_str::<Value>(&raw) {
                Ok(Value::Object(obj)) => Ok((line, obj)),
                Ok(_) => Err(CorpusError::malformed(line, "expected a JSON object")),
                Err(e) => Err(CorpusError::malformed(line, e.to_string())),
            });
        }
    }
}

/// Token strings of a field holding either an array of strings or a text.
pub fn token_field(value: &Value) -> Option<Vec<String>> {
    match value {
        Value::String(s) => Some(s.split_whitespace().map(str::to_string).collect()),
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => None,
    }
}

/// The tokens of a corpus record (`"tokens"` preferred over `"text"`).
pub fn record_tokens(obj: &Map<String, Value>, line: usize) -> Result<Vec<String>, CorpusError> {
    let field = obj
        .get("tokens")
        .or_else(|| obj.get("text"))
        .ok_or_else(|| CorpusError::malformed(line, "missing \"tokens\" or \"text\" field"))?;
    token_field(field).ok_or_else(|| {
        CorpusError::malformed(line, "\"tokens\" must be an array of strings, \"text\" a string")
    })
}

/// Optional `"id"` of a record.
pub fn record_id(obj: &Map<String, Value>, line: usize) -> Result<Option<u64>, CorpusError> {
    match obj.get("id") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| CorpusError::malformed(line, "\"id\" must be a non-negative integer")),
    }
}

/// A parsed corpus line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: Option<u64>,
    pub seq: TokenSeq,
}

#[derive(Clone, Copy, Debug)]
pub struct CorpusOptions {
    /// Maximum framed length, sentinels included.
    pub max_len: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Reads records, encoding tokens with `encode`.
pub fn read_records<R, F>(
    reader: R,
    opts: CorpusOptions,
    mut encode: F,
) -> Result<Vec<Record>, CorpusError>
where
    R: BufRead,
    F: FnMut(&[String]) -> TokenSeq,
{
    let mut out = Vec::new();
    for item in JsonlReader::new(reader) {
        let (line, obj) = item?;
        let tokens = record_tokens(&obj, line)?;
        let id = record_id(&obj, line)?;
        let seq = encode(&tokens);
        if seq.framed_len() > opts.max_len {
            return Err(CorpusError::TooLong {
                line,
                len: seq.framed_len(),
                max_len: opts.max_len,
            });
        }
        out.push(Record { id, seq });
    }
    Ok(out)
}

/// Loads a corpus against a fixed vocabulary; unknown tokens become `<UNK>`.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<TokenSeq>, CorpusError> {
    load_corpus_with(path, vocab, CorpusOptions::default())
}

pub fn load_corpus_with(
    path: &Path,
    vocab: &Vocab,
    opts: CorpusOptions,
) -> Result<Vec<TokenSeq>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let recs = read_records(reader, opts, |t| vocab.encode(t))?;
    Ok(recs.into_iter().map(|r| r.seq).collect())
}

/// JSON value for a sequence: an array of surface strings.
pub fn seq_to_json(seq: &TokenSeq, vocab: &Vocab) -> Value {
    Value::Array(
        vocab
            .surfaces(seq)
            .into_iter()
            .map(|s| Value::String(s.to_string()))
            .collect(),
    )
}

/// Writes `{"tokens": [...]}` lines (with `"id"` when given).
pub fn write_corpus<W: Write>(
    mut w: W,
    records: &[Record],
    vocab: &Vocab,
) -> Result<(), CorpusError> {
    for r in records {
        let mut obj = json!({ "tokens": seq_to_json(&r.seq, vocab) });
        if let Some(id) = r.id {
            obj["id"] = json!(id);
        }
        serde_json::to_writer(&mut w, &obj).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::{BOS, EOS};

    fn read(text: &str, vocab: &mut Vocab, max_len: usize) -> Result<Vec<Record>, CorpusError> {
        read_records(text.as_bytes(), CorpusOptions { max_len }, |t| {
            vocab.encode_interning(t)
        })
    }

    #[test]
    fn tokens_are_framed() {
        let mut v = Vocab::new();
        let recs = read(r#"{"tokens":["a","b"]}"#, &mut v, 1024).unwrap();
        assert_eq!(recs[0].seq.ids(), &[BOS, v.id("a"), v.id("b"), EOS]);
    }

    #[test]
    fn text_field_and_ids() {
        let mut v = Vocab::new();
        let recs = read("{\"text\":\"x  y z\",\"id\":9}\n\n{\"text\":\"\"}\n", &mut v, 1024).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, Some(9));
        assert_eq!(recs[0].seq.len(), 3);
        assert!(recs[1].seq.is_empty());
    }

    #[test]
    fn empty_input() {
        let mut v = Vocab::new();
        assert!(read("", &mut v, 1024).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut v = Vocab::new();
        let err = read("{\"text\":\"a\"}\n{oops\n", &mut v, 1024).unwrap_err();
        assert_eq!(err.line(), Some(2));
        let err = read("{\"text\":\"a\"}\n\n{\"foo\":1}\n", &mut v, 1024).unwrap_err();
        assert_eq!(err.line(), Some(3));
        let err = read("[1,2]\n", &mut v, 1024).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn over_length_names_limit() {
        let mut v = Vocab::new();
        let toks: Vec<String> = (0..2000).map(|i| format!("t{}", i % 7)).collect();
        let line = serde_json::to_string(&json!({ "tokens": toks })).unwrap();
        let err = read(&line, &mut v, 1024).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::TooLong { line: 1, len: 2002, max_len: 1024 }
        ));
        assert!(err.to_string().contains("L_max=1024"));
    }

    #[test]
    fn load_from_file_with_fixed_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"tokens\":[\"a\",\"q\"]}\n").unwrap();
        let v = Vocab::from_tokens(["a"]);
        let seqs = load_corpus(&path, &v).unwrap();
        assert_eq!(seqs[0].content(), &[5, crate::seq::UNK]);
        assert_eq!(seqs[0].surface(1), Some("q"));
    }
}
