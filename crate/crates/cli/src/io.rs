//! JSONL plumbing: inputs (`-` is stdin), outputs (`-` is stdout), the
//! header line, and token encoding against the run's vocabulary.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};
use tmedit::corpus::{token_field, JsonlReader};
use tmedit::{TokenSeq, Vocab};

use crate::config::Config;
use crate::error::CliError;

/// One parsed input object and its 1-based line number.
pub struct Line {
    pub file: String,
    pub line: usize,
    pub obj: Map<String, Value>,
}

impl Line {
    pub fn err(&self, m: impl Into<String>) -> CliError {
        CliError::at(&self.file, self.line, m)
    }

    /// Tokens of the first present field among `keys`.
    pub fn tokens(&self, keys: &[&str]) -> Result<Vec<String>, CliError> {
        let (key, v) = keys
            .iter()
            .find_map(|k| self.obj.get(*k).map(|v| (*k, v)))
            .ok_or_else(|| self.err(format!("missing field, expected one of {keys:?}")))?;
        token_field(v).ok_or_else(|| self.err(format!("\"{key}\" must be an array of strings or a text")))
    }

    pub fn has(&self, key: &str) -> bool {
        self.obj.contains_key(key)
    }

    pub fn id(&self) -> Result<Option<u64>, CliError> {
        match self.obj.get("id") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| self.err("\"id\" must be a non-negative integer")),
        }
    }

    /// A list of token sequences: arrays, texts, or objects with `"tgt"`.
    pub fn seq_list(&self, key: &str) -> Result<Vec<Vec<String>>, CliError> {
        let arr = self
            .obj
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| self.err(format!("\"{key}\" must be an array")))?;
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                let v = match v {
                    Value::Object(o) => o.get("tgt").unwrap_or(&Value::Null),
                    v => v,
                };
                token_field(v).ok_or_else(|| self.err(format!("\"{key}\"[{i}] is not a token sequence")))
            })
            .collect()
    }
}

pub fn open_input(path: &str) -> Result<Box<dyn BufRead>, CliError> {
    if path == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(Path::new(path)).map_err(|e| CliError::data(format!("{path}: {e}")))?;
    Ok(Box::new(BufReader::new(f)))
}

/// All objects of a JSONL input, header lines skipped.
pub fn read_lines(path: &str) -> Result<Vec<Line>, CliError> {
    let mut out = Vec::new();
    for item in JsonlReader::new(open_input(path)?) {
        let (line, obj) = item.map_err(|e| CliError::corpus(path, e))?;
        if obj.contains_key("header") {
            continue;
        }
        out.push(Line {
            file: path.to_string(),
            line,
            obj,
        });
    }
    Ok(out)
}

/// Encodes tokens, growing the vocabulary unless it was loaded from a file.
pub struct Encoder {
    pub vocab: Vocab,
    fixed: bool,
    max_len: usize,
}

impl Encoder {
    pub fn new(vocab: Option<Vocab>, max_len: usize) -> Self {
        Encoder {
            fixed: vocab.is_some(),
            vocab: vocab.unwrap_or_default(),
            max_len,
        }
    }

    pub fn encode(&mut self, line: &Line, tokens: &[String]) -> Result<TokenSeq, CliError> {
        let seq = if self.fixed {
            self.vocab.encode(tokens)
        } else {
            self.vocab.encode_interning(tokens)
        };
        if seq.framed_len() > self.max_len {
            return Err(line.err(format!(
                "sequence of length {} exceeds L_max={}",
                seq.framed_len(),
                self.max_len
            )));
        }
        Ok(seq)
    }

    pub fn field(&mut self, line: &Line, keys: &[&str]) -> Result<TokenSeq, CliError> {
        let t = line.tokens(keys)?;
        self.encode(line, &t)
    }

    pub fn list(&mut self, line: &Line, key: &str) -> Result<Vec<TokenSeq>, CliError> {
        line.seq_list(key)?.iter().map(|t| self.encode(line, t)).collect()
    }

    pub fn json(&self, seq: &TokenSeq) -> Value {
        tmedit::corpus::seq_to_json(seq, &self.vocab)
    }
}

pub struct Output {
    w: Box<dyn Write>,
}

impl Output {
    pub fn open(path: &str) -> Result<Self, CliError> {
        let w: Box<dyn Write> = if path == "-" {
            Box::new(BufWriter::new(io::stdout()))
        } else {
            let f = File::create(path).map_err(|e| CliError::data(format!("{path}: {e}")))?;
            Box::new(BufWriter::new(f))
        };
        Ok(Output { w })
    }

    pub fn header(&mut self, command: &str, config: &Config) -> Result<(), CliError> {
        self.write(&json!({
            "header": {
                "tool": "tmedit",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "config": config,
            }
        }))
    }

    pub fn write(&mut self, v: &Value) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.w, v).map_err(io::Error::from)?;
        self.w.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}
