use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use crate::seq::{SeqBuilder, TokenId, TokenSeq, BOS, EOS, PAD, PLH, RESERVED, UNK};

/// Default rendering of `<PLH>` in detokenized text.
pub const PLH_MARKER: &str = "␣PLH␣";

const RESERVED_NAMES: [&str; RESERVED] = ["<BOS>", "<EOS>", "<PLH>", "<PAD>", "<UNK>"];

/// Token string ↔ id bijection. Ids 0..5 are reserved for
/// `<BOS>`, `<EOS>`, `<PLH>`, `<PAD>`, `<UNK>` in that order.
#[derive(Clone, Debug)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let entries: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        Vocab { entries, index }
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab::new();
        for t in tokens {
            v.intern(t.as_ref());
        }
        v
    }

    /// Vocab file: one token per line; line `k` (0-based) gets id `5 + k`.
    /// Duplicate lines and reserved names are skipped.
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Vocab::from_tokens(text.lines().filter(|l| !l.is_empty())))
    }

    pub fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.entries.len() as TokenId;
        self.entries.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Unknown strings map to `<UNK>`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.entries
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED_NAMES[UNK as usize])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() == RESERVED
    }

    /// Ids of all non-reserved entries.
    pub fn content_ids(&self) -> std::ops::Range<TokenId> {
        RESERVED as TokenId..self.entries.len() as TokenId
    }

    /// Encodes tokens against a fixed vocabulary. Unknown tokens become
    /// `<UNK>` with their surface retained. Sentinel names in the input are
    /// treated as ordinary unknown strings, except `<PLH>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> TokenSeq {
        let mut b = SeqBuilder::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            match self.index.get(t) {
                Some(&id) if !is_sentinel(id) => b.push(id),
                _ => b.push_unk(Arc::from(t)),
            }
        }
        b.finish()
    }

    /// Encodes tokens, adding unseen ones to the vocabulary.
    pub fn encode_interning<S: AsRef<str>>(&mut self, tokens: &[S]) -> TokenSeq {
        let mut b = SeqBuilder::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            let id = self.intern(t);
            if is_sentinel(id) {
                b.push_unk(Arc::from(t));
            } else {
                b.push(id);
            }
        }
        b.finish()
    }

    /// Surface forms of the content, `<UNK>` rendered by its surface when known.
    pub fn surfaces<'a>(&'a self, seq: &'a TokenSeq) -> Vec<&'a str> {
        (0..seq.len())
            .map(|p| match seq.get(p) {
                UNK => seq.surface(p).unwrap_or(self.token(UNK)),
                id => self.token(id),
            })
            .collect()
    }

    pub fn detokenize(&self, seq: &TokenSeq) -> String {
        self.detokenize_with(seq, PLH_MARKER)
    }

    /// Space-joined surface forms with `<PLH>` rendered as `marker`.
    pub fn detokenize_with(&self, seq: &TokenSeq, marker: &str) -> String {
        let words: Vec<&str> = self
            .surfaces(seq)
            .into_iter()
            .zip(seq.content())
            .map(|(s, &id)| if id == PLH { marker } else { s })
            .collect();
        words.join(" ")
    }
}

fn is_sentinel(id: TokenId) -> bool {
    id == BOS || id == EOS || id == PAD || id == UNK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::new();
        assert_eq!(v.id("<BOS>"), BOS);
        assert_eq!(v.id("<EOS>"), EOS);
        assert_eq!(v.id("<PLH>"), PLH);
        assert_eq!(v.id("<PAD>"), PAD);
        assert_eq!(v.id("<UNK>"), UNK);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = Vocab::from_tokens(["a", "b"]);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("zzz"), UNK);
        let s = v.encode(&["a", "zzz"]);
        assert_eq!(s.content(), &[5, UNK]);
        assert_eq!(s.surface(1), Some("zzz"));
        assert_eq!(v.detokenize(&s), "a zzz");
    }

    #[test]
    fn detokenize_examples() {
        let mut v = Vocab::new();
        let s = v.encode_interning(&["swf", "(", ")"]);
        assert_eq!(v.detokenize(&s), "swf ( )");
        assert_eq!(v.detokenize(&TokenSeq::empty()), "");
        let p = TokenSeq::from_content(&[v.id("swf"), PLH]).unwrap();
        assert_eq!(v.detokenize(&p), format!("swf {PLH_MARKER}"));
        assert_eq!(v.detokenize_with(&p, "_"), "swf _");
    }

    #[test]
    fn load_vocab_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "hello\nworld\nhello\n").unwrap();
        let v = Vocab::load(&path).unwrap();
        assert_eq!(v.id("hello"), 5);
        assert_eq!(v.id("world"), 6);
        assert_eq!(v.len(), 7);
    }
}
