//! Framed token sequences.
//!
//! Every sequence handled by the engine starts with `<BOS>` and ends with
//! `<EOS>`. Positions reported by the public API are *content* positions,
//! i.e. 0-based indices that skip the leading `<BOS>`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const PLH: TokenId = 2;
pub const PAD: TokenId = 3;
pub const UNK: TokenId = 4;

/// Number of reserved ids at the start of every vocabulary.
pub const RESERVED: usize = 5;

/// Default maximum framed length (sentinels included).
pub const DEFAULT_MAX_LEN: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqError {
    #[error("sequence must start with <BOS> and end with <EOS>")]
    Framing,
    #[error("reserved token id {id} at content position {pos}")]
    Reserved { id: TokenId, pos: usize },
    #[error("sequence length {len} exceeds L_max={max_len}")]
    TooLong { len: usize, max_len: usize },
}

/// A `<BOS> … <EOS>` framed sequence of token ids.
///
/// `<UNK>` tokens may carry their original surface string so that two
/// unknown tokens compare equal only when their surfaces match.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
    oov: Option<Vec<Option<Arc<str>>>>,
}

impl TokenSeq {
    pub fn empty() -> Self {
        TokenSeq {
            ids: vec![BOS, EOS],
            oov: None,
        }
    }

    /// Frames `content` with sentinels. `<PLH>` and `<UNK>` are allowed in
    /// content, the other reserved ids are not.
    pub fn from_content(content: &[TokenId]) -> Result<Self, SeqError> {
        let mut b = SeqBuilder::with_capacity(content.len());
        for (pos, &id) in content.iter().enumerate() {
            check_content_id(id, pos)?;
            b.push(id);
        }
        Ok(b.finish())
    }

    /// Validates a full framed id vector.
    pub fn from_framed(ids: Vec<TokenId>) -> Result<Self, SeqError> {
        if ids.len() < 2 || ids[0] != BOS || ids[ids.len() - 1] != EOS {
            return Err(SeqError::Framing);
        }
        for (pos, &id) in ids[1..ids.len() - 1].iter().enumerate() {
            check_content_id(id, pos)?;
        }
        Ok(TokenSeq { ids, oov: None })
    }

    /// Full id vector including sentinels.
    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn content(&self) -> &[TokenId] {
        &self.ids[1..self.ids.len() - 1]
    }

    /// Content length (sentinels excluded).
    pub fn len(&self) -> usize {
        self.ids.len() - 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Framed length (sentinels included).
    pub fn framed_len(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, pos: usize) -> TokenId {
        self.ids[pos + 1]
    }

    /// Surface string of an `<UNK>` at content position `pos`, if recorded.
    pub fn surface(&self, pos: usize) -> Option<&str> {
        self.oov
            .as_ref()
            .and_then(|v| v[pos + 1].as_deref())
    }

    pub fn is_plh(&self, pos: usize) -> bool {
        self.get(pos) == PLH
    }

    pub fn count_plh(&self) -> usize {
        self.content().iter().filter(|&&t| t == PLH).count()
    }

    /// Token equality used by every matching routine: ids must agree, and two
    /// `<UNK>`s are equal only if both surfaces are known and identical.
    pub fn same_token(&self, i: usize, other: &TokenSeq, j: usize) -> bool {
        let (a, b) = (self.get(i), other.get(j));
        if a != b {
            return false;
        }
        if a != UNK {
            return true;
        }
        matches!((self.surface(i), other.surface(j)), (Some(x), Some(y)) if x == y)
    }

    pub fn check_len(&self, max_len: usize) -> Result<(), SeqError> {
        if self.framed_len() > max_len {
            return Err(SeqError::TooLong {
                len: self.framed_len(),
                max_len,
            });
        }
        Ok(())
    }

    /// Checks the framing invariant. Always true for values built through this
    /// module's constructors; exposed for fuzz checks.
    pub fn is_well_framed(&self) -> bool {
        self.ids.len() >= 2
            && self.ids[0] == BOS
            && self.ids[self.ids.len() - 1] == EOS
            && self
                .content()
                .iter()
                .all(|&t| t != BOS && t != EOS && t != PAD)
    }
}

fn check_content_id(id: TokenId, pos: usize) -> Result<(), SeqError> {
    if id == BOS || id == EOS || id == PAD {
        Err(SeqError::Reserved { id, pos })
    } else {
        Ok(())
    }
}

impl fmt::Debug for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.content()).finish()
    }
}

/// Incremental construction of a framed sequence.
#[derive(Default)]
pub struct SeqBuilder {
    ids: Vec<TokenId>,
    oov: Vec<Option<Arc<str>>>,
    has_oov: bool,
}

impl SeqBuilder {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(n: usize) -> Self {
        let mut ids = Vec::with_capacity(n + 2);
        ids.push(BOS);
        let mut oov = Vec::with_capacity(n + 2);
        oov.push(None);
        SeqBuilder {
            ids,
            oov,
            has_oov: false,
        }
    }

    pub fn push(&mut self, id: TokenId) {
        debug_assert!(id != BOS && id != EOS && id != PAD);
        self.ids.push(id);
        self.oov.push(None);
    }

    pub fn push_unk(&mut self, surface: Arc<str>) {
        self.ids.push(UNK);
        self.oov.push(Some(surface));
        self.has_oov = true;
    }

    /// Copies content position `pos` of `src`, surface included.
    pub fn push_from(&mut self, src: &TokenSeq, pos: usize) {
        let id = src.get(pos);
        match src.oov.as_ref().and_then(|v| v[pos + 1].clone()) {
            Some(s) if id == UNK => self.push_unk(s),
            _ => self.push(id),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn finish(mut self) -> TokenSeq {
        self.ids.push(EOS);
        self.oov.push(None);
        TokenSeq {
            ids: self.ids,
            oov: if self.has_oov { Some(self.oov) } else { None },
        }
    }
}

/// Maps tokens to integer keys so that key equality coincides with
/// [`TokenSeq::same_token`]. Known ids keep their id; `<UNK>` surfaces are
/// interned above `u32::MAX`; surface-less `<UNK>`s get fresh keys.
#[derive(Default)]
pub struct KeyInterner {
    surfaces: HashMap<Arc<str>, u64>,
    next: u64,
}

impl KeyInterner {
    pub fn new() -> Self {
        KeyInterner {
            surfaces: HashMap::new(),
            next: 1 << 32,
        }
    }

    pub fn key(&mut self, seq: &TokenSeq, pos: usize) -> u64 {
        let id = seq.get(pos);
        if id != UNK {
            return id as u64;
        }
        match seq.oov.as_ref().and_then(|v| v[pos + 1].clone()) {
            Some(s) => {
                if let Some(&k) = self.surfaces.get(&s) {
                    return k;
                }
                let k = self.fresh();
                self.surfaces.insert(s, k);
                k
            }
            None => self.fresh(),
        }
    }

    /// Like [`key`](Self::key) but never registers new surfaces: unseen
    /// surfaces get a fresh key that matches nothing.
    pub fn lookup(&mut self, seq: &TokenSeq, pos: usize) -> u64 {
        let id = seq.get(pos);
        if id != UNK {
            return id as u64;
        }
        match seq.surface(pos).and_then(|s| self.surfaces.get(s)) {
            Some(&k) => k,
            None => self.fresh(),
        }
    }

    pub fn into_surface_keys(self) -> HashMap<Arc<str>, u64> {
        self.surfaces
    }

    pub fn keys(&mut self, seq: &TokenSeq) -> Vec<u64> {
        (0..seq.len()).map(|p| self.key(seq, p)).collect()
    }

    fn fresh(&mut self) -> u64 {
        let k = self.next;
        self.next += 1;
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_and_content() {
        let s = TokenSeq::from_content(&[7, 8, PLH]).unwrap();
        assert_eq!(s.ids(), &[BOS, 7, 8, PLH, EOS]);
        assert_eq!(s.len(), 3);
        assert!(s.is_plh(2));
        assert!(s.is_well_framed());
        assert_eq!(TokenSeq::empty().len(), 0);
    }

    #[test]
    fn rejects_sentinels_in_content() {
        assert_eq!(
            TokenSeq::from_content(&[7, PAD]),
            Err(SeqError::Reserved { id: PAD, pos: 1 })
        );
        assert_eq!(TokenSeq::from_framed(vec![7, EOS]), Err(SeqError::Framing));
    }

    #[test]
    fn unk_equality_needs_matching_surfaces() {
        let mut a = SeqBuilder::new();
        a.push_unk("foo".into());
        a.push(UNK);
        let a = a.finish();
        let mut b = SeqBuilder::new();
        b.push_unk("foo".into());
        b.push_unk("bar".into());
        let b = b.finish();
        assert!(a.same_token(0, &b, 0));
        assert!(!a.same_token(0, &b, 1));
        assert!(!a.same_token(1, &a, 1));

        let mut keys = KeyInterner::new();
        let ka = keys.keys(&a);
        let kb = keys.keys(&b);
        assert_eq!(ka[0], kb[0]);
        assert_ne!(ka[1], kb[1]);
        assert_ne!(ka[0], kb[1]);
    }

    #[test]
    fn length_check() {
        let s = TokenSeq::from_content(&[9; 10]).unwrap();
        assert!(s.check_len(12).is_ok());
        assert_eq!(
            s.check_len(11),
            Err(SeqError::TooLong {
                len: 12,
                max_len: 11
            })
        );
    }
}
