//! Fuzzy-match retrieval over a translation memory.
//!
//! Similarity is `1 − ED(a, b) / max(|a|, |b|)` with `ED` the unit-cost
//! Levenshtein distance, computed on tokens (default) or on characters of the
//! detokenized text. The indexed search returns exactly what a linear scan
//! returns; the index only skips entries that provably cannot qualify.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::seq::{KeyInterner, TokenSeq, UNK};
use crate::vocab::Vocab;

/// Levenshtein distance over arbitrary unit sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance if it is at most `max`, `None` otherwise. Only the
/// diagonal band of half-width `max` is filled, and the scan stops as soon as
/// a whole row exceeds `max`.
pub fn levenshtein_bounded<T: PartialEq>(a: &[T], b: &[T], max: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    if n.abs_diff(m) > max {
        return None;
    }
    let inf = max + 1;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    for (j, p) in prev.iter_mut().enumerate().take(m.min(max) + 1) {
        *p = j;
    }
    for i in 1..=n {
        let lo = i.saturating_sub(max);
        let hi = m.min(i + max);
        let mut row_min;
        let start;
        if lo == 0 {
            cur[0] = i;
            row_min = i;
            start = 1;
        } else {
            cur[lo - 1] = inf;
            row_min = inf;
            start = lo;
        }
        for j in start..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= max).then_some(prev[m])
}

/// Similarity from a distance and the longer length. Both-empty is 1.0.
pub fn similarity_from(ed: usize, max_len: usize) -> f64 {
    if max_len == 0 {
        1.0
    } else {
        1.0 - ed as f64 / max_len as f64
    }
}

/// Token-level edit distance between two sequences, sentinels excluded.
pub fn edit_distance(a: &TokenSeq, b: &TokenSeq) -> usize {
    let mut keys = KeyInterner::new();
    let ka = keys.keys(a);
    let kb = keys.keys(b);
    levenshtein(&ka, &kb)
}

/// Token-level similarity in `[0, 1]`; symmetric; 1.0 for two empty sequences.
pub fn similarity(a: &TokenSeq, b: &TokenSeq) -> f64 {
    similarity_from(edit_distance(a, b), a.len().max(b.len()))
}

/// Largest distance `e ≤ max_len` with `similarity_from(e, max_len) ≥ floor`.
fn max_distance(max_len: usize, floor: f64) -> Option<usize> {
    if max_len == 0 {
        return (1.0 >= floor).then_some(0);
    }
    let guess = ((1.0 - floor).max(0.0) * max_len as f64).floor() as usize;
    let mut e = guess.min(max_len);
    while e < max_len && similarity_from(e + 1, max_len) >= floor {
        e += 1;
    }
    loop {
        if similarity_from(e, max_len) >= floor {
            return Some(e);
        }
        if e == 0 {
            return None;
        }
        e -= 1;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TmEntry {
    pub id: u64,
    pub src: TokenSeq,
    pub tgt: TokenSeq,
}

/// Unit granularity of the edit distance.
#[derive(Clone, Debug, Default)]
pub enum Granularity {
    #[default]
    Token,
    /// Characters of the space-joined surface text.
    Char(Arc<Vocab>),
}

#[derive(Clone, Copy, Debug)]
pub struct RetrieveOptions {
    pub tau: f64,
    pub n_max: usize,
    /// Leave-one-out: skip entries with this id whose source equals the query.
    pub exclude_id: Option<u64>,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        RetrieveOptions {
            tau: 0.4,
            n_max: 3,
            exclude_id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    pub id: u64,
    pub src: TokenSeq,
    pub tgt: TokenSeq,
    pub score: f64,
}

/// Retrieved matches, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub query: TokenSeq,
    pub matches: Vec<Match>,
    pub capacity: usize,
}

impl MatchSet {
    pub fn targets(&self) -> Vec<TokenSeq> {
        self.matches.iter().map(|m| m.tgt.clone()).collect()
    }
}

struct Bucket {
    len: usize,
    /// Indices into `TmIndex::entries`, ascending.
    members: Vec<usize>,
    /// unit -> (position in `members`, occurrences)
    postings: HashMap<u64, Vec<(u32, u32)>>,
}

/// Immutable retrieval index: entries bucketed by source length, with
/// per-bucket unit postings for overlap-based pruning.
pub struct TmIndex {
    entries: Vec<TmEntry>,
    units: Vec<Vec<u64>>,
    buckets: Vec<Bucket>,
    granularity: Granularity,
    surfaces: HashMap<Arc<str>, u64>,
}

struct Encoder<'a> {
    granularity: &'a Granularity,
    keys: KeyInterner,
}

impl Encoder<'_> {
    fn encode(&mut self, seq: &TokenSeq) -> Vec<u64> {
        match self.granularity {
            Granularity::Token => self.keys.keys(seq),
            Granularity::Char(vocab) => chars(seq, vocab),
        }
    }
}

fn chars(seq: &TokenSeq, vocab: &Vocab) -> Vec<u64> {
    vocab
        .surfaces(seq)
        .join(" ")
        .chars()
        .map(|c| c as u64)
        .collect()
}

fn counts(units: &[u64]) -> HashMap<u64, u32> {
    let mut c = HashMap::new();
    for &u in units {
        *c.entry(u).or_insert(0) += 1;
    }
    c
}

impl TmIndex {
    pub fn build(entries: Vec<TmEntry>) -> Self {
        Self::build_with(entries, Granularity::Token)
    }

    pub fn build_with(entries: Vec<TmEntry>, granularity: Granularity) -> Self {
        let mut enc = Encoder {
            granularity: &granularity,
            keys: KeyInterner::new(),
        };
        let units: Vec<Vec<u64>> = entries.iter().map(|e| enc.encode(&e.src)).collect();
        let surfaces = enc.keys.into_surface_keys();

        let mut by_len: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, u) in units.iter().enumerate() {
            by_len.entry(u.len()).or_default().push(i);
        }
        let mut buckets: Vec<Bucket> = by_len
            .into_iter()
            .map(|(len, members)| {
                let mut postings: HashMap<u64, Vec<(u32, u32)>> = HashMap::new();
                for (local, &e) in members.iter().enumerate() {
                    let mut c: Vec<(u64, u32)> = counts(&units[e]).into_iter().collect();
                    c.sort_unstable();
                    for (u, n) in c {
                        postings.entry(u).or_default().push((local as u32, n));
                    }
                }
                Bucket {
                    len,
                    members,
                    postings,
                }
            })
            .collect();
        buckets.sort_by_key(|b| b.len);
        TmIndex {
            entries,
            units,
            buckets,
            granularity,
            surfaces,
        }
    }

    pub fn entries(&self) -> &[TmEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(source length, entry count)` per bucket, ascending by length.
    pub fn bucket_sizes(&self) -> Vec<(usize, usize)> {
        self.buckets.iter().map(|b| (b.len, b.members.len())).collect()
    }

    fn query_units(&self, seq: &TokenSeq) -> Vec<u64> {
        match &self.granularity {
            Granularity::Char(vocab) => chars(seq, vocab),
            Granularity::Token => {
                // Surfaces unseen in the TM get keys no entry can have.
                let mut fresh = u64::MAX;
                (0..seq.len())
                    .map(|p| {
                        let id = seq.get(p);
                        if id != UNK {
                            return id as u64;
                        }
                        if let Some(&k) = seq.surface(p).and_then(|s| self.surfaces.get(s)) {
                            return k;
                        }
                        fresh -= 1;
                        fresh
                    })
                    .collect()
            }
        }
    }

    fn is_self(&self, e: usize, query: &TokenSeq, opts: &RetrieveOptions) -> bool {
        opts.exclude_id == Some(self.entries[e].id) && self.entries[e].src == *query
    }

    fn to_matchset(&self, query: &TokenSeq, mut hits: Vec<(f64, usize)>, n_max: usize) -> MatchSet {
        hits.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(self.entries[a.1].id.cmp(&self.entries[b.1].id))
                .then(a.1.cmp(&b.1))
        });
        hits.truncate(n_max);
        MatchSet {
            query: query.clone(),
            matches: hits
                .into_iter()
                .map(|(score, e)| Match {
                    id: self.entries[e].id,
                    src: self.entries[e].src.clone(),
                    tgt: self.entries[e].tgt.clone(),
                    score,
                })
                .collect(),
            capacity: n_max,
        }
    }

    /// Linear scan over every entry; the reference semantics of retrieval.
    pub fn retrieve_brute_force(&self, query: &TokenSeq, opts: &RetrieveOptions) -> MatchSet {
        let q = self.query_units(query);
        let hits = (0..self.entries.len())
            .filter(|&e| !self.is_self(e, query, opts))
            .map(|e| {
                let u = &self.units[e];
                (similarity_from(levenshtein(&q, u), q.len().max(u.len())), e)
            })
            .filter(|&(s, _)| s >= opts.tau)
            .collect();
        self.to_matchset(query, hits, opts.n_max)
    }

    /// Top-`n_max` entries with similarity ≥ τ, ties broken by ascending id.
    pub fn retrieve(&self, query: &TokenSeq, opts: &RetrieveOptions) -> MatchSet {
        let q = self.query_units(query);
        let qlen = q.len();
        let qcounts = counts(&q);
        let n_max = opts.n_max.max(1);
        // current hits; `floor` is the n_max-th best score once full
        let mut hits: Vec<(f64, usize)> = Vec::new();
        let mut overlap: Vec<u32> = Vec::new();

        for bucket in &self.buckets {
            let m = qlen.max(bucket.len);
            // |len diff| lower-bounds the distance
            if similarity_from(qlen.abs_diff(bucket.len), m) < opts.tau {
                continue;
            }
            // ED ≥ max(|a|,|b|) − multiset overlap
            overlap.clear();
            overlap.resize(bucket.members.len(), 0);
            for (u, &qc) in &qcounts {
                if let Some(list) = bucket.postings.get(u) {
                    for &(local, ec) in list {
                        overlap[local as usize] += qc.min(ec);
                    }
                }
            }
            for (local, &e) in bucket.members.iter().enumerate() {
                let floor = current_floor(&hits, n_max, opts.tau);
                let bound = similarity_from(m - overlap[local] as usize, m);
                if bound < floor || self.is_self(e, query, opts) {
                    continue;
                }
                let Some(max_ed) = max_distance(m, floor) else {
                    continue;
                };
                if let Some(ed) = levenshtein_bounded(&q, &self.units[e], max_ed) {
                    let s = similarity_from(ed, m);
                    if s >= opts.tau {
                        push_hit(&mut hits, (s, e), n_max, &self.entries);
                    }
                }
            }
        }
        self.to_matchset(query, hits, n_max)
    }

    /// Retrieval for many queries in parallel; order follows `queries`.
    pub fn retrieve_all(&self, queries: &[(TokenSeq, Option<u64>)], opts: &RetrieveOptions) -> Vec<MatchSet> {
        queries
            .par_iter()
            .map(|(q, id)| {
                let o = RetrieveOptions {
                    exclude_id: *id,
                    ..*opts
                };
                self.retrieve(q, &o)
            })
            .collect()
    }
}

fn current_floor(hits: &[(f64, usize)], n_max: usize, tau: f64) -> f64 {
    if hits.len() < n_max {
        tau
    } else {
        hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min).max(tau)
    }
}

/// Keeps the best `n_max` hits under (score desc, id asc, index asc).
fn push_hit(hits: &mut Vec<(f64, usize)>, hit: (f64, usize), n_max: usize, entries: &[TmEntry]) {
    let worse = |a: &(f64, usize), b: &(f64, usize)| {
        a.0 < b.0 || (a.0 == b.0 && (entries[a.1].id, a.1) > (entries[b.1].id, b.1))
    };
    if hits.len() < n_max {
        hits.push(hit);
        return;
    }
    let (wi, w) = hits
        .iter()
        .enumerate()
        .fold((0, hits[0]), |acc, (i, h)| if worse(h, &acc.1) { (i, *h) } else { acc });
    if worse(&w, &hit) {
        hits[wi] = hit;
    }
}

/// Builds the index from TM entries (token granularity).
pub fn build_index(tm: Vec<TmEntry>) -> TmIndex {
    TmIndex::build(tm)
}

pub fn retrieve(x: &TokenSeq, index: &TmIndex, tau: f64, n_max: usize) -> MatchSet {
    index.retrieve(
        x,
        &RetrieveOptions {
            tau,
            n_max,
            exclude_id: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn seq(c: &[u32]) -> TokenSeq {
        TokenSeq::from_content(c).unwrap()
    }

    #[test]
    fn edit_distance_examples() {
        let s = seq(&[5, 6, 7]);
        assert_eq!(edit_distance(&s, &s), 0);
        // a b c vs a x c
        assert_eq!(edit_distance(&seq(&[5, 6, 7]), &seq(&[5, 9, 7])), 1);
        assert_eq!(
            edit_distance(&seq(&[5, 6, 7, 8, 9]), &seq(&[10, 11, 12, 13, 14])),
            5
        );
        assert_eq!(edit_distance(&TokenSeq::empty(), &seq(&[5, 6])), 2);
    }

    #[test]
    fn similarity_examples() {
        let x = seq(&[5, 6, 7, 8, 9]);
        assert_eq!(similarity(&x, &x), 1.0);
        assert_eq!(similarity(&x, &seq(&[5, 6, 10, 8, 9])), 0.8);
        assert_eq!(similarity(&x, &seq(&[10, 11, 12, 13, 14])), 0.0);
        assert_eq!(similarity(&TokenSeq::empty(), &TokenSeq::empty()), 1.0);
    }

    #[test]
    fn bounded_matches_full() {
        let mut rng = Rng::new(11);
        for _ in 0..2000 {
            let a: Vec<u8> = (0..rng.below(12)).map(|_| rng.below(4) as u8).collect();
            let b: Vec<u8> = (0..rng.below(12)).map(|_| rng.below(4) as u8).collect();
            let d = levenshtein(&a, &b);
            for max in 0..14 {
                let got = levenshtein_bounded(&a, &b, max);
                assert_eq!(got, (d <= max).then_some(d), "{a:?} {b:?} max={max}");
            }
        }
    }

    #[test]
    fn max_distance_is_tight() {
        for m in 0..40 {
            for tau in [0.0, 0.1, 0.33, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0] {
                let got = max_distance(m, tau);
                let want = (0..=m).filter(|&e| similarity_from(e, m) >= tau).max();
                assert_eq!(got, want, "m={m} tau={tau}");
            }
        }
    }

    fn entry(id: u64, src: &[u32]) -> TmEntry {
        TmEntry {
            id,
            src: seq(src),
            tgt: seq(src),
        }
    }

    #[test]
    fn empty_and_single_entry_index() {
        let idx = build_index(vec![]);
        assert!(retrieve(&seq(&[5]), &idx, 0.4, 3).matches.is_empty());

        let idx = build_index(vec![entry(1, &[5, 6, 7, 8, 9])]);
        let near = seq(&[5, 6, 7, 8, 10]);
        assert_eq!(retrieve(&near, &idx, 0.8, 3).matches.len(), 1);
        assert!(retrieve(&near, &idx, 0.81, 3).matches.is_empty());
    }

    #[test]
    fn identical_query_first_and_self_exclusion() {
        let idx = build_index(vec![
            entry(4, &[5, 6, 7]),
            entry(2, &[5, 6, 8]),
            entry(3, &[5, 6, 7]),
        ]);
        let q = seq(&[5, 6, 7]);
        let m = retrieve(&q, &idx, 0.4, 3);
        let ids: Vec<u64> = m.matches.iter().map(|m| m.id).collect();
        assert_eq!(ids, vec![3, 4, 2]);
        assert_eq!(m.matches[0].score, 1.0);

        let opts = RetrieveOptions {
            tau: 0.4,
            n_max: 3,
            exclude_id: Some(3),
        };
        let ids: Vec<u64> = idx.retrieve(&q, &opts).matches.iter().map(|m| m.id).collect();
        assert_eq!(ids, vec![4, 2]);
    }

    #[test]
    fn char_granularity() {
        let mut v = Vocab::new();
        let a = v.encode_interning(&["cats", "sleep"]);
        let b = v.encode_interning(&["cat", "sleeps"]);
        let v = Arc::new(v);
        let idx = TmIndex::build_with(
            vec![TmEntry {
                id: 0,
                src: b.clone(),
                tgt: b,
            }],
            Granularity::Char(v),
        );
        // "cats sleep" vs "cat sleeps": 2 edits over 10 chars
        let m = retrieve(&a, &idx, 0.0, 1);
        assert!((m.matches[0].score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn unk_surfaces_match_across_query_and_tm() {
        let v = Vocab::from_tokens(["a"]);
        let src = v.encode(&["a", "zz"]);
        let idx = build_index(vec![TmEntry {
            id: 0,
            src: src.clone(),
            tgt: src,
        }]);
        let same = v.encode(&["a", "zz"]);
        let other = v.encode(&["a", "yy"]);
        assert_eq!(retrieve(&same, &idx, 0.0, 1).matches[0].score, 1.0);
        assert_eq!(retrieve(&other, &idx, 0.0, 1).matches[0].score, 0.5);
    }
}
