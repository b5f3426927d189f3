//! Provenance-aware evaluation: clipped n-gram precision split by the origin
//! of the tokens, and bag-of-words cover/noise of a match set.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::decode::DecodeResult;
use crate::edits::Origin;
use crate::seq::{KeyInterner, TokenSeq};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{results} results but {refs} references")]
    LengthMismatch { results: usize, refs: usize },
    #[error("item {index}: {origins} origins for {tokens} tokens")]
    Provenance { index: usize, tokens: usize, origins: usize },
    #[error("n-gram order must be at least 1")]
    Order,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: String,
    /// Clipped matches.
    pub matched: usize,
    pub total: usize,
    /// `matched / total`, absent for an empty class.
    pub precision: Option<f64>,
    /// `total` over all n-grams of this order, absent when there are none.
    pub share: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderStats {
    pub order: usize,
    pub overall: ClassStats,
    /// A partition of the n-grams of this order by origin.
    pub classes: Vec<ClassStats>,
}

impl OrderStats {
    pub fn class(&self, name: &str) -> Option<&ClassStats> {
        self.classes.iter().find(|c| c.class == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OriginStats {
    pub orders: Vec<OrderStats>,
}

impl OriginStats {
    pub fn order(&self, n: usize) -> Option<&OrderStats> {
        self.orders.get(n.checked_sub(1)?)
    }
}

/// Class names of order `n`: unigrams split copy/gen, bigrams by the origins
/// of both tokens, longer n-grams into all-copy, all-gen and mixed.
pub fn class_names(n: usize) -> Vec<&'static str> {
    match n {
        1 => vec!["copy", "gen"],
        2 => vec!["copy-copy", "copy-gen", "gen-copy", "gen-gen"],
        _ => vec!["copy", "gen", "mixed"],
    }
}

fn class_of(origins: &[Origin]) -> usize {
    match origins {
        [a] => (!a.is_copy()) as usize,
        [a, b] => 2 * (!a.is_copy()) as usize + (!b.is_copy()) as usize,
        _ if origins.iter().all(|o| o.is_copy()) => 0,
        _ if origins.iter().all(|o| !o.is_copy()) => 1,
        _ => 2,
    }
}

fn make(class: &str, matched: usize, total: usize, all: usize) -> ClassStats {
    ClassStats {
        class: class.to_string(),
        matched,
        total,
        precision: (total > 0).then(|| matched as f64 / total as f64),
        share: (all > 0).then(|| total as f64 / all as f64),
    }
}

/// Per sentence and order: `(class, matched)` for every output n-gram. The
/// reference budget of each n-gram is spent left to right.
fn sentence_counts(out: &TokenSeq, prov: &[Origin], y_ref: &TokenSeq, max_order: usize) -> Vec<Vec<[usize; 2]>> {
    let mut keys = KeyInterner::new();
    let rk = keys.keys(y_ref);
    let ok: Vec<u64> = (0..out.len()).map(|p| keys.lookup(out, p)).collect();
    let width = |n: usize| class_names(n).len();
    (1..=max_order)
        .map(|n| {
            let mut budget: HashMap<&[u64], usize> = HashMap::new();
            for g in rk.windows(n) {
                *budget.entry(g).or_default() += 1;
            }
            let mut acc = vec![[0usize; 2]; width(n)];
            for (i, g) in ok.windows(n).enumerate() {
                let c = class_of(&prov[i..i + n]);
                acc[c][1] += 1;
                if let Some(b) = budget.get_mut(g).filter(|b| **b > 0) {
                    *b -= 1;
                    acc[c][0] += 1;
                }
            }
            acc
        })
        .collect()
}

/// Corpus-level clipped precision by origin class, for orders `1..=max_order`.
pub fn origin_ngram_stats_of(
    items: &[(&TokenSeq, &[Origin])],
    refs: &[TokenSeq],
    max_order: usize,
) -> Result<OriginStats, MetricsError> {
    if max_order == 0 {
        return Err(MetricsError::Order);
    }
    if items.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            results: items.len(),
            refs: refs.len(),
        });
    }
    for (index, (out, prov)) in items.iter().enumerate() {
        if out.len() != prov.len() {
            return Err(MetricsError::Provenance {
                index,
                tokens: out.len(),
                origins: prov.len(),
            });
        }
    }
    let mut acc: Vec<Vec<[usize; 2]>> = (1..=max_order).map(|n| vec![[0; 2]; class_names(n).len()]).collect();
    for ((out, prov), r) in items.iter().zip(refs) {
        for (a, s) in acc.iter_mut().zip(sentence_counts(out, prov, r, max_order)) {
            for (x, y) in a.iter_mut().zip(s) {
                x[0] += y[0];
                x[1] += y[1];
            }
        }
    }
    let orders = acc
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let n = i + 1;
            let matched: usize = a.iter().map(|x| x[0]).sum();
            let total: usize = a.iter().map(|x| x[1]).sum();
            OrderStats {
                order: n,
                overall: make("all", matched, total, total),
                classes: class_names(n)
                    .into_iter()
                    .zip(&a)
                    .map(|(name, x)| make(name, x[0], x[1], total))
                    .collect(),
            }
        })
        .collect();
    Ok(OriginStats { orders })
}

pub fn origin_ngram_stats(results: &[DecodeResult], refs: &[TokenSeq], max_order: usize) -> Result<OriginStats, MetricsError> {
    let items: Vec<(&TokenSeq, &[Origin])> = results.iter().map(|r| (&r.output, r.provenance.as_slice())).collect();
    origin_ngram_stats_of(&items, refs, max_order)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverNoise {
    /// Share of reference tokens present in the pooled matches, counted as
    /// multisets. 1.0 for an empty reference.
    pub cover: f64,
    /// Share of match tokens absent from the reference. 0.0 when the matches
    /// hold no token.
    pub noise: f64,
}

pub fn cover_noise(y_ref: &TokenSeq, matches: &[TokenSeq]) -> CoverNoise {
    let mut keys = KeyInterner::new();
    let mut ref_counts: HashMap<u64, usize> = HashMap::new();
    for k in keys.keys(y_ref) {
        *ref_counts.entry(k).or_default() += 1;
    }
    let mut pool: HashMap<u64, usize> = HashMap::new();
    let (mut total, mut absent) = (0usize, 0usize);
    for m in matches {
        for p in 0..m.len() {
            let k = keys.lookup(m, p);
            *pool.entry(k).or_default() += 1;
            total += 1;
            absent += !ref_counts.contains_key(&k) as usize;
        }
    }
    let covered: usize = ref_counts.iter().map(|(k, &c)| c.min(pool.get(k).copied().unwrap_or(0))).sum();
    CoverNoise {
        cover: if y_ref.is_empty() {
            1.0
        } else {
            covered as f64 / y_ref.len() as f64
        },
        noise: if total == 0 { 0.0 } else { absent as f64 / total as f64 },
    }
}
