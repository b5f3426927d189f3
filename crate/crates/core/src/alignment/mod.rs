//! Coverage-maximizing N-way alignment of match targets against a reference.
//!
//! An alignment is a set of edges `(n, i, j)` linking content position `i`
//! of match `n` to content position `j` of the reference such that
//!
//! * linked tokens are identical, and
//! * the edges of one match never cross: `(i' − i)(j' − j) > 0`.
//!
//! The optimum maximizes the number of covered reference positions, then the
//! number of edges. [`nway_align`] computes it heuristically (k-best 1-way
//! alignments per match, then exhaustive recombination);
//! [`exact_nway_oracle`] solves small instances exactly.
//!
//! Sentinels are implicitly aligned and never appear in edge lists.

mod kbest;
mod oracle;
mod recombine;
mod set_cover;

use thiserror::Error;

use crate::seq::{KeyInterner, TokenSeq};

pub use kbest::{kbest_1way, kbest_1way_keys, lcs_len};
pub use oracle::{exact_nway_oracle, exact_nway_oracle_with, DEFAULT_ORACLE_BUDGET};
pub use recombine::{recombine, recombine_choice};
pub use set_cover::{set_cover_decision, CoverInstance, DEFAULT_COVER_BUDGET};

/// Default number of 1-way alignments kept per match.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("instance needs {needed} states, over the budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("candidate list for match {0} is empty")]
    NoCandidates(usize),
    #[error("edge ({n}, {i}, {j}) links different tokens")]
    TokenMismatch { n: usize, i: usize, j: usize },
    #[error("edges ({n}, {i}, {j}) and ({n}, {i2}, {j2}) cross or share a coordinate")]
    Crossing {
        n: usize,
        i: usize,
        j: usize,
        i2: usize,
        j2: usize,
    },
    #[error("edge ({n}, {i}, {j}) is out of range")]
    OutOfRange { n: usize, i: usize, j: usize },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

/// A monotone matching between one match (`i`) and the reference (`j`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OneWayAlignment {
    pub pairs: Vec<(usize, usize)>,
}

impl OneWayAlignment {
    pub fn score(&self) -> usize {
        self.pairs.len()
    }
}

/// Edge `(n, i, j)`: match `n`, match position `i`, reference position `j`.
pub type Edge = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentGraph {
    /// Content length of each match.
    pub lengths: Vec<usize>,
    /// Content length of the reference.
    pub ref_len: usize,
    /// Sorted by `(n, i)`.
    pub edges: Vec<Edge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CoverageStats {
    pub covered: usize,
    pub total_edges: usize,
}

impl AlignmentGraph {
    pub fn empty(lengths: Vec<usize>, ref_len: usize) -> Self {
        AlignmentGraph {
            lengths,
            ref_len,
            edges: Vec::new(),
        }
    }

    pub fn n_seqs(&self) -> usize {
        self.lengths.len()
    }

    /// Reference positions with at least one incident edge.
    pub fn covered_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.ref_len];
        for &(_, _, j) in &self.edges {
            m[j] = true;
        }
        m
    }

    pub fn stats(&self) -> CoverageStats {
        CoverageStats {
            covered: self.covered_mask().iter().filter(|&&c| c).count(),
            total_edges: self.edges.len(),
        }
    }

    /// Edges of match `n`, ascending in `i`.
    pub fn edges_of(&self, n: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.0 == n)
            .map(|&(_, i, j)| (i, j))
    }

    /// Checks both alignment properties against the sequences.
    pub fn validate(&self, matches: &[TokenSeq], y_ref: &TokenSeq) -> Result<(), AlignError> {
        if matches.len() != self.lengths.len()
            || y_ref.len() != self.ref_len
            || matches.iter().zip(&self.lengths).any(|(m, &l)| m.len() != l)
        {
            return Err(AlignError::Invalid("graph shape does not match sequences".into()));
        }
        for &(n, i, j) in &self.edges {
            if n >= matches.len() || i >= matches[n].len() || j >= y_ref.len() {
                return Err(AlignError::OutOfRange { n, i, j });
            }
            if !matches[n].same_token(i, y_ref, j) {
                return Err(AlignError::TokenMismatch { n, i, j });
            }
        }
        self.validate_order()
    }

    /// Property (ii) and sortedness only.
    pub fn validate_order(&self) -> Result<(), AlignError> {
        for w in self.edges.windows(2) {
            let ((n, i, j), (n2, i2, j2)) = (w[0], w[1]);
            if n > n2 {
                return Err(AlignError::Invalid("edges not sorted by match".into()));
            }
            if n == n2 && !(i2 > i && j2 > j) {
                return Err(AlignError::Crossing { n, i, j, i2, j2 });
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(lengths: Vec<usize>, ref_len: usize, mut edges: Vec<Edge>) -> Self {
        edges.sort_unstable();
        AlignmentGraph {
            lengths,
            ref_len,
            edges,
        }
    }
}

/// Content keys for a group of sequences, consistent with
/// [`TokenSeq::same_token`] across the whole group.
pub(crate) fn group_keys(matches: &[TokenSeq], y_ref: &TokenSeq) -> (Vec<Vec<u64>>, Vec<u64>) {
    let mut keys = KeyInterner::new();
    let r = keys.keys(y_ref);
    let m = matches.iter().map(|s| keys.keys(s)).collect();
    (m, r)
}

/// Two-step heuristic: k-best 1-way alignments per match, then the
/// recombination maximizing (coverage, edges). No matches gives an empty graph.
pub fn nway_align(matches: &[TokenSeq], y_ref: &TokenSeq, k: usize) -> AlignmentGraph {
    let lengths: Vec<usize> = matches.iter().map(TokenSeq::len).collect();
    if matches.is_empty() {
        return AlignmentGraph::empty(lengths, y_ref.len());
    }
    let (mk, rk) = group_keys(matches, y_ref);
    let candidates: Vec<Vec<OneWayAlignment>> =
        mk.iter().map(|m| kbest_1way_keys(m, &rk, k)).collect();
    let graph = recombine(&candidates, y_ref.len(), lengths)
        .expect("k-best lists always hold the empty alignment");
    debug_assert_eq!(graph.validate(matches, y_ref), Ok(()));
    graph
}

/// Alignment of each match taken independently (its single best 1-way
/// alignment), unioned. Baseline for the joint recombination.
pub fn independent_align(matches: &[TokenSeq], y_ref: &TokenSeq) -> AlignmentGraph {
    let (mk, rk) = group_keys(matches, y_ref);
    let edges = mk
        .iter()
        .enumerate()
        .flat_map(|(n, m)| {
            kbest_1way_keys(m, &rk, 1)
                .remove(0)
                .pairs
                .into_iter()
                .map(move |(i, j)| (n, i, j))
        })
        .collect();
    AlignmentGraph::from_parts(matches.iter().map(TokenSeq::len).collect(), y_ref.len(), edges)
}

#[cfg(test)]
pub(crate) mod test_util {
    use crate::seq::TokenSeq;

    pub fn seq(s: &str) -> TokenSeq {
        let ids: Vec<u32> = s.bytes().filter(|b| !b.is_ascii_whitespace()).map(|b| b as u32).collect();
        TokenSeq::from_content(&ids).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::seq;
    use super::*;

    #[test]
    fn identical_matches_give_full_coverage() {
        let r = seq("abcde");
        let g = nway_align(&[r.clone(), r.clone(), r.clone()], &r, DEFAULT_K);
        assert_eq!(
            g.stats(),
            CoverageStats {
                covered: 5,
                total_edges: 15
            }
        );
        g.validate(&[r.clone(), r.clone(), r.clone()], &r).unwrap();
    }

    #[test]
    fn no_matches_gives_empty_graph() {
        let g = nway_align(&[], &seq("abc"), DEFAULT_K);
        assert_eq!(g.n_seqs(), 0);
        assert!(g.edges.is_empty());
        assert_eq!(g.ref_len, 3);
    }

    #[test]
    fn joint_choice_beats_independent_best() {
        // Alone, each match prefers the "a b" prefix of the reference; jointly,
        // the second one is better used on the "a b" suffix.
        let r = seq("abxab");
        let m = [seq("ab"), seq("ab")];
        let indep = independent_align(&m, &r);
        let joint = nway_align(&m, &r, DEFAULT_K);
        assert_eq!(indep.stats().covered, 2);
        assert_eq!(joint.stats().covered, 4);
        joint.validate(&m, &r).unwrap();
    }

    #[test]
    fn validator_rejects_bad_graphs() {
        let r = seq("ab");
        let m = [seq("ab")];
        let bad = AlignmentGraph::from_parts(vec![2], 2, vec![(0, 0, 1)]);
        assert_eq!(bad.validate(&m, &r), Err(AlignError::TokenMismatch { n: 0, i: 0, j: 1 }));
        let crossing = AlignmentGraph {
            lengths: vec![2],
            ref_len: 2,
            edges: vec![(0, 0, 0), (0, 1, 0)],
        };
        let aa = seq("aa");
        assert!(matches!(
            crossing.validate(&[aa.clone()], &aa),
            Err(AlignError::Crossing { .. })
        ));
        let oob = AlignmentGraph::from_parts(vec![2], 2, vec![(0, 5, 0)]);
        assert!(matches!(oob.validate(&m, &r), Err(AlignError::OutOfRange { .. })));
    }
}
