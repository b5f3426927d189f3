//! Exhaustive recombination of per-match candidate lists.
//!
//! Tuples are visited in lexicographic order of candidate indices and the
//! incumbent only changes on a strict improvement of (coverage, edges), so
//! ties resolve to the lexicographically smallest tuple. A branch is cut when
//! its optimistic bound cannot beat the incumbent.

use super::{AlignError, AlignmentGraph, OneWayAlignment};

type Bits = Vec<u64>;

fn bits_of(a: &OneWayAlignment, words: usize) -> Bits {
    let mut b = vec![0u64; words];
    for &(_, j) in &a.pairs {
        b[j / 64] |= 1 << (j % 64);
    }
    b
}

fn union_count(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x | y).count_ones() as usize).sum()
}

struct Search<'a> {
    cands: &'a [Vec<OneWayAlignment>],
    bits: Vec<Vec<Bits>>,
    /// Union of every candidate's coverage for matches `n..`.
    suffix_union: Vec<Bits>,
    /// Sum over matches `n..` of the largest candidate score.
    suffix_edges: Vec<usize>,
    choice: Vec<usize>,
    best: Option<((usize, usize), Vec<usize>)>,
}

impl Search<'_> {
    fn go(&mut self, n: usize, cov: &Bits, edges: usize) {
        let value_bound = (
            union_count(cov, &self.suffix_union[n]),
            edges + self.suffix_edges[n],
        );
        if let Some((best, _)) = &self.best {
            if value_bound <= *best {
                return;
            }
        }
        if n == self.cands.len() {
            let value = (union_count(cov, cov), edges);
            self.best = Some((value, self.choice.clone()));
            return;
        }
        for k in 0..self.cands[n].len() {
            let next: Bits = cov.iter().zip(&self.bits[n][k]).map(|(x, y)| x | y).collect();
            self.choice.push(k);
            self.go(n + 1, &next, edges + self.cands[n][k].score());
            self.choice.pop();
        }
    }
}

/// Index of the chosen candidate for each match and the resulting
/// (coverage, edges) value.
pub fn recombine_choice(
    candidates: &[Vec<OneWayAlignment>],
    ref_len: usize,
) -> Result<(Vec<usize>, (usize, usize)), AlignError> {
    if let Some(n) = candidates.iter().position(Vec::is_empty) {
        return Err(AlignError::NoCandidates(n));
    }
    let words = ref_len.div_ceil(64).max(1);
    let bits: Vec<Vec<Bits>> = candidates
        .iter()
        .map(|c| c.iter().map(|a| bits_of(a, words)).collect())
        .collect();
    let n = candidates.len();
    let mut suffix_union = vec![vec![0u64; words]; n + 1];
    let mut suffix_edges = vec![0usize; n + 1];
    for i in (0..n).rev() {
        let mut u = suffix_union[i + 1].clone();
        for b in &bits[i] {
            for (x, y) in u.iter_mut().zip(b) {
                *x |= y;
            }
        }
        suffix_union[i] = u;
        suffix_edges[i] =
            suffix_edges[i + 1] + candidates[i].iter().map(OneWayAlignment::score).max().unwrap_or(0);
    }
    let mut s = Search {
        cands: candidates,
        bits,
        suffix_union,
        suffix_edges,
        choice: Vec::with_capacity(n),
        best: None,
    };
    s.go(0, &vec![0u64; words], 0);
    let (value, choice) = s.best.expect("non-empty candidate lists yield a tuple");
    Ok((choice, value))
}

/// Best recombination as an alignment graph over matches of the given
/// content lengths.
pub fn recombine(
    candidates: &[Vec<OneWayAlignment>],
    ref_len: usize,
    lengths: Vec<usize>,
) -> Result<AlignmentGraph, AlignError> {
    let (choice, _) = recombine_choice(candidates, ref_len)?;
    let edges = choice
        .iter()
        .enumerate()
        .flat_map(|(n, &k)| candidates[n][k].pairs.iter().map(move |&(i, j)| (n, i, j)))
        .collect();
    let g = AlignmentGraph::from_parts(lengths, ref_len, edges);
    g.validate_order()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn cand(js: &[usize]) -> OneWayAlignment {
        OneWayAlignment {
            pairs: js.iter().enumerate().map(|(i, &j)| (i, j)).collect(),
        }
    }

    /// Plain enumeration of the full product, first maximum wins.
    fn brute(cands: &[Vec<OneWayAlignment>], ref_len: usize) -> (Vec<usize>, (usize, usize)) {
        let mut best: Option<(Vec<usize>, (usize, usize))> = None;
        let mut idx = vec![0usize; cands.len()];
        loop {
            let mut cov = vec![false; ref_len];
            let mut edges = 0;
            for (n, &k) in idx.iter().enumerate() {
                for &(_, j) in &cands[n][k].pairs {
                    cov[j] = true;
                }
                edges += cands[n][k].score();
            }
            let v = (cov.iter().filter(|&&c| c).count(), edges);
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                best = Some((idx.clone(), v));
            }
            let mut d = cands.len();
            loop {
                if d == 0 {
                    return best.unwrap();
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < cands[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    #[test]
    fn prefers_coverage_then_edges_then_lex() {
        let c = vec![
            vec![cand(&[0, 1]), cand(&[2, 3])],
            vec![cand(&[0, 1]), cand(&[2, 3]), cand(&[2])],
        ];
        let (choice, v) = recombine_choice(&c, 4).unwrap();
        assert_eq!(choice, vec![0, 1]);
        assert_eq!(v, (4, 4));
    }

    #[test]
    fn pruned_search_equals_full_enumeration() {
        let mut rng = Rng::new(11);
        for _ in 0..300 {
            let ref_len = 1 + rng.below(70);
            let n = 1 + rng.below(4);
            let cands: Vec<Vec<OneWayAlignment>> = (0..n)
                .map(|_| {
                    (0..1 + rng.below(5))
                        .map(|_| {
                            let k = rng.below(ref_len.min(6) + 1);
                            cand(&rng.subset(ref_len, k))
                        })
                        .collect()
                })
                .collect();
            assert_eq!(recombine_choice(&cands, ref_len).unwrap(), brute(&cands, ref_len));
        }
    }

    #[test]
    fn empty_list_is_an_error() {
        assert_eq!(
            recombine_choice(&[vec![cand(&[0])], vec![]], 2),
            Err(AlignError::NoCandidates(1))
        );
    }
}
