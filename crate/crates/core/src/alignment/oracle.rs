//! Exact N-way alignment by dynamic programming, for small instances.
//!
//! State `(j, p_1..p_N)`: reference position `j` and one cursor per match.
//! From a state, either a cursor skips one token, or reference position `j`
//! is closed by linking it to any subset of the matches whose cursor token
//! equals `y_ref[j]` (those cursors advance). Values pack coverage in the
//! high half and edges in the low half, so `u64` order is the optimization
//! order.

use super::{group_keys, AlignError, AlignmentGraph};
use crate::seq::TokenSeq;

/// Largest `Π(|y_n|+1) · |y_ref|` accepted by default.
pub const DEFAULT_ORACLE_BUDGET: u128 = 2_000_000;

const COVER: u64 = 1 << 32;

pub fn exact_nway_oracle(matches: &[TokenSeq], y_ref: &TokenSeq) -> Result<AlignmentGraph, AlignError> {
    exact_nway_oracle_with(matches, y_ref, DEFAULT_ORACLE_BUDGET)
}

pub fn exact_nway_oracle_with(
    matches: &[TokenSeq],
    y_ref: &TokenSeq,
    budget: u128,
) -> Result<AlignmentGraph, AlignError> {
    let lengths: Vec<usize> = matches.iter().map(TokenSeq::len).collect();
    let r = y_ref.len();
    let states: u128 = lengths.iter().map(|&l| l as u128 + 1).product();
    let needed = states * r.max(1) as u128;
    if needed > budget || matches.len() > 16 {
        return Err(AlignError::BudgetExceeded { needed, budget });
    }
    let states = states as usize;
    let (mk, rk) = group_keys(matches, y_ref);
    let n = matches.len();
    let mut stride = vec![1usize; n];
    for i in 1..n {
        stride[i] = stride[i - 1] * (lengths[i - 1] + 1);
    }
    let cursor = |p: usize, i: usize| (p / stride[i]) % (lengths[i] + 1);

    // table[j * states + p]
    let mut table = vec![0u64; (r + 1) * states];
    let eligible = |p: usize, j: usize| -> Vec<usize> {
        (0..n)
            .filter(|&i| {
                let c = cursor(p, i);
                c < lengths[i] && mk[i][c] == rk[j]
            })
            .collect()
    };
    for j in (0..r).rev() {
        for p in (0..states).rev() {
            let mut best = 0u64;
            for i in 0..n {
                if cursor(p, i) < lengths[i] {
                    best = best.max(table[j * states + p + stride[i]]);
                }
            }
            let m = eligible(p, j);
            for mask in 0..(1usize << m.len()) {
                let (mut q, mut gain) = (p, 0u64);
                for (b, &i) in m.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        q += stride[i];
                        gain += 1;
                    }
                }
                if gain > 0 {
                    gain += COVER;
                }
                best = best.max(table[(j + 1) * states + q] + gain);
            }
            table[j * states + p] = best;
        }
    }

    let mut edges = Vec::new();
    let (mut j, mut p) = (0usize, 0usize);
    while j < r {
        let v = table[j * states + p];
        let m = eligible(p, j);
        let mut moved = false;
        for mask in 0..(1usize << m.len()) {
            let mut q = p;
            let mut picked = Vec::new();
            for (b, &i) in m.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    q += stride[i];
                    picked.push(i);
                }
            }
            let gain = if picked.is_empty() { 0 } else { COVER + picked.len() as u64 };
            if table[(j + 1) * states + q] + gain == v {
                edges.extend(picked.iter().map(|&i| (i, cursor(p, i), j)));
                p = q;
                j += 1;
                moved = true;
                break;
            }
        }
        if moved {
            continue;
        }
        let i = (0..n)
            .find(|&i| cursor(p, i) < lengths[i] && table[j * states + p + stride[i]] == v)
            .expect("optimal value has a witness");
        p += stride[i];
    }
    let g = AlignmentGraph::from_parts(lengths, r, edges);
    let stats = g.stats();
    debug_assert_eq!(
        (stats.covered as u64) << 32 | stats.total_edges as u64,
        table[0]
    );
    g.validate(matches, y_ref)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::seq;
    use super::*;
    use crate::alignment::{lcs_len, nway_align, CoverageStats, DEFAULT_K};
    use crate::rng::Rng;

    #[test]
    fn single_match_is_lcs() {
        let mut rng = Rng::new(21);
        for _ in 0..200 {
            let a: Vec<u32> = (0..rng.below(8)).map(|_| 10 + rng.below(3) as u32).collect();
            let b: Vec<u32> = (0..rng.below(8)).map(|_| 10 + rng.below(3) as u32).collect();
            let (sa, sb) = (TokenSeq::from_content(&a).unwrap(), TokenSeq::from_content(&b).unwrap());
            let g = exact_nway_oracle(&[sa], &sb).unwrap();
            let l = lcs_len(&a, &b);
            assert_eq!(g.stats(), CoverageStats { covered: l, total_edges: l });
        }
    }

    #[test]
    fn finds_split_coverage() {
        let r = seq("abxab");
        let g = exact_nway_oracle(&[seq("ab"), seq("ab")], &r).unwrap();
        assert_eq!(g.stats(), CoverageStats { covered: 4, total_edges: 4 });
    }

    #[test]
    fn heuristic_never_beats_oracle() {
        let mut rng = Rng::new(22);
        for _ in 0..200 {
            let mut mk = |max: usize| {
                let v: Vec<u32> = (0..rng.below(max)).map(|_| 10 + rng.below(3) as u32).collect();
                TokenSeq::from_content(&v).unwrap()
            };
            let r = mk(8);
            let m: Vec<TokenSeq> = (0..3).map(|_| mk(6)).collect();
            let exact = exact_nway_oracle(&m, &r).unwrap().stats();
            let heur = nway_align(&m, &r, DEFAULT_K).stats();
            assert!(heur <= exact, "{heur:?} > {exact:?}");
        }
    }

    #[test]
    fn budget_is_enforced() {
        let long = TokenSeq::from_content(&[10; 200]).unwrap();
        let err = exact_nway_oracle(&[long.clone(), long.clone(), long.clone()], &long).unwrap_err();
        assert!(matches!(err, AlignError::BudgetExceeded { .. }));
    }
}
