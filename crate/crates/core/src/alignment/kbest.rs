//! k-best monotone matchings between two sequences.
//!
//! Cell `(i, j)` holds the k best matchings of the suffixes `a[i..]`,
//! `b[j..]` under the global order (score desc, edge list lexicographic asc).
//! The suffix set is the union of the sets at `(i+1, j)` and `(i, j+1)`, plus
//! `(i, j)` prepended to every matching of `(i+1, j+1)` when the tokens match.
//! Prepending a common edge preserves the order, so the top-k of the union is
//! always found among the top-k of its parts. Matchings are persistent linked
//! lists shared between cells.

use std::cmp::Ordering;
use std::rc::Rc;

use super::{group_keys, OneWayAlignment};
use crate::seq::TokenSeq;

struct Node {
    i: u32,
    j: u32,
    next: Link,
}

type Link = Option<Rc<Node>>;

#[derive(Clone)]
struct Cand {
    score: u32,
    head: Link,
}

fn lex(mut a: &Link, mut b: &Link) -> Ordering {
    loop {
        match (a, b) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) => {
                if Rc::ptr_eq(x, y) {
                    return Ordering::Equal;
                }
                match (x.i, x.j).cmp(&(y.i, y.j)) {
                    Ordering::Equal => {
                        a = &x.next;
                        b = &y.next;
                    }
                    o => return o,
                }
            }
        }
    }
}

fn order(a: &Cand, b: &Cand) -> Ordering {
    b.score.cmp(&a.score).then_with(|| lex(&a.head, &b.head))
}

fn to_alignment(c: &Cand) -> OneWayAlignment {
    let mut pairs = Vec::with_capacity(c.score as usize);
    let mut cur = &c.head;
    while let Some(node) = cur {
        pairs.push((node.i as usize, node.j as usize));
        cur = &node.next;
    }
    OneWayAlignment { pairs }
}

/// Up to `k` distinct monotone matchings, best first.
pub fn kbest_1way(y_n: &TokenSeq, y_ref: &TokenSeq, k: usize) -> Vec<OneWayAlignment> {
    let (m, r) = group_keys(std::slice::from_ref(y_n), y_ref);
    kbest_1way_keys(&m[0], &r, k)
}

/// [`kbest_1way`] over pre-computed token keys.
pub fn kbest_1way_keys(a: &[u64], b: &[u64], k: usize) -> Vec<OneWayAlignment> {
    let k = k.max(1);
    let (n, m) = (a.len(), b.len());
    let empty = vec![Cand {
        score: 0,
        head: None,
    }];
    // next = row i+1, cur = row i; each has m+1 cells
    let mut next: Vec<Vec<Cand>> = vec![empty.clone(); m + 1];
    let mut cur: Vec<Vec<Cand>> = vec![empty.clone(); m + 1];
    let mut pool: Vec<Cand> = Vec::with_capacity(3 * k);

    for i in (0..n).rev() {
        cur[m] = empty.clone();
        for j in (0..m).rev() {
            pool.clear();
            pool.extend(next[j].iter().cloned());
            pool.extend(cur[j + 1].iter().cloned());
            if a[i] == b[j] {
                pool.extend(next[j + 1].iter().map(|c| Cand {
                    score: c.score + 1,
                    head: Some(Rc::new(Node {
                        i: i as u32,
                        j: j as u32,
                        next: c.head.clone(),
                    })),
                }));
            }
            pool.sort_by(order);
            pool.dedup_by(|x, y| order(x, y) == Ordering::Equal);
            pool.truncate(k);
            cur[j] = pool.clone();
        }
        std::mem::swap(&mut next, &mut cur);
    }
    next[0].iter().map(to_alignment).collect()
}

/// Longest common subsequence length, by the textbook DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::super::test_util::seq;
    use super::*;
    use crate::rng::Rng;

    /// Every monotone matching of `a` into `b`, by brute-force recursion.
    fn all_matchings(a: &[u64], b: &[u64]) -> Vec<Vec<(usize, usize)>> {
        fn go(
            a: &[u64],
            b: &[u64],
            i0: usize,
            j0: usize,
            cur: &mut Vec<(usize, usize)>,
            out: &mut Vec<Vec<(usize, usize)>>,
        ) {
            out.push(cur.clone());
            for i in i0..a.len() {
                for j in j0..b.len() {
                    if a[i] == b[j] {
                        cur.push((i, j));
                        go(a, b, i + 1, j + 1, cur, out);
                        cur.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        go(a, b, 0, 0, &mut Vec::new(), &mut out);
        out
    }

    fn oracle_kbest(a: &[u64], b: &[u64], k: usize) -> Vec<Vec<(usize, usize)>> {
        let mut all = all_matchings(a, b);
        all.sort_by(|x, y| y.len().cmp(&x.len()).then(x.cmp(y)));
        all.truncate(k);
        all
    }

    fn keys(s: &str) -> Vec<u64> {
        s.bytes().map(u64::from).collect()
    }

    #[test]
    fn identity_has_full_score() {
        let s = seq("abc");
        let best = kbest_1way(&s, &s, 10);
        assert_eq!(best[0].pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(best[0].score(), 3);
    }

    #[test]
    fn disjoint_gives_single_empty() {
        let best = kbest_1way(&seq("abc"), &seq("xyz"), 10);
        assert_eq!(best, vec![OneWayAlignment { pairs: vec![] }]);
        let best = kbest_1way(&TokenSeq::empty(), &TokenSeq::empty(), 10);
        assert_eq!(best.len(), 1);
    }

    #[test]
    fn aba_vs_aa_matches_enumeration() {
        // Enumeration over all monotone matchings of "a b a" into "a a":
        // one of size 2, four of size 1, the empty one.
        let got: Vec<usize> = kbest_1way(&seq("aba"), &seq("aa"), 10)
            .iter()
            .map(OneWayAlignment::score)
            .collect();
        assert_eq!(got, vec![2, 1, 1, 1, 1, 0]);
        let pairs: Vec<Vec<(usize, usize)>> = kbest_1way(&seq("aba"), &seq("aa"), 10)
            .into_iter()
            .map(|a| a.pairs)
            .collect();
        assert_eq!(pairs, oracle_kbest(&keys("aba"), &keys("aa"), 10));
    }

    #[test]
    fn random_instances_match_enumeration() {
        let mut rng = Rng::new(5);
        for _ in 0..400 {
            let a: Vec<u64> = (0..rng.below(7)).map(|_| rng.below(3) as u64).collect();
            let b: Vec<u64> = (0..rng.below(7)).map(|_| rng.below(3) as u64).collect();
            let k = 1 + rng.below(12);
            let got: Vec<Vec<(usize, usize)>> =
                kbest_1way_keys(&a, &b, k).into_iter().map(|x| x.pairs).collect();
            assert_eq!(got, oracle_kbest(&a, &b, k), "a={a:?} b={b:?} k={k}");
        }
    }

    #[test]
    fn k1_is_lcs() {
        let mut rng = Rng::new(6);
        for _ in 0..500 {
            let a: Vec<u64> = (0..rng.below(20)).map(|_| rng.below(5) as u64).collect();
            let b: Vec<u64> = (0..rng.below(20)).map(|_| rng.below(5) as u64).collect();
            assert_eq!(kbest_1way_keys(&a, &b, 1)[0].score(), lcs_len(&a, &b));
        }
    }
}
