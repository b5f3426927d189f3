//! Executable form of the coverage decision problems behind the hardness of
//! joint alignment.
//!
//! (A) set cover: can `K` subsets from a family `C_0` cover the universe `X`?
//! (B) can one subset per slot, chosen from slot-specific families `C_k`,
//! cover at least `p` elements? (A) is the special case of (B) where every
//! slot offers the whole family and `p = |X|`.

use super::AlignError;

/// Largest number of selections enumerated by default.
pub const DEFAULT_COVER_BUDGET: u128 = 10_000_000;

/// Instance of (B). `choices[k]` lists indices into `subsets`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverInstance {
    pub universe_size: usize,
    pub subsets: Vec<Vec<usize>>,
    pub choices: Vec<Vec<usize>>,
    pub p: usize,
}

impl CoverInstance {
    /// (A) → (B): `k` slots, each offering every subset, and `p = |X|`.
    pub fn from_set_cover(universe_size: usize, family: Vec<Vec<usize>>, k: usize) -> Self {
        let all: Vec<usize> = (0..family.len()).collect();
        CoverInstance {
            universe_size,
            subsets: family,
            choices: vec![all; k],
            p: universe_size,
        }
    }

    pub fn decide(&self) -> Result<bool, AlignError> {
        set_cover_decision(self.universe_size, &self.subsets, &self.choices, self.p)
    }
}

/// True iff some selection of one subset per slot covers at least `p`
/// elements of `0..universe_size`. Exhaustive.
pub fn set_cover_decision(
    universe_size: usize,
    subsets: &[Vec<usize>],
    choices: &[Vec<usize>],
    p: usize,
) -> Result<bool, AlignError> {
    decide_with_budget(universe_size, subsets, choices, p, DEFAULT_COVER_BUDGET)
}

pub(crate) fn decide_with_budget(
    universe_size: usize,
    subsets: &[Vec<usize>],
    choices: &[Vec<usize>],
    p: usize,
    budget: u128,
) -> Result<bool, AlignError> {
    if p == 0 {
        return Ok(true);
    }
    for s in subsets {
        if let Some(&x) = s.iter().find(|&&x| x >= universe_size) {
            return Err(AlignError::Invalid(format!(
                "element {x} outside a universe of size {universe_size}"
            )));
        }
    }
    for c in choices {
        if let Some(&i) = c.iter().find(|&&i| i >= subsets.len()) {
            return Err(AlignError::Invalid(format!("no subset with index {i}")));
        }
    }
    let needed = choices
        .iter()
        .try_fold(1u128, |acc, c| acc.checked_mul(c.len() as u128))
        .unwrap_or(u128::MAX);
    if needed > budget {
        return Err(AlignError::BudgetExceeded { needed, budget });
    }
    if choices.iter().any(Vec::is_empty) {
        return Ok(false);
    }
    let words = universe_size.div_ceil(64).max(1);
    let bits: Vec<Vec<u64>> = subsets
        .iter()
        .map(|s| {
            let mut b = vec![0u64; words];
            for &x in s {
                b[x / 64] |= 1 << (x % 64);
            }
            b
        })
        .collect();
    fn go(k: usize, cov: &[u64], choices: &[Vec<usize>], bits: &[Vec<u64>], p: usize) -> bool {
        if k == choices.len() {
            return cov.iter().map(|w| w.count_ones() as usize).sum::<usize>() >= p;
        }
        choices[k].iter().any(|&i| {
            let next: Vec<u64> = cov.iter().zip(&bits[i]).map(|(a, b)| a | b).collect();
            go(k + 1, &next, choices, bits, p)
        })
    }
    Ok(go(0, &vec![0u64; words], choices, &bits, p))
}
