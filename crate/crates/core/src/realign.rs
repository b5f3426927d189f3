//! Placeholder realignment by continuous relaxation.
//!
//! The per-gap placeholder counts `P` of N sequences are relaxed to reals in
//! `[0, K_max]` and moved by projected subgradient descent on
//!
//! ```text
//! L = L_L + L_A + L_int
//! L_L   = Σ (P − μ̂)² / (2σ̂²)                  stay close to the model
//! L_A   = Σ_{n,i} d_{n,i}                      pull identical tokens together
//! L_int = μ_t Σ sin²(πP)                       push towards integers
//! ```
//!
//! Positions are framed: index 0 is `<BOS>` and the last is `<EOS>`; gap `g`
//! sits between tokens `g` and `g + 1`. `X_{n,i} = i + Σ_{g<i} P_{n,g}`.
//! `d_{n,i}` is the distance to the nearest identical token of another
//! sequence closer than `D_max`, or 0 when there is none.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seq::{KeyInterner, TokenSeq};
use crate::K_MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RealignError {
    #[error("logits shape {got:?} does not fit {expected:?} (sequences × gaps × classes)")]
    Shape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("mask of sequence {n} disagrees with its length at gap {gap}")]
    Mask { n: usize, gap: usize },
    #[error("gap ({n}, {gap}) is not a normalized log-distribution (log-sum-exp {lse})")]
    NotNormalized { n: usize, gap: usize, lse: f64 },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Log-probabilities over placeholder counts, `n × gaps × classes`, row-major.
/// `mask[n * gaps + g]` is true for real gaps and false for padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PlhLogits {
    pub n: usize,
    pub gaps: usize,
    pub classes: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl PlhLogits {
    /// Validates shape and normalization of unmasked rows.
    pub fn new(n: usize, gaps: usize, classes: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self, RealignError> {
        let l = PlhLogits {
            n,
            gaps,
            classes,
            values,
            mask,
        };
        if classes == 0 || l.values.len() != n * gaps * classes || l.mask.len() != n * gaps {
            return Err(RealignError::Shape {
                expected: (n, gaps, classes),
                got: (l.mask.len() / gaps.max(1), gaps, l.values.len() / (n * gaps).max(1)),
            });
        }
        for s in 0..n {
            for g in 0..gaps {
                if l.is_real(s, g) {
                    let lse = log_sum_exp(l.row(s, g));
                    if !(lse.abs() <= 1e-4) {
                        return Err(RealignError::NotNormalized { n: s, gap: g, lse });
                    }
                }
            }
        }
        Ok(l)
    }

    /// Log-softmax of arbitrary scores per row.
    pub fn from_scores(n: usize, gaps: usize, classes: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self, RealignError> {
        if classes > 0 && values.len() == n * gaps * classes {
            for row in values.chunks_mut(classes) {
                let lse = log_sum_exp(row);
                row.iter_mut().for_each(|v| *v -= lse);
            }
        }
        Self::new(n, gaps, classes, values, mask)
    }

    /// Mask for sequences of the given framed lengths: gap `g` of sequence
    /// `s` is real iff `g + 1 < len_s`.
    pub fn mask_for(framed_lens: &[usize], gaps: usize) -> Vec<bool> {
        framed_lens
            .iter()
            .flat_map(|&len| (0..gaps).map(move |g| g + 1 < len))
            .collect()
    }

    pub fn row(&self, n: usize, g: usize) -> &[f64] {
        let at = (n * self.gaps + g) * self.classes;
        &self.values[at..at + self.classes]
    }

    pub fn row_mut(&mut self, n: usize, g: usize) -> &mut [f64] {
        let at = (n * self.gaps + g) * self.classes;
        &mut self.values[at..at + self.classes]
    }

    pub fn is_real(&self, n: usize, g: usize) -> bool {
        self.mask[n * self.gaps + g]
    }

    /// Most likely count; ties go to the smaller count.
    pub fn argmax(&self, n: usize, g: usize) -> usize {
        let row = self.row(n, g);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best
    }

    /// Mean and raw variance of the count distribution of one gap.
    pub fn moments(&self, n: usize, g: usize) -> (f64, f64) {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (k, &lp) in self.row(n, g).iter().enumerate() {
            let p = lp.exp();
            m1 += k as f64 * p;
            m2 += (k * k) as f64 * p;
        }
        (m1, (m2 - m1 * m1).max(0.0))
    }

    pub fn argmax_plan(&self) -> Plan {
        let mut p = Plan::zeros(self.n, self.gaps);
        for s in 0..self.n {
            for g in 0..self.gaps {
                if self.is_real(s, g) {
                    p.set(s, g, self.argmax(s, g) as f64);
                }
            }
        }
        p
    }
}

/// Placeholder counts, `n × gaps`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub n: usize,
    pub gaps: usize,
    pub values: Vec<f64>,
}

impl Plan {
    pub fn zeros(n: usize, gaps: usize) -> Self {
        Plan {
            n,
            gaps,
            values: vec![0.0; n * gaps],
        }
    }

    pub fn from_rows<T: Into<f64> + Copy>(rows: &[Vec<T>]) -> Self {
        let gaps = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == gaps), "ragged plan rows");
        Plan {
            n: rows.len(),
            gaps,
            values: rows.iter().flatten().map(|&v| v.into()).collect(),
        }
    }

    pub fn get(&self, n: usize, g: usize) -> f64 {
        self.values[n * self.gaps + g]
    }

    pub fn set(&mut self, n: usize, g: usize, v: f64) {
        self.values[n * self.gaps + g] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.gaps.max(1)).map(<[f64]>::to_vec).take(self.n).collect()
    }

    /// Round half-up to integer counts.
    pub fn rounded(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|s| (0..self.gaps).map(|g| (self.get(s, g) + 0.5).floor().max(0.0) as usize).collect())
            .collect()
    }

    /// Σ |self − other| over all entries.
    pub fn l1(&self, other: &Plan) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealignConfig {
    pub d_max: f64,
    pub steps: usize,
    pub step_size: f64,
    pub t0: usize,
    pub t_final: usize,
    pub mu_final: f64,
    pub var_min: f64,
    pub var_max: f64,
    pub k_max: usize,
}

impl Default for RealignConfig {
    fn default() -> Self {
        RealignConfig {
            d_max: 4.0,
            steps: 100,
            // larger steps make the L1-type alignment gradients oscillate
            step_size: 0.01,
            t0: 30,
            t_final: 80,
            mu_final: 1.0,
            var_min: 0.25,
            var_max: 4.0,
            k_max: K_MAX,
        }
    }
}

impl RealignConfig {
    pub fn validate(&self) -> Result<(), RealignError> {
        let bad = |m: &str| Err(RealignError::Config(m.into()));
        if !(self.d_max > 0.0) {
            return bad("d_max must be positive");
        }
        if !(self.t0 < self.t_final && self.t_final <= self.steps) {
            return bad("need t0 < T <= steps");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !(self.mu_final >= 0.0) {
            return bad("mu_T must be non-negative");
        }
        if !(0.0 < self.var_min && self.var_min <= self.var_max) {
            return bad("need 0 < var_min <= var_max");
        }
        Ok(())
    }

    /// Scale of the integer loss at step `t`.
    pub fn mu_at(&self, t: usize) -> f64 {
        if t < self.t0 {
            0.0
        } else if t > self.t_final {
            self.mu_final
        } else {
            let a = (t - self.t0) as f64;
            let b = (self.t_final - self.t0) as f64;
            self.mu_final * a * a / (b * b)
        }
    }
}

/// `X_{n,i} = i + Σ_{g<i} P_{n,g}` for `i < framed_lens[n]`.
pub fn positions(plan: &Plan, framed_lens: &[usize]) -> Vec<Vec<f64>> {
    framed_lens
        .iter()
        .enumerate()
        .map(|(n, &len)| {
            let mut acc = 0.0;
            (0..len)
                .map(|i| {
                    let x = i as f64 + acc;
                    if i < plan.gaps {
                        acc += plan.get(n, i);
                    }
                    x
                })
                .collect()
        })
        .collect()
}

/// Framed token keys: sentinels keep their ids, content uses
/// [`KeyInterner`] so that `<UNK>`s compare by surface.
pub fn framed_keys(seqs: &[TokenSeq]) -> Vec<Vec<u64>> {
    let mut keys = KeyInterner::new();
    seqs.iter()
        .map(|s| {
            let mut k = Vec::with_capacity(s.framed_len());
            k.push(s.ids()[0] as u64);
            k.extend(keys.keys(s));
            k.push(s.ids()[s.framed_len() - 1] as u64);
            k
        })
        .collect()
}

/// Connected tokens: for each `(n, i)`, the `(m, j)` with the same token,
/// `m ≠ n` and `|X_{n,i} − X_{m,j}| < D_max`, ascending.
pub type Graph = Vec<Vec<Vec<(usize, usize)>>>;

pub fn build_graph(keys: &[Vec<u64>], x: &[Vec<f64>], d_max: f64) -> Graph {
    let groups = key_groups(keys);
    let mut g: Graph = keys.iter().map(|k| vec![Vec::new(); k.len()]).collect();
    for members in groups.values() {
        for &(n, i) in members {
            for &(m, j) in members {
                if m != n && (x[n][i] - x[m][j]).abs() < d_max {
                    g[n][i].push((m, j));
                }
            }
        }
    }
    g
}

fn key_groups(keys: &[Vec<u64>]) -> std::collections::BTreeMap<u64, Vec<(usize, usize)>> {
    let mut groups: std::collections::BTreeMap<u64, Vec<(usize, usize)>> = Default::default();
    for (n, k) in keys.iter().enumerate() {
        for (i, &key) in k.iter().enumerate() {
            groups.entry(key).or_default().push((n, i));
        }
    }
    // members are pushed in (n, i) order, so each list is ascending
    groups.retain(|_, v| v.iter().any(|&(n, _)| n != v[0].0));
    groups
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub l_l: f64,
    pub l_a: f64,
    pub l_int: f64,
    pub total: f64,
}

/// Gradients of each loss term, same layout as [`Plan::values`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub l_l: Vec<f64>,
    pub l_a: Vec<f64>,
    pub l_int: Vec<f64>,
}

/// One realignment instance with its precomputed statistics.
pub struct Problem<'a> {
    logits: &'a PlhLogits,
    config: &'a RealignConfig,
    lens: Vec<usize>,
    groups: Vec<Vec<(usize, usize)>>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(logits: &'a PlhLogits, seqs: &[TokenSeq], config: &'a RealignConfig) -> Result<Self, RealignError> {
        config.validate()?;
        let lens: Vec<usize> = seqs.iter().map(TokenSeq::framed_len).collect();
        let need_gaps = lens.iter().map(|&l| l - 1).max().unwrap_or(0);
        if logits.n != seqs.len() || logits.gaps < need_gaps {
            return Err(RealignError::Shape {
                expected: (seqs.len(), need_gaps, logits.classes),
                got: (logits.n, logits.gaps, logits.classes),
            });
        }
        for (n, &len) in lens.iter().enumerate() {
            for g in 0..logits.gaps {
                if logits.is_real(n, g) != (g + 1 < len) {
                    return Err(RealignError::Mask { n, gap: g });
                }
            }
        }
        let keys = framed_keys(seqs);
        let groups = key_groups(&keys).into_values().collect();
        let mut mu = vec![0.0; logits.n * logits.gaps];
        let mut var = vec![1.0; logits.n * logits.gaps];
        for n in 0..logits.n {
            for g in 0..logits.gaps {
                if logits.is_real(n, g) {
                    let (m, v) = logits.moments(n, g);
                    mu[n * logits.gaps + g] = m;
                    var[n * logits.gaps + g] = v.clamp(config.var_min, config.var_max);
                }
            }
        }
        Ok(Problem {
            logits,
            config,
            lens,
            groups,
            mu,
            var,
        })
    }

    pub fn mu_hat(&self) -> &[f64] {
        &self.mu
    }

    pub fn var_hat(&self) -> &[f64] {
        &self.var
    }

    fn k_cap(&self) -> f64 {
        self.config.k_max.min(self.logits.classes - 1) as f64
    }

    /// For each token with at least one connected partner: the nearest one
    /// (ties go to the lowest `(m, j)`).
    fn nearest(&self, x: &[Vec<f64>]) -> Vec<((usize, usize), (usize, usize), f64)> {
        let mut out = Vec::new();
        for members in &self.groups {
            for &(n, i) in members {
                let mut best: Option<((usize, usize), f64)> = None;
                for &(m, j) in members {
                    if m == n {
                        continue;
                    }
                    let d = (x[n][i] - x[m][j]).abs();
                    if d < self.config.d_max && best.is_none_or(|(_, b)| d < b) {
                        best = Some(((m, j), d));
                    }
                }
                if let Some((mj, d)) = best {
                    out.push(((n, i), mj, d));
                }
            }
        }
        out
    }

    pub fn losses(&self, plan: &Plan, t: usize) -> Losses {
        let (l, _) = self.eval(plan, t, false);
        l
    }

    pub fn losses_and_grads(&self, plan: &Plan, t: usize) -> (Losses, Grads) {
        let (l, g) = self.eval(plan, t, true);
        (l, g.expect("requested"))
    }

    fn eval(&self, plan: &Plan, t: usize, want_grad: bool) -> (Losses, Option<Grads>) {
        let gaps = self.logits.gaps;
        let size = self.logits.n * gaps;
        let mut grads = want_grad.then(|| Grads {
            l_l: vec![0.0; size],
            l_a: vec![0.0; size],
            l_int: vec![0.0; size],
        });
        let mu_t = self.config.mu_at(t);
        let (mut l_l, mut l_int) = (0.0, 0.0);
        for idx in 0..size {
            if !self.logits.mask[idx] {
                continue;
            }
            let p = plan.values[idx];
            let diff = p - self.mu[idx];
            l_l += diff * diff / (2.0 * self.var[idx]);
            let s = (std::f64::consts::PI * p).sin();
            l_int += mu_t * s * s;
            if let Some(g) = grads.as_mut() {
                g.l_l[idx] = diff / self.var[idx];
                g.l_int[idx] = mu_t * std::f64::consts::PI * (2.0 * std::f64::consts::PI * p).sin();
            }
        }

        let x = positions(plan, &self.lens);
        let mut l_a = 0.0;
        // coefficient on X_{n,i}, turned into gap gradients by suffix sums
        let mut coef: Vec<Vec<f64>> = self.lens.iter().map(|&l| vec![0.0; l]).collect();
        for ((n, i), (m, j), d) in self.nearest(&x) {
            l_a += d;
            let s = (x[n][i] - x[m][j]).signum() * if d == 0.0 { 0.0 } else { 1.0 };
            coef[n][i] += s;
            coef[m][j] -= s;
        }
        if let Some(g) = grads.as_mut() {
            for (n, c) in coef.iter().enumerate() {
                let mut acc = 0.0;
                for i in (1..c.len()).rev() {
                    acc += c[i];
                    // X_{n,i} depends on gaps 0..i
                    g.l_a[n * gaps + i - 1] = acc;
                }
            }
        }
        let losses = Losses {
            l_l,
            l_a,
            l_int,
            total: l_l + l_a + l_int,
        };
        (losses, grads)
    }

    /// Smallest distance of `plan` to a point where `L_A` is not smooth: a
    /// connected pair at distance 0, a pair at distance `D_max`, or a tie in
    /// a nearest-partner choice. Finite differences are meaningful only well
    /// away from those. Pairs of `<BOS>` tokens sit at 0 whatever the plan
    /// and are skipped.
    pub fn kink_margin(&self, plan: &Plan) -> f64 {
        let x = positions(plan, &self.lens);
        let mut margin = f64::INFINITY;
        for members in &self.groups {
            for &(n, i) in members {
                let mut ds: Vec<f64> = members
                    .iter()
                    .filter(|&&(m, j)| m != n && (i, j) != (0, 0))
                    .map(|&(m, j)| (x[n][i] - x[m][j]).abs())
                    .collect();
                for &d in &ds {
                    margin = margin.min(d).min((d - self.config.d_max).abs());
                }
                ds.retain(|&d| d < self.config.d_max);
                ds.sort_by(f64::total_cmp);
                if ds.len() >= 2 {
                    margin = margin.min(ds[1] - ds[0]);
                }
            }
        }
        margin
    }

    fn project(&self, plan: &mut Plan) {
        let cap = self.k_cap();
        for (v, &real) in plan.values.iter_mut().zip(&self.logits.mask) {
            *v = if real { v.clamp(0.0, cap) } else { 0.0 };
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealignOutput {
    /// Integer counts per sequence and gap; padding gaps are 0.
    pub plan: Vec<Vec<usize>>,
    /// `Σ |P_out − P_argmax|`.
    pub changes: usize,
    /// Total loss of the argmax plan, evaluated at the last step.
    pub loss_before: f64,
    /// Total loss of the returned plan, evaluated at the last step.
    pub loss_after: f64,
    /// True when the rounded descent result scored worse than the argmax
    /// plan and the argmax plan was returned instead.
    pub kept_argmax: bool,
}

pub fn realign(logits: &PlhLogits, seqs: &[TokenSeq], config: &RealignConfig) -> Result<RealignOutput, RealignError> {
    let problem = Problem::new(logits, seqs, config)?;
    let start = logits.argmax_plan();
    let mut p = start.clone();
    problem.project(&mut p);
    for t in 0..config.steps {
        let (l, g) = problem.losses_and_grads(&p, t);
        if !l.total.is_finite() {
            return Err(RealignError::NonFinite { step: t });
        }
        for (idx, v) in p.values.iter_mut().enumerate() {
            *v -= config.step_size * (g.l_l[idx] + g.l_a[idx] + g.l_int[idx]);
        }
        problem.project(&mut p);
    }
    let rounded = p.rounded();
    let mut out = Plan::zeros(logits.n, logits.gaps);
    for (n, row) in rounded.iter().enumerate() {
        for (g, &v) in row.iter().enumerate() {
            out.set(n, g, v as f64);
        }
    }
    let loss_before = problem.losses(&start, config.steps).total;
    let loss_after = problem.losses(&out, config.steps).total;
    if !loss_after.is_finite() || !loss_before.is_finite() {
        return Err(RealignError::NonFinite { step: config.steps });
    }
    if loss_after > loss_before {
        return Ok(RealignOutput {
            plan: start.rounded(),
            changes: 0,
            loss_before,
            loss_after: loss_before,
            kept_argmax: true,
        });
    }
    Ok(RealignOutput {
        changes: out.l1(&start).round() as usize,
        plan: rounded,
        loss_before,
        loss_after,
        kept_argmax: false,
    })
}

/// Independent instances in parallel; output order follows input order.
pub fn realign_batch(
    items: &[(PlhLogits, Vec<TokenSeq>)],
    config: &RealignConfig,
) -> Vec<Result<RealignOutput, RealignError>> {
    items.par_iter().map(|(l, s)| realign(l, s, config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::from_content(&s.bytes().map(u32::from).collect::<Vec<_>>()).unwrap()
    }

    /// Logits peaked at `plan[n][g]` with probability `peak`, the remaining
    /// mass split between the two neighbours.
    fn peaked(plan: &[Vec<usize>], lens: &[usize], classes: usize, peak: f64) -> PlhLogits {
        let gaps = plan[0].len();
        let mut values = Vec::new();
        for (n, row) in plan.iter().enumerate() {
            for (g, &a) in row.iter().enumerate() {
                let mut p = vec![1e-6; classes];
                if g + 1 < lens[n] {
                    p[a] = peak;
                    let side = (1.0 - peak) / 2.0;
                    if a > 0 {
                        p[a - 1] += side;
                    }
                    p[a + 1] += side;
                }
                values.extend(p.iter().map(|v| v.ln()));
            }
        }
        PlhLogits::from_scores(plan.len(), gaps, classes, values, PlhLogits::mask_for(lens, gaps)).unwrap()
    }

    #[test]
    fn positions_follow_prefix_sums() {
        let p = Plan::zeros(2, 3);
        assert_eq!(positions(&p, &[4, 3]), vec![vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0]]);
        let mut p = Plan::zeros(1, 3);
        p.set(0, 0, 2.0);
        assert_eq!(positions(&p, &[4]), vec![vec![0.0, 3.0, 4.0, 5.0]]);
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let len = 1 + rng.below(8);
            let mut p = Plan::zeros(1, len - 1);
            for g in 0..len - 1 {
                p.set(0, g, rng.uniform(0.0, 5.0));
            }
            let x = positions(&p, &[len]);
            for i in 0..len {
                let direct: f64 = i as f64 + (0..i).map(|g| p.get(0, g)).sum::<f64>();
                assert!((x[0][i] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_matches_triple_loop() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let keys: Vec<Vec<u64>> = (0..3)
                .map(|_| (0..2 + rng.below(6)).map(|_| rng.below(3) as u64).collect())
                .collect();
            let x: Vec<Vec<f64>> = keys
                .iter()
                .map(|k| k.iter().map(|_| rng.uniform(0.0, 8.0)).collect())
                .collect();
            let g = build_graph(&keys, &x, 2.0);
            for n in 0..3 {
                for i in 0..keys[n].len() {
                    let mut want = Vec::new();
                    for m in 0..3 {
                        for j in 0..keys[m].len() {
                            if keys[n][i] == keys[m][j] && n != m && (x[n][i] - x[m][j]).abs() < 2.0 {
                                want.push((m, j));
                            }
                        }
                    }
                    assert_eq!(g[n][i], want);
                }
            }
        }
    }

    #[test]
    fn identical_sequences_connect_on_the_diagonal() {
        let s = [seq("ab"), seq("ab")];
        let x = positions(&Plan::zeros(2, 3), &[4, 4]);
        let g = build_graph(&framed_keys(&s), &x, 4.0);
        assert_eq!(g[0][1], vec![(1, 1)]);
        assert_eq!(g[1][3], vec![(0, 3)]);
    }

    #[test]
    fn losses_vanish_at_the_mean_without_edges() {
        let s = [seq("ab"), seq("xy")];
        let lens = [4, 4];
        let logits = peaked(&[vec![1, 1, 1], vec![2, 2, 2]], &lens, 6, 0.5);
        let cfg = RealignConfig::default();
        let pr = Problem::new(&logits, &s, &cfg).unwrap();
        // sentinels still connect, so use positions where they coincide
        let mut p = Plan::zeros(2, 3);
        p.values.copy_from_slice(pr.mu_hat());
        let l = pr.losses(&p, 0);
        assert!(l.l_l.abs() < 1e-12);
        // integer plans have no integer loss
        let int_plan = Plan::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.0, 1.0]]);
        assert!(pr.losses(&int_plan, cfg.steps).l_int.abs() < 1e-20);
    }

    #[test]
    fn hand_sized_losses() {
        // "<a>" and "<a>" with P = [[0.5, 0], [0, 0]] (one real gap each side).
        let s = [seq("a"), seq("a")];
        let lens = [3, 3];
        let logits = peaked(&[vec![0, 0], vec![0, 0]], &lens, 3, 0.5);
        let cfg = RealignConfig::default();
        let pr = Problem::new(&logits, &s, &cfg).unwrap();
        let p = Plan::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]]);
        let l = pr.losses(&p, cfg.steps);
        // X0 = [0, 1.5, 2.5], X1 = [0, 1, 2]: BOS pair 0, a pair 0.5 twice,
        // EOS pair 0.5 twice.
        assert!((l.l_a - 2.0).abs() < 1e-12);
        assert!((l.l_int - 1.0).abs() < 1e-12);
        let mu = pr.mu_hat();
        let var = pr.var_hat();
        let want_ll: f64 = (0..4)
            .filter(|&k| logits.mask[k])
            .map(|k| (p.values[k] - mu[k]).powi(2) / (2.0 * var[k]))
            .sum();
        assert!((l.l_l - want_ll).abs() < 1e-12);
    }

    #[test]
    fn schedule() {
        let c = RealignConfig::default();
        assert_eq!(c.mu_at(0), 0.0);
        assert_eq!(c.mu_at(29), 0.0);
        assert_eq!(c.mu_at(30), 0.0);
        assert!((c.mu_at(55) - 0.25).abs() < 1e-12);
        assert_eq!(c.mu_at(80), 1.0);
        assert_eq!(c.mu_at(99), 1.0);
    }

    #[test]
    fn consistent_alignment_is_a_fixed_point() {
        let s = [seq("abc"), seq("abc")];
        let lens = [5, 5];
        let logits = peaked(&[vec![0, 1, 0, 0], vec![0, 1, 0, 0]], &lens, 4, 0.6);
        let out = realign(&logits, &s, &RealignConfig::default()).unwrap();
        assert_eq!(out.plan, vec![vec![0, 1, 0, 0], vec![0, 1, 0, 0]]);
        assert_eq!(out.changes, 0);
    }

    #[test]
    fn without_alignment_terms_converges_to_the_mean() {
        let s = [seq("ab"), seq("xy")];
        let lens = [4, 4];
        let logits = peaked(&[vec![1, 2, 0], vec![3, 0, 1]], &lens, 6, 0.4);
        let cfg = RealignConfig {
            mu_final: 0.0,
            d_max: 1e-9,
            steps: 400,
            t0: 0,
            t_final: 1,
            step_size: 0.1,
            ..RealignConfig::default()
        };
        let pr = Problem::new(&logits, &s, &cfg).unwrap();
        let mut p = logits.argmax_plan();
        for t in 0..cfg.steps {
            let (_, g) = pr.losses_and_grads(&p, t);
            for (v, d) in p.values.iter_mut().zip(&g.l_l) {
                *v -= cfg.step_size * d;
            }
            pr.project(&mut p);
        }
        for (v, m) in p.values.iter().zip(pr.mu_hat()) {
            assert!((v - m.clamp(0.0, 5.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = [seq("ab")];
        let bad = PlhLogits::new(1, 3, 2, vec![0.0; 6], vec![true; 3]);
        assert!(matches!(bad, Err(RealignError::NotNormalized { .. })));
        let l = PlhLogits::from_scores(1, 2, 2, vec![0.0; 4], vec![true, true]).unwrap();
        assert!(matches!(
            realign(&l, &s, &RealignConfig::default()),
            Err(RealignError::Shape { .. })
        ));
        let cfg = RealignConfig {
            t0: 90,
            ..RealignConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(RealignError::Config(_))));
    }

    /// `<ABC>`, `<BC>`, `<ADCD>` with the argmax counts of the worked
    /// example. The model is confident (0.8) everywhere except on three gaps
    /// where it hesitates between two counts (0.6 / 0.4).
    fn worked_example() -> (PlhLogits, [TokenSeq; 3]) {
        let argmax = [vec![0usize, 0, 0, 2, 0], vec![0, 0, 1, 0, 0], vec![0, 1, 0, 0, 0]];
        let lens = [5, 4, 6];
        let classes = 6;
        let mut values = Vec::new();
        for (n, row) in argmax.iter().enumerate() {
            for (g, &a) in row.iter().enumerate() {
                let mut p = vec![1e-4f64; classes];
                match (n, g) {
                    (0, 3) => (p[2], p[1]) = (0.6, 0.4),
                    (1, 0) => (p[0], p[1]) = (0.6, 0.4),
                    (2, 1) => (p[1], p[0]) = (0.6, 0.4),
                    _ => {
                        p[a] = 0.8;
                        p[a + 1] += 0.1;
                        p[a.saturating_sub(1)] += 0.1;
                    }
                }
                values.extend(p.iter().map(|v| v.ln()));
            }
        }
        let logits = PlhLogits::from_scores(3, 5, classes, values, PlhLogits::mask_for(&lens, 5)).unwrap();
        (logits, [seq("ABC"), seq("BC"), seq("ADCD")])
    }

    #[test]
    fn worked_example_reaches_the_three_change_plan() {
        let (logits, seqs) = worked_example();
        let cfg = RealignConfig::default();
        let argmax = logits.argmax_plan();
        assert_eq!(argmax.rounded(), vec![vec![0, 0, 0, 2, 0], vec![0, 0, 1, 0, 0], vec![0, 1, 0, 0, 0]]);
        let pr = Problem::new(&logits, &seqs, &cfg).unwrap();
        assert_eq!(pr.losses(&argmax, cfg.steps).l_a, 7.0);
        let out = realign(&logits, &seqs, &cfg).unwrap();
        assert_eq!(out.plan, vec![vec![0, 0, 0, 1, 0], vec![1, 0, 1, 0, 0], vec![0, 0, 0, 0, 0]]);
        assert_eq!(out.changes, 3);
        assert!(out.loss_after < out.loss_before);
        let x = positions(&Plan::from_rows(&out.plan.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect::<Vec<Vec<f64>>>()), &[5, 4, 6]);
        // the three C tokens share a column
        assert_eq!((x[0][3], x[1][2], x[2][3]), (3.0, 3.0, 3.0));
    }

    #[test]
    fn batch_preserves_order() {
        let s = vec![seq("ab"), seq("ab")];
        let l = peaked(&[vec![0, 0, 0], vec![0, 0, 0]], &[4, 4], 3, 0.6);
        let items = vec![(l.clone(), s.clone()), (l, s)];
        let out = realign_batch(&items, &RealignConfig::default());
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], out[1]);
    }
}
