//! Reference policies: the expert oracle, a noised expert and two stubs.

use std::sync::Arc;

use super::{Ctx, Pass, Policy, TokenChoice};
use crate::alignment::{nway_align, DEFAULT_K};
use crate::edits::{derive_edits_with, lcs_keep_mask, placement_counts, EditScript};
use crate::realign::PlhLogits;
use crate::rng::Rng;
use crate::seq::{TokenId, TokenSeq, RESERVED, UNK};
use crate::K_MAX;

/// Logit of every non-target class before normalization.
const OFF: f64 = -20.0;

/// Normalized logits putting almost all mass on `counts[n][g]`.
pub(crate) fn peaked_logits(seqs: &[TokenSeq], counts: &[Vec<usize>], k_max: usize) -> PlhLogits {
    let gaps = seqs.iter().map(|s| s.len() + 1).max().unwrap_or(1);
    let classes = k_max + 1;
    let mut values = vec![OFF; seqs.len() * gaps * classes];
    for (n, row) in counts.iter().enumerate() {
        for g in 0..gaps {
            let c = row.get(g).copied().unwrap_or(0).min(k_max);
            values[(n * gaps + g) * classes + c] = 0.0;
        }
    }
    let lens: Vec<usize> = seqs.iter().map(TokenSeq::framed_len).collect();
    PlhLogits::from_scores(seqs.len(), gaps, classes, values, PlhLogits::mask_for(&lens, gaps))
        .expect("peaked logits are well formed")
}

fn certain(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
}

fn ref_choice(y_ref: &TokenSeq, pos: usize) -> TokenChoice {
    if pos < y_ref.len() {
        TokenChoice {
            id: y_ref.get(pos),
            surface: y_ref.surface(pos).map(Arc::from),
            logprob: 0.0,
        }
    } else {
        TokenChoice::new(UNK, 0.0)
    }
}

/// The oracle. On the states of its own edit script it returns the script's
/// decisions, so the first pass reproduces `y_ref` with maximal copying.
/// Elsewhere it falls back to reference-driven rules: keep the LCS with the
/// reference, spread tokens over the reference length, keep tokens sitting
/// on their reference position, fill placeholders from the reference.
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    matches: Vec<TokenSeq>,
    y_ref: TokenSeq,
    k_max: usize,
    script: Option<EditScript>,
}

impl ExpertPolicy {
    pub fn new(matches: &[TokenSeq], y_ref: &TokenSeq) -> Self {
        Self::with_params(matches, y_ref, DEFAULT_K, K_MAX)
    }

    pub fn with_params(matches: &[TokenSeq], y_ref: &TokenSeq, k: usize, k_max: usize) -> Self {
        let graph = nway_align(matches, y_ref, k);
        ExpertPolicy {
            matches: matches.to_vec(),
            y_ref: y_ref.clone(),
            k_max,
            script: derive_edits_with(&graph, matches, y_ref, k_max).ok(),
        }
    }

    /// The edit script, absent when some alignment gap exceeds `K_max`.
    pub fn script(&self) -> Option<&EditScript> {
        self.script.as_ref()
    }

    pub fn y_ref(&self) -> &TokenSeq {
        &self.y_ref
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    fn counts(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> Vec<Vec<usize>> {
        if let (Pass::First, Some(s)) = (ctx.pass, &self.script) {
            if seqs == s.y_del.as_slice() {
                return s.plh_counts.clone();
            }
        }
        let r = self.y_ref.len();
        let target = match ctx.pass {
            Pass::First => seqs.iter().map(TokenSeq::len).max().unwrap_or(0).max(r),
            Pass::Refine(_) => 0,
        };
        seqs.iter()
            .map(|s| {
                let t = target.max(r).max(s.len());
                placement_counts(s, &self.y_ref, t)
                    .into_iter()
                    .map(|c| c.min(self.k_max))
                    .collect()
            })
            .collect()
    }
}

impl Policy for ExpertPolicy {
    fn delete(&self, ctx: &Ctx, seq: &TokenSeq, n: Option<usize>) -> Vec<f64> {
        if let (Pass::First, Some(n), Some(s)) = (ctx.pass, n, &self.script) {
            if self.matches.get(n) == Some(seq) {
                return certain(&s.del_masks[n]);
            }
        }
        certain(&lcs_keep_mask(seq, &self.y_ref))
    }

    fn insert(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> PlhLogits {
        peaked_logits(seqs, &self.counts(ctx, seqs), self.k_max)
    }

    fn combine(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> Vec<Vec<f64>> {
        if let (Pass::First, Some(s)) = (ctx.pass, &self.script) {
            if seqs == s.y_plh.as_slice() {
                return s.cmb_keep.iter().map(|m| certain(m)).collect();
            }
        }
        seqs.iter()
            .map(|s| {
                (0..s.len())
                    .map(|p| {
                        let hit = !s.is_plh(p) && p < self.y_ref.len() && s.same_token(p, &self.y_ref, p);
                        if hit {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn predict(&self, _ctx: &Ctx, seq: &TokenSeq) -> Vec<Vec<TokenChoice>> {
        (0..seq.len())
            .filter(|&p| seq.is_plh(p))
            .map(|p| vec![ref_choice(&self.y_ref, p)])
            .collect()
    }
}

/// The expert with each decision corrupted independently with probability
/// `p`: keep/delete and combination decisions flip, refinement insertion
/// counts move by one, predicted tokens become uniform vocabulary draws.
/// First-pass insertion is left exact so the matches still combine.
#[derive(Clone, Debug)]
pub struct NoisyExpert {
    pub expert: ExpertPolicy,
    pub p: f64,
    pub seed: u64,
    pub vocab_size: usize,
}

impl NoisyExpert {
    pub fn new(expert: ExpertPolicy, p: f64, seed: u64, vocab_size: usize) -> Self {
        NoisyExpert {
            expert,
            p,
            seed,
            vocab_size,
        }
    }

    fn rng(&self, ctx: &Ctx, stage: u64, n: usize) -> Rng {
        let iter = match ctx.pass {
            Pass::First => 0,
            Pass::Refine(t) => t as u64,
        };
        let index = (stage << 56) ^ (iter << 40) ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Rng::derive(self.seed, index)
    }

    fn random_token(&self, rng: &mut Rng) -> TokenId {
        if self.vocab_size > RESERVED {
            rng.between(RESERVED, self.vocab_size - 1) as TokenId
        } else {
            UNK
        }
    }
}

impl Policy for NoisyExpert {
    fn delete(&self, ctx: &Ctx, seq: &TokenSeq, n: Option<usize>) -> Vec<f64> {
        let mut rng = self.rng(ctx, 1, n.unwrap_or(0));
        self.expert
            .delete(ctx, seq, n)
            .into_iter()
            .map(|v| if rng.bernoulli(self.p) { 1.0 - v } else { v })
            .collect()
    }

    fn insert(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> PlhLogits {
        let mut counts = self.expert.counts(ctx, seqs);
        if let Pass::Refine(_) = ctx.pass {
            let mut rng = self.rng(ctx, 2, 0);
            for c in counts.iter_mut().flatten() {
                if rng.bernoulli(self.p) {
                    *c = if *c == 0 || rng.bernoulli(0.5) { *c + 1 } else { *c - 1 };
                    *c = (*c).min(self.expert.k_max);
                }
            }
        }
        peaked_logits(seqs, &counts, self.expert.k_max)
    }

    fn combine(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> Vec<Vec<f64>> {
        let mut rng = self.rng(ctx, 3, 0);
        self.expert
            .combine(ctx, seqs)
            .into_iter()
            .map(|row| row.into_iter().map(|v| if rng.bernoulli(self.p) { 1.0 - v } else { v }).collect())
            .collect()
    }

    fn predict(&self, ctx: &Ctx, seq: &TokenSeq) -> Vec<Vec<TokenChoice>> {
        let mut rng = self.rng(ctx, 4, 0);
        self.expert
            .predict(ctx, seq)
            .into_iter()
            .map(|choices| {
                if rng.bernoulli(self.p) {
                    vec![TokenChoice::new(self.random_token(&mut rng), 0.0)]
                } else {
                    choices
                }
            })
            .collect()
    }
}

/// A policy that needs no reference. Keeps every token and inserts nothing,
/// except that an empty hypothesis in refinement receives `|x|`
/// placeholders; placeholders copy the source token at the same position.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubPolicy {
    pub k_max: usize,
}

impl StubPolicy {
    pub fn new() -> Self {
        StubPolicy { k_max: K_MAX }
    }
}

impl Policy for StubPolicy {
    fn delete(&self, _ctx: &Ctx, seq: &TokenSeq, _n: Option<usize>) -> Vec<f64> {
        vec![1.0; seq.len()]
    }

    fn insert(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> PlhLogits {
        let counts: Vec<Vec<usize>> = seqs
            .iter()
            .map(|s| {
                let mut c = vec![0; s.len() + 1];
                if s.is_empty() && matches!(ctx.pass, Pass::Refine(_)) {
                    c[0] = ctx.x.len();
                }
                c
            })
            .collect();
        peaked_logits(seqs, &counts, self.k_max)
    }

    fn combine(&self, _ctx: &Ctx, seqs: &[TokenSeq]) -> Vec<Vec<f64>> {
        seqs.iter().map(|s| vec![1.0; s.len()]).collect()
    }

    fn predict(&self, ctx: &Ctx, seq: &TokenSeq) -> Vec<Vec<TokenChoice>> {
        (0..seq.len())
            .filter(|&p| seq.is_plh(p))
            .map(|p| vec![ref_choice(ctx.x, p)])
            .collect()
    }
}

/// Never converges: every round deletes everything and writes back a single
/// token, `a` in the first pass and on even rounds, `b` on odd ones.
#[derive(Clone, Copy, Debug)]
pub struct OscillatingStub {
    pub a: TokenId,
    pub b: TokenId,
}

impl Policy for OscillatingStub {
    fn delete(&self, _ctx: &Ctx, seq: &TokenSeq, _n: Option<usize>) -> Vec<f64> {
        vec![0.0; seq.len()]
    }

    fn insert(&self, _ctx: &Ctx, seqs: &[TokenSeq]) -> PlhLogits {
        let counts: Vec<Vec<usize>> = seqs.iter().map(|_| vec![1]).collect();
        peaked_logits(seqs, &counts, K_MAX)
    }

    fn combine(&self, _ctx: &Ctx, seqs: &[TokenSeq]) -> Vec<Vec<f64>> {
        seqs.iter().map(|s| vec![1.0; s.len()]).collect()
    }

    fn predict(&self, ctx: &Ctx, seq: &TokenSeq) -> Vec<Vec<TokenChoice>> {
        let id = match ctx.pass {
            Pass::Refine(t) if t % 2 == 1 => self.b,
            _ => self.a,
        };
        vec![vec![TokenChoice::new(id, 0.0)]; seq.count_plh()]
    }
}
