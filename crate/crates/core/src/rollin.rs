//! Roll-in: labeled training states for imitation learning.
//!
//! Each training triple `(x, matches, y_ref)` yields the four states of the
//! expert's own first pass plus noised states: random-substring matches
//! (`rnd-del-N`), placeholders overwritten by match tokens (`sel-noise`),
//! random subsequences to complete (`post-plh`), filled masks and filled
//! extra insertions to clean up (`post-del`, `post-del-extra`) and random
//! masks to predict (`rnd-msk`).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::alignment::{nway_align, DEFAULT_K};
use crate::corpus::seq_to_json;
use crate::edits::{
    apply_deletion, apply_insertion_with, combine, derive_edits_with, fill_tokens, lcs_keep_mask, replay,
    EditError, EditScript, Fill,
};
use crate::rng::Rng;
use crate::seq::{SeqBuilder, TokenId, TokenSeq, PLH, RESERVED, UNK};
use crate::vocab::Vocab;
use crate::K_MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ExpertDel,
    ExpertPlh,
    ExpertCmb,
    ExpertTok,
    RndDelN,
    SelNoise,
    PostPlh,
    PostDel,
    PostDelExtra,
    RndMsk,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::ExpertDel,
        Family::ExpertPlh,
        Family::ExpertCmb,
        Family::ExpertTok,
        Family::RndDelN,
        Family::SelNoise,
        Family::PostPlh,
        Family::PostDel,
        Family::PostDelExtra,
        Family::RndMsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ExpertDel => "expert-del",
            Family::ExpertPlh => "expert-plh",
            Family::ExpertCmb => "expert-cmb",
            Family::ExpertTok => "expert-tok",
            Family::RndDelN => "rnd-del-N",
            Family::SelNoise => "sel-noise",
            Family::PostPlh => "post-plh",
            Family::PostDel => "post-del",
            Family::PostDelExtra => "post-del-extra",
            Family::RndMsk => "rnd-msk",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Expert decisions attached to a state.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// Keep mask per state sequence.
    Del(Vec<Vec<bool>>),
    /// Placeholder count per gap per state sequence.
    Plh(Vec<Vec<usize>>),
    /// Keep flag per (sequence, position).
    Cmb(Vec<Vec<bool>>),
    /// Tokens for the placeholders of the single state sequence.
    Tok(Vec<Fill>),
    /// Whole first-pass unrolling from the state sequences.
    Script(Box<EditScript>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub sample_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSample {
    pub family: Family,
    pub x: TokenSeq,
    pub state: Vec<TokenSeq>,
    pub labels: Labels,
    pub meta: Meta,
}

impl StateSample {
    fn new(family: Family, x: &TokenSeq, state: Vec<TokenSeq>, labels: Labels) -> Self {
        StateSample {
            family,
            x: x.clone(),
            state,
            labels,
            meta: Meta { seed: 0, sample_id: 0 },
        }
    }

    /// `{family, x, state, labels, meta}` with tokens as surface strings.
    pub fn to_json(&self, vocab: &Vocab) -> Value {
        let fills = |f: &[Fill]| -> Value {
            f.iter()
                .map(|f| {
                    let tok = match (&f.surface, f.id) {
                        (Some(s), UNK) => s.to_string(),
                        (_, id) => vocab.token(id).to_string(),
                    };
                    json!({ "pos": f.pos, "token": tok })
                })
                .collect()
        };
        let labels = match &self.labels {
            Labels::Del(m) => json!({ "del": m }),
            Labels::Plh(c) => json!({ "plh": c }),
            Labels::Cmb(m) => json!({ "cmb": m }),
            Labels::Tok(f) => json!({ "tok": fills(f) }),
            Labels::Script(s) => json!({
                "del": s.del_masks,
                "plh": s.plh_counts,
                "cmb": s.cmb_keep,
                "tok": fills(&s.tok_fills),
            }),
        };
        json!({
            "family": self.family.name(),
            "x": seq_to_json(&self.x, vocab),
            "state": self.state.iter().map(|s| seq_to_json(s, vocab)).collect::<Vec<_>>(),
            "labels": labels,
            "meta": self.meta,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RollinConfig {
    /// Probability that a `post-plh` state is the reference itself.
    pub alpha: f64,
    /// Gate of `rnd-del-N`.
    pub beta: f64,
    /// Gate of `sel-noise`, and its per-placeholder replacement rate.
    pub gamma: f64,
    /// Gate of `rnd-msk`.
    pub delta: f64,
    /// Masking rate of `rnd-msk`.
    pub epsilon: f64,
    /// Number of substrings drawn by `rnd-del-N`.
    pub n: usize,
    pub k: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for RollinConfig {
    fn default() -> Self {
        RollinConfig {
            alpha: 0.3,
            beta: 0.2,
            gamma: 0.2,
            delta: 0.2,
            epsilon: 0.4,
            n: 3,
            k: DEFAULT_K,
            k_max: K_MAX,
            seed: 0,
        }
    }
}

impl RollinConfig {
    pub fn validate(&self) -> Result<(), RollinError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RollinError::Config(format!("{name}={v} is not a probability")));
            }
        }
        if self.n == 0 {
            return Err(RollinError::Config("n must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(RollinError::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RollinError {
    #[error("invalid roll-in config: {0}")]
    Config(String),
    #[error("expert states need at least one match")]
    NoMatches,
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<RollinError> },
}

/// Writes tokens into the placeholders of a sequence.
pub trait Filler: Sync {
    /// One fill per placeholder of `seq`.
    fn fill(&self, seq: &TokenSeq, rng: &mut Rng) -> Vec<Fill>;
}

/// Uniform draws from the content vocabulary `RESERVED..vocab_size`.
#[derive(Clone, Copy, Debug)]
pub struct UniformFiller {
    pub vocab_size: usize,
}

impl Filler for UniformFiller {
    fn fill(&self, seq: &TokenSeq, rng: &mut Rng) -> Vec<Fill> {
        plh_positions(seq)
            .map(|p| {
                let id = if self.vocab_size > RESERVED {
                    rng.between(RESERVED, self.vocab_size - 1) as TokenId
                } else {
                    UNK
                };
                Fill::new(p, id)
            })
            .collect()
    }
}

/// Fills position `p` with the token at `p` of a fixed sequence (`<UNK>`
/// past its end). A perfect filler when that sequence is the reference.
#[derive(Clone, Debug)]
pub struct CopyFiller {
    pub source: TokenSeq,
}

impl Filler for CopyFiller {
    fn fill(&self, seq: &TokenSeq, _rng: &mut Rng) -> Vec<Fill> {
        plh_positions(seq)
            .map(|p| {
                if p < self.source.len() {
                    Fill::from_seq(p, &self.source, p)
                } else {
                    Fill::new(p, UNK)
                }
            })
            .collect()
    }
}

/// Chooses placeholder counts for the gaps of a sequence.
pub trait Inserter: Sync {
    fn counts(&self, seq: &TokenSeq, rng: &mut Rng) -> Vec<usize>;
}

/// Independent geometric counts per gap with the given mean, capped.
#[derive(Clone, Copy, Debug)]
pub struct GeometricInserter {
    pub mean: f64,
    pub k_max: usize,
}

impl Default for GeometricInserter {
    fn default() -> Self {
        GeometricInserter { mean: 0.5, k_max: K_MAX }
    }
}

impl Inserter for GeometricInserter {
    fn counts(&self, seq: &TokenSeq, rng: &mut Rng) -> Vec<usize> {
        let q = self.mean / (1.0 + self.mean);
        (0..=seq.len())
            .map(|_| {
                let mut c = 0;
                while c < self.k_max && rng.bernoulli(q) {
                    c += 1;
                }
                c
            })
            .collect()
    }
}

fn plh_positions(seq: &TokenSeq) -> impl Iterator<Item = usize> + '_ {
    (0..seq.len()).filter(|&p| seq.is_plh(p))
}

fn substring(seq: &TokenSeq, start: usize, len: usize) -> TokenSeq {
    let mut b = SeqBuilder::with_capacity(len);
    for p in start..start + len {
        b.push_from(seq, p);
    }
    b.finish()
}

/// Gap sizes that rebuild a length-`total` sequence around the kept
/// (ascending) positions.
fn gap_counts(kept: &[usize], total: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(kept.len() + 1);
    let mut next = 0;
    for &p in kept {
        counts.push(p - next);
        next = p + 1;
    }
    counts.push(total - next);
    counts
}

/// The expert's first pass as four labeled states.
pub fn gen_expert_states(
    x: &TokenSeq,
    matches: &[TokenSeq],
    y_ref: &TokenSeq,
    k: usize,
    k_max: usize,
) -> Result<[StateSample; 4], RollinError> {
    if matches.is_empty() {
        return Err(RollinError::NoMatches);
    }
    let s = expert_script(matches, y_ref, k, k_max)?;
    Ok([
        StateSample::new(Family::ExpertDel, x, matches.to_vec(), Labels::Del(s.del_masks.clone())),
        StateSample::new(Family::ExpertPlh, x, s.y_del.clone(), Labels::Plh(s.plh_counts.clone())),
        StateSample::new(Family::ExpertCmb, x, s.y_plh.clone(), Labels::Cmb(s.cmb_keep.clone())),
        StateSample::new(Family::ExpertTok, x, vec![s.y_cmb.clone()], Labels::Tok(s.tok_fills.clone())),
    ])
}

fn expert_script(matches: &[TokenSeq], y_ref: &TokenSeq, k: usize, k_max: usize) -> Result<EditScript, EditError> {
    derive_edits_with(&nway_align(matches, y_ref, k), matches, y_ref, k_max)
}

/// `n` independent contiguous substrings of `y_ref`: start uniform over
/// `0..=|y_ref|`, length uniform over what remains.
pub fn rnd_del_n(y_ref: &TokenSeq, n: usize, rng: &mut Rng) -> Vec<TokenSeq> {
    let r = y_ref.len();
    (0..n)
        .map(|_| {
            let start = rng.between(0, r);
            let len = rng.between(0, r - start);
            substring(y_ref, start, len)
        })
        .collect()
}

/// Replaces each placeholder of `cmb_seqs` with probability `gamma` by a
/// token drawn uniformly from all tokens of `matches`, then relabels: a
/// position is kept iff it holds the reference token.
pub fn sel_noise(
    cmb_seqs: &[TokenSeq],
    matches: &[TokenSeq],
    y_ref: &TokenSeq,
    gamma: f64,
    rng: &mut Rng,
) -> (Vec<TokenSeq>, Vec<Vec<bool>>) {
    let pool: Vec<(usize, usize)> = matches
        .iter()
        .enumerate()
        .flat_map(|(n, m)| (0..m.len()).map(move |p| (n, p)))
        .collect();
    let noised: Vec<TokenSeq> = cmb_seqs
        .iter()
        .map(|s| {
            let mut fills = Vec::new();
            for p in plh_positions(s) {
                if rng.bernoulli(gamma) {
                    if let Some(&(n, q)) = rng.choose(&pool) {
                        fills.push(Fill::from_seq(p, &matches[n], q));
                    }
                }
            }
            fill_tokens(s, &fills).expect("fills target placeholders")
        })
        .collect();
    let keep = noised
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|p| !s.is_plh(p) && p < y_ref.len() && s.same_token(p, y_ref, p))
                .collect()
        })
        .collect();
    (noised, keep)
}

/// `post-plh`: with probability `alpha` the reference itself, otherwise a
/// uniformly sized, uniformly placed subsequence; labels rebuild the
/// reference length.
pub fn rnd_del_1(x: &TokenSeq, y_ref: &TokenSeq, alpha: f64, rng: &mut Rng) -> StateSample {
    let r = y_ref.len();
    let kept: Vec<usize> = if rng.bernoulli(alpha) {
        (0..r).collect()
    } else {
        let k = rng.between(0, r);
        rng.subset(r, k)
    };
    let mut keep = vec![false; r];
    kept.iter().for_each(|&p| keep[p] = true);
    let state = apply_deletion(y_ref, &keep).expect("mask matches length");
    StateSample::new(Family::PostPlh, x, vec![state], Labels::Plh(vec![gap_counts(&kept, r)]))
}

/// Keep exactly the tokens of `y` on the canonical longest common
/// subsequence with `y_ref`.
pub fn expert_del_labels(y: &TokenSeq, y_ref: &TokenSeq) -> Vec<bool> {
    lcs_keep_mask(y, y_ref)
}

/// `post-del`: a random mask of the reference (size uniform) filled by
/// `filler`; the expert deletes what does not fit.
pub fn correct_mistakes_state(x: &TokenSeq, y_ref: &TokenSeq, filler: &dyn Filler, rng: &mut Rng) -> StateSample {
    let r = y_ref.len();
    let k = rng.between(0, r);
    let masked = rng.subset(r, k);
    let mut b = SeqBuilder::with_capacity(r);
    let mut it = masked.iter().peekable();
    for p in 0..r {
        if it.peek() == Some(&&p) {
            it.next();
            b.push(PLH);
        } else {
            b.push_from(y_ref, p);
        }
    }
    let holed = b.finish();
    let state = fill_tokens(&holed, &filler.fill(&holed, rng)).expect("filler fills placeholders");
    let labels = expert_del_labels(&state, y_ref);
    StateSample::new(Family::PostDel, x, vec![state], Labels::Del(vec![labels]))
}

/// `post-del-extra`: placeholders inserted into the reference, then filled;
/// the expert deletes the extras that do not fit.
pub fn extra_tokens_state(
    x: &TokenSeq,
    y_ref: &TokenSeq,
    inserter: &dyn Inserter,
    filler: &dyn Filler,
    k_max: usize,
    rng: &mut Rng,
) -> StateSample {
    let counts: Vec<usize> = inserter.counts(y_ref, rng).into_iter().map(|c| c.min(k_max)).collect();
    let holed = apply_insertion_with(y_ref, &counts, k_max).expect("counts capped");
    let state = fill_tokens(&holed, &filler.fill(&holed, rng)).expect("filler fills placeholders");
    let labels = expert_del_labels(&state, y_ref);
    StateSample::new(Family::PostDelExtra, x, vec![state], Labels::Del(vec![labels]))
}

/// `rnd-msk`: each reference token masked with probability `epsilon`;
/// labels are the masked tokens.
pub fn rnd_mask(x: &TokenSeq, y_ref: &TokenSeq, epsilon: f64, rng: &mut Rng) -> StateSample {
    let mut b = SeqBuilder::with_capacity(y_ref.len());
    let mut fills = Vec::new();
    for p in 0..y_ref.len() {
        if rng.bernoulli(epsilon) {
            b.push(PLH);
            fills.push(Fill::from_seq(p, y_ref, p));
        } else {
            b.push_from(y_ref, p);
        }
    }
    StateSample::new(Family::RndMsk, x, vec![b.finish()], Labels::Tok(fills))
}

/// Synthetic fuzzy matches for pre-training: `n` substrings of `y` of length
/// `round(|y|·r)` at a uniform start, each stretched by a factor uniform in
/// `[1, 1+f]` with placeholders at uniform positions, then filled.
pub fn synth_matches(y: &TokenSeq, n: usize, r: f64, f: f64, filler: &dyn Filler, rng: &mut Rng) -> Vec<TokenSeq> {
    let len = ((y.len() as f64 * r).round() as usize).min(y.len());
    (0..n)
        .map(|_| {
            let start = rng.between(0, y.len() - len);
            let sub = substring(y, start, len);
            let target = ((len as f64 * rng.uniform(1.0, 1.0 + f)).round() as usize).max(len);
            let holes = rng.subset(target, target - len);
            let mut b = SeqBuilder::with_capacity(target);
            let (mut src, mut it) = (0, holes.iter().peekable());
            for p in 0..target {
                if it.peek() == Some(&&p) {
                    it.next();
                    b.push(PLH);
                } else {
                    b.push_from(&sub, src);
                    src += 1;
                }
            }
            let holed = b.finish();
            fill_tokens(&holed, &filler.fill(&holed, rng)).expect("filler fills placeholders")
        })
        .collect()
}

/// One training triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Triple {
    pub x: TokenSeq,
    pub matches: Vec<TokenSeq>,
    pub y_ref: TokenSeq,
}

/// All states for one triple, in a fixed family order. Expert-derived
/// families are skipped when the triple has no match or an alignment gap
/// exceeds `K_max`; the random draws are made regardless so the stream does
/// not depend on that.
pub fn gen_sample(t: &Triple, config: &RollinConfig, filler: &dyn Filler, inserter: &dyn Inserter, rng: &mut Rng) -> Vec<StateSample> {
    let (x, y_ref) = (&t.x, &t.y_ref);
    let mut out = Vec::new();
    let script = if t.matches.is_empty() {
        None
    } else {
        expert_script(&t.matches, y_ref, config.k, config.k_max).ok()
    };
    if let Some(s) = &script {
        out.extend([
            StateSample::new(Family::ExpertDel, x, t.matches.clone(), Labels::Del(s.del_masks.clone())),
            StateSample::new(Family::ExpertPlh, x, s.y_del.clone(), Labels::Plh(s.plh_counts.clone())),
            StateSample::new(Family::ExpertCmb, x, s.y_plh.clone(), Labels::Cmb(s.cmb_keep.clone())),
            StateSample::new(Family::ExpertTok, x, vec![s.y_cmb.clone()], Labels::Tok(s.tok_fills.clone())),
        ]);
    }

    if rng.bernoulli(config.beta) {
        let subs = rnd_del_n(y_ref, config.n, rng);
        if let Ok(s) = expert_script(&subs, y_ref, config.k, config.k_max) {
            out.push(StateSample::new(Family::RndDelN, x, subs, Labels::Script(Box::new(s))));
        }
    }

    if rng.bernoulli(config.gamma) {
        let cmb = script.as_ref().map_or(&[][..], |s| &s.y_plh[..]);
        let (state, keep) = sel_noise(cmb, &t.matches, y_ref, config.gamma, rng);
        if script.is_some() {
            out.push(StateSample::new(Family::SelNoise, x, state, Labels::Cmb(keep)));
        }
    }

    out.push(rnd_del_1(x, y_ref, config.alpha, rng));
    out.push(correct_mistakes_state(x, y_ref, filler, rng));
    out.push(extra_tokens_state(x, y_ref, inserter, filler, config.k_max, rng));

    if rng.bernoulli(config.delta) {
        out.push(rnd_mask(x, y_ref, config.epsilon, rng));
    }
    out
}

/// States for a whole corpus. Triple `i` draws from `Rng::derive(seed, i)`,
/// so the output does not depend on the thread count.
pub fn gen_corpus(
    triples: &[Triple],
    config: &RollinConfig,
    filler: &dyn Filler,
    inserter: &dyn Inserter,
) -> Result<Vec<StateSample>, RollinError> {
    config.validate()?;
    let per: Vec<Vec<StateSample>> = triples
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = Rng::derive(config.seed, i as u64);
            let mut v = gen_sample(t, config, filler, inserter, &mut rng);
            for s in &mut v {
                s.meta = Meta {
                    seed: config.seed,
                    sample_id: i,
                };
            }
            v
        })
        .collect();
    Ok(per.into_iter().flatten().collect())
}

/// True iff `a` is a subsequence of `b` under token equality.
fn is_subsequence(a: &TokenSeq, b: &TokenSeq) -> bool {
    let mut j = 0;
    for i in 0..a.len() {
        while j < b.len() && !a.same_token(i, b, j) {
            j += 1;
        }
        if j == b.len() {
            return false;
        }
        j += 1;
    }
    true
}

fn lcs_size(a: &TokenSeq, b: &TokenSeq) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for i in 0..a.len() {
        let mut cur = vec![0usize; b.len() + 1];
        for j in 0..b.len() {
            cur[j + 1] = if a.same_token(i, b, j) {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        prev = cur;
    }
    prev[b.len()]
}

fn skeleton_ok(s: &TokenSeq, y_ref: &TokenSeq) -> bool {
    s.len() == y_ref.len() && (0..s.len()).all(|p| s.is_plh(p) || s.same_token(p, y_ref, p))
}

/// Checks that the labels of `sample`, applied mechanically to its state,
/// move toward `y_ref`.
pub fn validate_labels(sample: &StateSample, y_ref: &TokenSeq) -> Result<(), String> {
    let state = &sample.state;
    let fam = sample.family;
    let err = |m: String| Err(format!("{fam}: {m}"));
    match &sample.labels {
        Labels::Del(masks) => {
            if masks.len() != state.len() {
                return err(format!("{} masks for {} sequences", masks.len(), state.len()));
            }
            for (s, m) in state.iter().zip(masks) {
                let kept = apply_deletion(s, m).map_err(|e| format!("{fam}: {e}"))?;
                if !is_subsequence(&kept, y_ref) {
                    return err("kept tokens are not a subsequence of the reference".into());
                }
                if matches!(fam, Family::PostDel | Family::PostDelExtra) && kept.len() != lcs_size(s, y_ref) {
                    return err("kept tokens are not a longest common subsequence".into());
                }
            }
        }
        Labels::Plh(counts) => {
            if counts.len() != state.len() {
                return err(format!("{} count rows for {} sequences", counts.len(), state.len()));
            }
            for (s, c) in state.iter().zip(counts) {
                let ins = apply_insertion_with(s, c, usize::MAX).map_err(|e| format!("{fam}: {e}"))?;
                if !skeleton_ok(&ins, y_ref) {
                    return err("insertion does not rebuild the reference skeleton".into());
                }
            }
        }
        Labels::Cmb(keep) => {
            if keep.len() != state.len() {
                return err(format!("{} keep rows for {} sequences", keep.len(), state.len()));
            }
            for (s, k) in state.iter().zip(keep) {
                if k.len() != s.len() {
                    return err("keep row length differs from its sequence".into());
                }
                for p in 0..s.len() {
                    if k[p] && (s.is_plh(p) || p >= y_ref.len() || !s.same_token(p, y_ref, p)) {
                        return err(format!("keeps position {p}, which differs from the reference"));
                    }
                }
            }
            let cmb = combine(state, keep).map_err(|e| format!("{fam}: {e}"))?;
            if !skeleton_ok(&cmb, y_ref) {
                return err("combination does not match the reference skeleton".into());
            }
        }
        Labels::Tok(fills) => {
            let [s] = state.as_slice() else {
                return err(format!("{} state sequences, expected 1", state.len()));
            };
            let out = fill_tokens(s, fills).map_err(|e| format!("{fam}: {e}"))?;
            if out != *y_ref {
                return err("filled sequence differs from the reference".into());
            }
        }
        Labels::Script(script) => {
            let (out, _) = replay(script, state).map_err(|e| format!("{fam}: {e}"))?;
            if out != *y_ref {
                return err("replay differs from the reference".into());
            }
        }
    }
    Ok(())
}
