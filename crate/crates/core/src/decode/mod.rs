//! Decoding against a pluggable edit policy.
//!
//! The first pass deletes from every match, inserts placeholders into each
//! (optionally realigned), combines the matches position-wise and fills the
//! remaining placeholders. Refinement rounds then repeat delete → insert →
//! fill on the single hypothesis until a round leaves it unchanged or the
//! iteration cap is reached. Every applied decision is recorded so the
//! output can be replayed from the matches alone.

mod policies;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edits::{
    apply_deletion, apply_insertion_with, combine_traced, fill_tokens, EditError, Fill, Origin, Provenance, Stage,
};
use crate::realign::{realign, PlhLogits, RealignConfig, RealignError};
use crate::seq::{TokenId, TokenSeq, UNK};
use crate::K_MAX;

pub use policies::{ExpertPolicy, NoisyExpert, OscillatingStub, StubPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    First,
    /// Refinement round, counted from 1.
    Refine(usize),
}

/// What a policy sees besides the sequences it is asked about.
#[derive(Clone, Copy, Debug)]
pub struct Ctx<'a> {
    pub x: &'a TokenSeq,
    pub pass: Pass,
}

/// One candidate token for a placeholder.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenChoice {
    pub id: TokenId,
    pub surface: Option<Arc<str>>,
    pub logprob: f64,
}

impl TokenChoice {
    pub fn new(id: TokenId, logprob: f64) -> Self {
        TokenChoice {
            id,
            surface: None,
            logprob,
        }
    }
}

/// The four sub-policies. Implementations must be deterministic functions of
/// their inputs.
pub trait Policy: Sync {
    /// Keep probability of every content token of `seq`. `n` is the match
    /// index during the first pass.
    fn delete(&self, ctx: &Ctx, seq: &TokenSeq, n: Option<usize>) -> Vec<f64>;

    /// Log-probabilities over placeholder counts for every gap of every
    /// sequence: `seqs.len() × gaps × classes`, gap `g` of a sequence with
    /// content length `c` real iff `g <= c`.
    fn insert(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> PlhLogits;

    /// Keep score in `[0, 1]` per (match, position) of the equal-length
    /// placeholder sequences.
    fn combine(&self, ctx: &Ctx, seqs: &[TokenSeq]) -> Vec<Vec<f64>>;

    /// Candidate tokens for each placeholder of `seq`, in position order.
    fn predict(&self, ctx: &Ctx, seq: &TokenSeq) -> Vec<Vec<TokenChoice>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_iters: usize,
    /// Subtracted from the count-0 log-probability in refinement rounds.
    pub zero_plh_penalty: f64,
    pub realign: bool,
    pub realign_config: RealignConfig,
    pub n_max: usize,
    pub k_max: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_iters: 10,
            zero_plh_penalty: 3.0,
            realign: false,
            realign_config: RealignConfig::default(),
            n_max: 3,
            k_max: K_MAX,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("{n} matches, more than N_max={n_max}")]
    TooManyMatches { n: usize, n_max: usize },
    #[error("{stage} policy returned {got} entries, expected {expected}")]
    PolicyShape { stage: Stage, expected: usize, got: usize },
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("realignment: {0}")]
    Realign(#[from] RealignError),
}

/// One applied stage.
#[derive(Clone, Debug, PartialEq)]
pub enum StageRecord {
    /// Keep masks, one per sequence (all matches in the first pass, the
    /// hypothesis afterwards).
    Delete { pass: Pass, masks: Vec<Vec<bool>> },
    Insert {
        pass: Pass,
        counts: Vec<Vec<usize>>,
        realigned: bool,
    },
    /// Resolved masks: at most one kept non-placeholder per position.
    Combine { keep: Vec<Vec<bool>> },
    Fill { pass: Pass, fills: Vec<Fill> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub output: TokenSeq,
    pub provenance: Provenance,
    pub trace: Vec<StageRecord>,
    /// Refinement rounds executed.
    pub iterations: usize,
    pub first_pass: TokenSeq,
}

/// Applies stage records; shared by decoding and replay.
struct Machine {
    k_max: usize,
    multi: Vec<TokenSeq>,
    /// Source position in the original match of every multi token.
    sources: Vec<Vec<Option<usize>>>,
    single: Option<(TokenSeq, Provenance)>,
}

impl Machine {
    fn new(matches: &[TokenSeq], k_max: usize) -> Self {
        Machine {
            k_max,
            multi: matches.to_vec(),
            sources: matches.iter().map(|m| (0..m.len()).map(Some).collect()).collect(),
            single: matches.is_empty().then(|| (TokenSeq::empty(), Vec::new())),
        }
    }

    fn hypothesis(&self) -> Option<&TokenSeq> {
        self.single.as_ref().map(|(s, _)| s)
    }

    fn apply(&mut self, rec: &StageRecord) -> Result<(), EditError> {
        let tag = |stage: Stage, n: Option<usize>| {
            move |e: EditError| EditError::Stage {
                stage,
                n,
                source: Box::new(e),
            }
        };
        match (rec, self.single.as_mut()) {
            (StageRecord::Delete { masks, .. }, None) => {
                if masks.len() != self.multi.len() {
                    return Err(tag(Stage::Delete, None)(EditError::MaskLength {
                        expected: self.multi.len(),
                        got: masks.len(),
                    }));
                }
                for (n, mask) in masks.iter().enumerate() {
                    self.multi[n] = apply_deletion(&self.multi[n], mask).map_err(tag(Stage::Delete, Some(n)))?;
                    let src = std::mem::take(&mut self.sources[n]);
                    self.sources[n] = src.into_iter().zip(mask).filter(|(_, &k)| k).map(|(s, _)| s).collect();
                }
            }
            (StageRecord::Insert { counts, .. }, None) => {
                if counts.len() != self.multi.len() {
                    return Err(tag(Stage::Insert, None)(EditError::CountsLength {
                        expected: self.multi.len(),
                        got: counts.len(),
                    }));
                }
                for (n, c) in counts.iter().enumerate() {
                    self.multi[n] = apply_insertion_with(&self.multi[n], c, self.k_max).map_err(tag(Stage::Insert, Some(n)))?;
                    self.sources[n] = expand(&self.sources[n], c);
                }
            }
            (StageRecord::Combine { keep }, None) => {
                let (seq, who) = combine_traced(&self.multi, keep).map_err(tag(Stage::Combine, None))?;
                let prov = who
                    .iter()
                    .enumerate()
                    .map(|(pos, w)| match *w {
                        Some(n) => Origin::Copy {
                            n,
                            pos: self.sources[n][pos].expect("kept tokens have sources"),
                        },
                        None => Origin::Generated,
                    })
                    .collect();
                self.single = Some((seq, prov));
            }
            (StageRecord::Fill { fills, .. }, Some((seq, prov))) => {
                *seq = fill_tokens(seq, fills).map_err(tag(Stage::Fill, None))?;
                for f in fills {
                    prov[f.pos] = Origin::Generated;
                }
            }
            (StageRecord::Delete { masks, .. }, Some((seq, prov))) => {
                let mask = single_entry(masks, Stage::Delete)?;
                *seq = apply_deletion(seq, mask).map_err(tag(Stage::Delete, None))?;
                *prov = prov.iter().zip(mask).filter(|(_, &k)| k).map(|(&o, _)| o).collect();
            }
            (StageRecord::Insert { counts, .. }, Some((seq, prov))) => {
                let c = single_entry(counts, Stage::Insert)?;
                *seq = apply_insertion_with(seq, c, self.k_max).map_err(tag(Stage::Insert, None))?;
                let src: Vec<Option<Origin>> = prov.iter().map(|&o| Some(o)).collect();
                *prov = expand(&src, c).into_iter().map(|o| o.unwrap_or(Origin::Generated)).collect();
            }
            (StageRecord::Fill { .. }, None) | (StageRecord::Combine { .. }, Some(_)) => {
                return Err(EditError::NoSequences);
            }
        }
        Ok(())
    }
}

fn single_entry<T>(v: &[T], stage: Stage) -> Result<&T, EditError> {
    match v {
        [x] => Ok(x),
        _ => Err(EditError::Stage {
            stage,
            n: None,
            source: Box::new(EditError::MaskLength { expected: 1, got: v.len() }),
        }),
    }
}

/// Spreads per-token values over the insertion output (`None` for new
/// placeholders).
fn expand<T: Copy>(src: &[Option<T>], counts: &[usize]) -> Vec<Option<T>> {
    let mut out = Vec::with_capacity(src.len() + counts.iter().sum::<usize>());
    for (g, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(None, c));
        if let Some(&s) = src.get(g) {
            out.push(s);
        }
    }
    out
}

fn check_len<T>(v: &[T], expected: usize, stage: Stage) -> Result<(), DecodeError> {
    if v.len() != expected {
        return Err(DecodeError::PolicyShape {
            stage,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Most likely count per real gap of sequence `n`, after subtracting
/// `penalty` from the count-0 class.
pub fn plh_argmax(logits: &PlhLogits, n: usize, gaps: usize, penalty: f64) -> Vec<usize> {
    (0..gaps)
        .map(|g| {
            let row = logits.row(n, g);
            let mut best = 0;
            let mut best_v = row[0] - penalty;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Highest log-probability; ties go to the lowest id. No candidates → `<UNK>`.
pub fn token_argmax(choices: &[TokenChoice]) -> (TokenId, Option<Arc<str>>) {
    let mut best: Option<&TokenChoice> = None;
    for c in choices {
        if best.is_none_or(|b| c.logprob > b.logprob || (c.logprob == b.logprob && c.id < b.id)) {
            best = Some(c);
        }
    }
    best.map_or((UNK, None), |c| (c.id, c.surface.clone()))
}

fn fill_decisions(policy: &dyn Policy, ctx: &Ctx, seq: &TokenSeq) -> Result<Vec<Fill>, DecodeError> {
    let plh: Vec<usize> = (0..seq.len()).filter(|&p| seq.is_plh(p)).collect();
    let preds = policy.predict(ctx, seq);
    check_len(&preds, plh.len(), Stage::Fill)?;
    Ok(plh
        .iter()
        .zip(&preds)
        .map(|(&pos, choices)| {
            let (id, surface) = token_argmax(choices);
            Fill {
                pos,
                id,
                surface: if id == UNK { surface } else { None },
            }
        })
        .collect())
}

fn insert_logits(policy: &dyn Policy, ctx: &Ctx, seqs: &[TokenSeq]) -> Result<PlhLogits, DecodeError> {
    let logits = policy.insert(ctx, seqs);
    let need = seqs.iter().map(|s| s.len() + 1).max().unwrap_or(0);
    if logits.n != seqs.len() {
        return Err(DecodeError::PolicyShape {
            stage: Stage::Insert,
            expected: seqs.len(),
            got: logits.n,
        });
    }
    if logits.gaps < need {
        return Err(DecodeError::PolicyShape {
            stage: Stage::Insert,
            expected: need,
            got: logits.gaps,
        });
    }
    Ok(logits)
}

fn step(machine: &mut Machine, trace: &mut Vec<StageRecord>, rec: StageRecord) -> Result<(), DecodeError> {
    machine.apply(&rec)?;
    trace.push(rec);
    Ok(())
}

/// First pass only. Returns the machine holding the combined hypothesis.
fn run_first_pass(
    x: &TokenSeq,
    matches: &[TokenSeq],
    policy: &dyn Policy,
    cfg: &DecodeConfig,
    trace: &mut Vec<StageRecord>,
) -> Result<Machine, DecodeError> {
    let mut m = Machine::new(matches, cfg.k_max);
    if matches.is_empty() {
        return Ok(m);
    }
    if matches.len() > cfg.n_max {
        return Err(DecodeError::TooManyMatches {
            n: matches.len(),
            n_max: cfg.n_max,
        });
    }
    let ctx = Ctx { x, pass: Pass::First };

    let mut masks = Vec::with_capacity(matches.len());
    for (n, s) in m.multi.iter().enumerate() {
        let p = policy.delete(&ctx, s, Some(n));
        check_len(&p, s.len(), Stage::Delete)?;
        masks.push(p.iter().map(|&v| v >= 0.5).collect());
    }
    step(&mut m, trace, StageRecord::Delete { pass: Pass::First, masks })?;

    let logits = insert_logits(policy, &ctx, &m.multi)?;
    let realigned = cfg.realign && matches.len() >= 2;
    let counts: Vec<Vec<usize>> = if realigned {
        let out = realign(&logits, &m.multi, &cfg.realign_config)?;
        out.plan
            .into_iter()
            .zip(&m.multi)
            .map(|(row, s)| row[..s.len() + 1].to_vec())
            .collect()
    } else {
        m.multi
            .iter()
            .enumerate()
            .map(|(n, s)| plh_argmax(&logits, n, s.len() + 1, 0.0))
            .collect()
    };
    step(
        &mut m,
        trace,
        StageRecord::Insert {
            pass: Pass::First,
            counts,
            realigned,
        },
    )?;

    let len = m.multi[0].len();
    if m.multi.iter().any(|s| s.len() != len) {
        return Err(EditError::Stage {
            stage: Stage::Combine,
            n: None,
            source: Box::new(EditError::LengthMismatch {
                lengths: m.multi.iter().map(TokenSeq::len).collect(),
            }),
        }
        .into());
    }
    let scores = policy.combine(&ctx, &m.multi);
    check_len(&scores, m.multi.len(), Stage::Combine)?;
    for row in &scores {
        check_len(row, len, Stage::Combine)?;
    }
    let mut keep = vec![vec![false; len]; m.multi.len()];
    for pos in 0..len {
        let mut best: Option<usize> = None;
        for n in 0..m.multi.len() {
            if scores[n][pos] >= 0.5 && !m.multi[n].is_plh(pos) && best.is_none_or(|b| scores[n][pos] > scores[b][pos]) {
                best = Some(n);
            }
        }
        if let Some(n) = best {
            keep[n][pos] = true;
        }
    }
    step(&mut m, trace, StageRecord::Combine { keep })?;

    let hyp = m.hypothesis().expect("combined").clone();
    let fills = fill_decisions(policy, &ctx, &hyp)?;
    step(&mut m, trace, StageRecord::Fill { pass: Pass::First, fills })?;
    Ok(m)
}

fn run_refinement(
    x: &TokenSeq,
    m: &mut Machine,
    policy: &dyn Policy,
    cfg: &DecodeConfig,
    trace: &mut Vec<StageRecord>,
) -> Result<usize, DecodeError> {
    let mut iterations = 0;
    for t in 1..=cfg.max_iters {
        iterations = t;
        let ctx = Ctx { x, pass: Pass::Refine(t) };
        let before = m.hypothesis().expect("hypothesis").clone();

        let p = policy.delete(&ctx, &before, None);
        check_len(&p, before.len(), Stage::Delete)?;
        let mask = p.iter().map(|&v| v >= 0.5).collect();
        step(m, trace, StageRecord::Delete { pass: ctx.pass, masks: vec![mask] })?;

        let cur = m.hypothesis().expect("hypothesis").clone();
        let logits = insert_logits(policy, &ctx, std::slice::from_ref(&cur))?;
        let counts = plh_argmax(&logits, 0, cur.len() + 1, cfg.zero_plh_penalty);
        step(
            m,
            trace,
            StageRecord::Insert {
                pass: ctx.pass,
                counts: vec![counts],
                realigned: false,
            },
        )?;

        let cur = m.hypothesis().expect("hypothesis").clone();
        let fills = fill_decisions(policy, &ctx, &cur)?;
        step(m, trace, StageRecord::Fill { pass: ctx.pass, fills })?;

        if m.hypothesis() == Some(&before) {
            break;
        }
    }
    Ok(iterations)
}

pub fn first_pass(
    x: &TokenSeq,
    matches: &[TokenSeq],
    policy: &dyn Policy,
    cfg: &DecodeConfig,
) -> Result<(TokenSeq, Provenance, Vec<StageRecord>), DecodeError> {
    let mut trace = Vec::new();
    let m = run_first_pass(x, matches, policy, cfg, &mut trace)?;
    let (seq, prov) = m.single.expect("first pass ends with one hypothesis");
    Ok((seq, prov, trace))
}

/// Refinement rounds starting from hypothesis `y` (provenance all generated).
pub fn iterative_refine(
    y: &TokenSeq,
    x: &TokenSeq,
    policy: &dyn Policy,
    cfg: &DecodeConfig,
) -> Result<DecodeResult, DecodeError> {
    let mut m = Machine::new(&[], cfg.k_max);
    m.single = Some((y.clone(), vec![Origin::Generated; y.len()]));
    let mut trace = Vec::new();
    let iterations = run_refinement(x, &mut m, policy, cfg, &mut trace)?;
    let (output, provenance) = m.single.expect("hypothesis");
    Ok(DecodeResult {
        output,
        provenance,
        trace,
        iterations,
        first_pass: y.clone(),
    })
}

pub fn decode(x: &TokenSeq, matches: &[TokenSeq], policy: &dyn Policy, cfg: &DecodeConfig) -> Result<DecodeResult, DecodeError> {
    let mut trace = Vec::new();
    let mut m = run_first_pass(x, matches, policy, cfg, &mut trace)?;
    let first_pass = m.hypothesis().expect("hypothesis").clone();
    let iterations = run_refinement(x, &mut m, policy, cfg, &mut trace)?;
    let (output, provenance) = m.single.expect("hypothesis");
    Ok(DecodeResult {
        output,
        provenance,
        trace,
        iterations,
        first_pass,
    })
}

/// Re-applies a recorded trace to the matches.
pub fn replay_trace(matches: &[TokenSeq], trace: &[StageRecord], k_max: usize) -> Result<(TokenSeq, Provenance), EditError> {
    let mut m = Machine::new(matches, k_max);
    for rec in trace {
        m.apply(rec)?;
    }
    m.single.ok_or(EditError::NoSequences)
}

#[cfg(test)]
mod tests;
