//! The four edit stages (delete, insert placeholders, combine, fill), the
//! expert script derived from an alignment graph, and replay with
//! provenance.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{group_keys, kbest_1way, AlignError, AlignmentGraph};
use crate::seq::{SeqBuilder, TokenId, TokenSeq, PLH, UNK};
use crate::K_MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Delete,
    Insert,
    Combine,
    Fill,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Delete => "delete",
            Stage::Insert => "insert",
            Stage::Combine => "combine",
            Stage::Fill => "fill",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EditError {
    #[error("mask has {got} entries for {expected} tokens")]
    MaskLength { expected: usize, got: usize },
    #[error("{got} insertion counts for {expected} gaps")]
    CountsLength { expected: usize, got: usize },
    #[error("gap {gap} asks for {count} placeholders, more than K_max={k_max}")]
    TooManyPlaceholders { gap: usize, count: usize, k_max: usize },
    #[error("match {n}, gap {gap} needs {needed} placeholders, more than K_max={k_max}")]
    GapOverflow {
        n: usize,
        gap: usize,
        needed: usize,
        k_max: usize,
    },
    #[error("cannot combine sequences of lengths {lengths:?}")]
    LengthMismatch { lengths: Vec<usize> },
    #[error("nothing to combine")]
    NoSequences,
    #[error("fill at position {pos}, which holds no placeholder")]
    FillNotPlaceholder { pos: usize },
    #[error("fill at position {pos} is out of range")]
    FillOutOfRange { pos: usize },
    #[error("placeholder at position {pos} left unfilled")]
    Unfilled { pos: usize },
    #[error("{stage} stage{}: {source}", n.map(|n| format!(" (match {n})")).unwrap_or_default())]
    Stage {
        stage: Stage,
        n: Option<usize>,
        source: Box<EditError>,
    },
    #[error(transparent)]
    Align(#[from] AlignError),
}

impl EditError {
    fn at(self, stage: Stage, n: Option<usize>) -> Self {
        EditError::Stage {
            stage,
            n,
            source: Box::new(self),
        }
    }
}

/// Where an output token comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "lowercase")]
pub enum Origin {
    /// Copied from content position `pos` of match `n`.
    Copy { n: usize, pos: usize },
    Generated,
}

impl Origin {
    pub fn is_copy(self) -> bool {
        matches!(self, Origin::Copy { .. })
    }
}

pub type Provenance = Vec<Origin>;

/// A token written into a placeholder. `surface` carries the string of an
/// out-of-vocabulary token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fill {
    pub pos: usize,
    pub id: TokenId,
    pub surface: Option<Arc<str>>,
}

impl Fill {
    pub fn new(pos: usize, id: TokenId) -> Self {
        Fill {
            pos,
            id,
            surface: None,
        }
    }

    /// Copies content position `src_pos` of `src` into `pos`.
    pub fn from_seq(pos: usize, src: &TokenSeq, src_pos: usize) -> Self {
        let id = src.get(src_pos);
        Fill {
            pos,
            id,
            surface: if id == UNK {
                src.surface(src_pos).map(Arc::from)
            } else {
                None
            },
        }
    }
}

pub fn apply_deletion(seq: &TokenSeq, keep: &[bool]) -> Result<TokenSeq, EditError> {
    if keep.len() != seq.len() {
        return Err(EditError::MaskLength {
            expected: seq.len(),
            got: keep.len(),
        });
    }
    let mut b = SeqBuilder::with_capacity(seq.len());
    for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        b.push_from(seq, i);
    }
    Ok(b.finish())
}

pub fn apply_insertion(seq: &TokenSeq, counts: &[usize]) -> Result<TokenSeq, EditError> {
    apply_insertion_with(seq, counts, K_MAX)
}

/// Inserts `counts[g]` placeholders into gap `g`; gap 0 precedes the first
/// content token and gap `len` follows the last.
pub fn apply_insertion_with(seq: &TokenSeq, counts: &[usize], k_max: usize) -> Result<TokenSeq, EditError> {
    if counts.len() != seq.len() + 1 {
        return Err(EditError::CountsLength {
            expected: seq.len() + 1,
            got: counts.len(),
        });
    }
    if let Some((gap, &count)) = counts.iter().enumerate().find(|(_, &c)| c > k_max) {
        return Err(EditError::TooManyPlaceholders { gap, count, k_max });
    }
    let total: usize = counts.iter().sum();
    let mut b = SeqBuilder::with_capacity(seq.len() + total);
    for (g, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            b.push(PLH);
        }
        if g < seq.len() {
            b.push_from(seq, g);
        }
    }
    Ok(b.finish())
}

/// Position-wise combination. At each position the kept non-placeholder
/// token of the lowest match index wins; returns the winner per position.
pub fn combine_traced(seqs: &[TokenSeq], keep: &[Vec<bool>]) -> Result<(TokenSeq, Vec<Option<usize>>), EditError> {
    let Some(first) = seqs.first() else {
        return Err(EditError::NoSequences);
    };
    let len = first.len();
    if seqs.iter().any(|s| s.len() != len) {
        return Err(EditError::LengthMismatch {
            lengths: seqs.iter().map(TokenSeq::len).collect(),
        });
    }
    if keep.len() != seqs.len() {
        return Err(EditError::MaskLength {
            expected: seqs.len(),
            got: keep.len(),
        });
    }
    if let Some(k) = keep.iter().find(|k| k.len() != len) {
        return Err(EditError::MaskLength {
            expected: len,
            got: k.len(),
        });
    }
    let mut b = SeqBuilder::with_capacity(len);
    let mut who = Vec::with_capacity(len);
    for pos in 0..len {
        match (0..seqs.len()).find(|&n| keep[n][pos] && !seqs[n].is_plh(pos)) {
            Some(n) => {
                b.push_from(&seqs[n], pos);
                who.push(Some(n));
            }
            None => {
                b.push(PLH);
                who.push(None);
            }
        }
    }
    Ok((b.finish(), who))
}

pub fn combine(seqs: &[TokenSeq], keep: &[Vec<bool>]) -> Result<TokenSeq, EditError> {
    combine_traced(seqs, keep).map(|(s, _)| s)
}

pub fn fill_tokens(seq: &TokenSeq, fills: &[Fill]) -> Result<TokenSeq, EditError> {
    let mut slot: Vec<Option<&Fill>> = vec![None; seq.len()];
    for f in fills {
        if f.pos >= seq.len() {
            return Err(EditError::FillOutOfRange { pos: f.pos });
        }
        if !seq.is_plh(f.pos) {
            return Err(EditError::FillNotPlaceholder { pos: f.pos });
        }
        slot[f.pos] = Some(f);
    }
    let mut b = SeqBuilder::with_capacity(seq.len());
    for (pos, s) in slot.iter().enumerate() {
        match s {
            Some(Fill {
                id: UNK,
                surface: Some(surface),
                ..
            }) => b.push_unk(surface.clone()),
            Some(f) => b.push(f.id),
            None => b.push_from(seq, pos),
        }
    }
    Ok(b.finish())
}

/// Expert decisions for every stage plus the intermediate sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditScript {
    pub del_masks: Vec<Vec<bool>>,
    pub plh_counts: Vec<Vec<usize>>,
    pub cmb_keep: Vec<Vec<bool>>,
    pub tok_fills: Vec<Fill>,
    pub y_del: Vec<TokenSeq>,
    pub y_plh: Vec<TokenSeq>,
    pub y_cmb: TokenSeq,
    pub y_tok: TokenSeq,
}

pub fn derive_edits(graph: &AlignmentGraph, matches: &[TokenSeq], y_ref: &TokenSeq) -> Result<EditScript, EditError> {
    derive_edits_with(graph, matches, y_ref, K_MAX)
}

pub fn derive_edits_with(
    graph: &AlignmentGraph,
    matches: &[TokenSeq],
    y_ref: &TokenSeq,
    k_max: usize,
) -> Result<EditScript, EditError> {
    graph.validate(matches, y_ref)?;
    let r = y_ref.len();
    let mut script = EditScript {
        del_masks: Vec::with_capacity(matches.len()),
        plh_counts: Vec::with_capacity(matches.len()),
        cmb_keep: Vec::with_capacity(matches.len()),
        tok_fills: Vec::new(),
        y_del: Vec::with_capacity(matches.len()),
        y_plh: Vec::with_capacity(matches.len()),
        y_cmb: TokenSeq::empty(),
        y_tok: TokenSeq::empty(),
    };
    for (n, m) in matches.iter().enumerate() {
        let mut keep = vec![false; m.len()];
        let mut counts = Vec::new();
        let mut next_j = 0usize;
        for (i, j) in graph.edges_of(n) {
            keep[i] = true;
            counts.push(j - next_j);
            next_j = j + 1;
        }
        counts.push(r - next_j);
        if let Some((gap, &needed)) = counts.iter().enumerate().find(|(_, &c)| c > k_max) {
            return Err(EditError::GapOverflow { n, gap, needed, k_max });
        }
        let y_del = apply_deletion(m, &keep)?;
        let y_plh = apply_insertion_with(&y_del, &counts, k_max)?;
        debug_assert_eq!(y_plh.len(), r);
        script.cmb_keep.push((0..r).map(|p| !y_plh.is_plh(p)).collect());
        script.del_masks.push(keep);
        script.plh_counts.push(counts);
        script.y_del.push(y_del);
        script.y_plh.push(y_plh);
    }
    script.y_cmb = if matches.is_empty() {
        TokenSeq::from_content(&vec![PLH; r]).expect("placeholders are valid content")
    } else {
        combine(&script.y_plh, &script.cmb_keep)?
    };
    script.tok_fills = (0..r)
        .filter(|&p| script.y_cmb.is_plh(p))
        .map(|p| Fill::from_seq(p, y_ref, p))
        .collect();
    script.y_tok = fill_tokens(&script.y_cmb, &script.tok_fills)?;
    Ok(script)
}

/// Runs the four stages of `script` on `matches` from scratch.
pub fn replay(script: &EditScript, matches: &[TokenSeq]) -> Result<(TokenSeq, Provenance), EditError> {
    if script.del_masks.len() != matches.len() || script.plh_counts.len() != matches.len() {
        return Err(EditError::MaskLength {
            expected: matches.len(),
            got: script.del_masks.len(),
        }
        .at(Stage::Delete, None));
    }
    let mut plh_seqs = Vec::with_capacity(matches.len());
    // per match, per position of its insertion output: source position
    let mut sources: Vec<Vec<Option<usize>>> = Vec::with_capacity(matches.len());
    for (n, m) in matches.iter().enumerate() {
        let keep = &script.del_masks[n];
        let del = apply_deletion(m, keep).map_err(|e| e.at(Stage::Delete, Some(n)))?;
        let kept: Vec<usize> = (0..m.len()).filter(|&i| keep[i]).collect();
        let counts = &script.plh_counts[n];
        let plh = apply_insertion(&del, counts).map_err(|e| e.at(Stage::Insert, Some(n)))?;
        sources.push(insertion_sources(&kept, counts));
        plh_seqs.push(plh);
    }
    let (cmb, origins) = if matches.is_empty() {
        let r = script.y_cmb.len();
        (
            TokenSeq::from_content(&vec![PLH; r]).expect("placeholders are valid content"),
            vec![Origin::Generated; r],
        )
    } else {
        let (cmb, who) = combine_traced(&plh_seqs, &script.cmb_keep).map_err(|e| e.at(Stage::Combine, None))?;
        let origins = who
            .iter()
            .enumerate()
            .map(|(pos, w)| match w {
                Some(n) => Origin::Copy {
                    n: *n,
                    pos: sources[*n][pos].expect("non-placeholder tokens have a source"),
                },
                None => Origin::Generated,
            })
            .collect();
        (cmb, origins)
    };
    let out = fill_tokens(&cmb, &script.tok_fills).map_err(|e| e.at(Stage::Fill, None))?;
    if let Some(pos) = (0..out.len()).find(|&p| out.is_plh(p)) {
        return Err(EditError::Unfilled { pos }.at(Stage::Fill, None));
    }
    Ok((out, origins))
}

/// Source positions after inserting `counts` placeholders around the kept
/// tokens `kept` (placeholders map to `None`).
pub fn insertion_sources(kept: &[usize], counts: &[usize]) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(kept.len() + counts.iter().sum::<usize>());
    for (g, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(None, c));
        if let Some(&i) = kept.get(g) {
            out.push(Some(i));
        }
    }
    out
}

/// Keeps exactly the tokens of `y` on the canonical best monotone matching
/// with `y_ref` (a longest common subsequence); deletes the rest.
pub fn lcs_keep_mask(y: &TokenSeq, y_ref: &TokenSeq) -> Vec<bool> {
    let mut keep = vec![false; y.len()];
    for (i, _) in kbest_1way(y, y_ref, 1).remove(0).pairs {
        keep[i] = true;
    }
    keep
}

/// Insertion counts spreading `seq` over `target_len` positions so that as
/// many tokens as possible land on the reference position holding the same
/// token. `target_len` must be at least `seq.len()`.
pub fn placement_counts(seq: &TokenSeq, y_ref: &TokenSeq, target_len: usize) -> Vec<usize> {
    let (n, t) = (seq.len(), target_len);
    assert!(t >= n, "target length {t} shorter than sequence {n}");
    let (keys, rkeys) = group_keys(std::slice::from_ref(seq), y_ref);
    let s = &keys[0];
    // f[i][j]: best hits placing the first i tokens within the first j slots
    let w = t + 1;
    let mut f = vec![i32::MIN; (n + 1) * w];
    for j in 0..=t {
        f[j] = 0;
    }
    for i in 1..=n {
        for j in i..=t {
            let skip = f[i * w + j - 1];
            let hit = (j - 1 < rkeys.len() && s[i - 1] == rkeys[j - 1]) as i32;
            let place = f[(i - 1) * w + j - 1].saturating_add(hit);
            f[i * w + j] = skip.max(place);
        }
    }
    // walk back, placing each token as late as the optimum allows
    let mut slot = vec![0usize; n];
    let (mut i, mut j) = (n, t);
    while i > 0 {
        let hit = (j - 1 < rkeys.len() && s[i - 1] == rkeys[j - 1]) as i32;
        if f[(i - 1) * w + j - 1].saturating_add(hit) == f[i * w + j] {
            slot[i - 1] = j - 1;
            i -= 1;
        }
        j -= 1;
    }
    let mut counts = Vec::with_capacity(n + 1);
    let mut next = 0;
    for &q in &slot {
        counts.push(q - next);
        next = q + 1;
    }
    counts.push(t - next);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{nway_align, DEFAULT_K};
    use crate::rng::Rng;

    fn seq(s: &str) -> TokenSeq {
        let ids: Vec<u32> = s.split_whitespace().map(|w| w.as_bytes()[0] as u32).collect();
        TokenSeq::from_content(&ids).unwrap()
    }

    fn plh_seq(s: &str) -> TokenSeq {
        let ids: Vec<u32> = s
            .split_whitespace()
            .map(|w| if w == "_" { PLH } else { w.as_bytes()[0] as u32 })
            .collect();
        TokenSeq::from_content(&ids).unwrap()
    }

    #[test]
    fn deletion_cases() {
        let s = seq("a b c d");
        assert_eq!(apply_deletion(&s, &[true; 4]).unwrap(), s);
        assert_eq!(apply_deletion(&s, &[false; 4]).unwrap(), TokenSeq::empty());
        assert_eq!(apply_deletion(&s, &[true, false, true, false]).unwrap(), seq("a c"));
        assert_eq!(
            apply_deletion(&s, &[true]),
            Err(EditError::MaskLength { expected: 4, got: 1 })
        );
    }

    #[test]
    fn insertion_cases() {
        let s = seq("a b");
        assert_eq!(apply_insertion(&s, &[0, 0, 0]).unwrap(), s);
        assert_eq!(apply_insertion(&s, &[0, 2, 0]).unwrap(), plh_seq("a _ _ b"));
        assert!(matches!(
            apply_insertion(&s, &[0, 65, 0]),
            Err(EditError::TooManyPlaceholders { gap: 1, count: 65, .. })
        ));
        let mut rng = Rng::new(1);
        for _ in 0..200 {
            let len = rng.below(10);
            let s = TokenSeq::from_content(&vec![9; len]).unwrap();
            let counts: Vec<usize> = (0..=len).map(|_| rng.below(5)).collect();
            let out = apply_insertion(&s, &counts).unwrap();
            assert_eq!(out.len(), len + counts.iter().sum::<usize>());
            assert_eq!(out.count_plh(), counts.iter().sum::<usize>());
        }
    }

    #[test]
    fn combine_cases() {
        let a = plh_seq("a _ c _");
        let b = plh_seq("_ b _ _");
        let keep = |s: &TokenSeq| (0..s.len()).map(|p| !s.is_plh(p)).collect::<Vec<_>>();
        assert_eq!(combine(&[a.clone()], &[keep(&a)]).unwrap(), a);
        assert_eq!(
            combine(&[a.clone(), b.clone()], &[keep(&a), keep(&b)]).unwrap(),
            plh_seq("a b c _")
        );
        // conflict: lowest n wins
        let x = plh_seq("x _");
        let y = plh_seq("y _");
        assert_eq!(
            combine(&[x, y], &[vec![true, true], vec![true, true]]).unwrap(),
            plh_seq("x _")
        );
        assert!(matches!(
            combine(&[seq("a"), seq("a b")], &[vec![true], vec![true, true]]),
            Err(EditError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn fill_cases() {
        let s = seq("a b");
        assert_eq!(fill_tokens(&s, &[]).unwrap(), s);
        assert_eq!(
            fill_tokens(&plh_seq("a _"), &[Fill::new(1, b'z' as u32)]).unwrap(),
            seq("a z")
        );
        assert_eq!(
            fill_tokens(&plh_seq("_ _"), &[Fill::new(0, 120), Fill::new(1, 121)]).unwrap(),
            seq("x y")
        );
        assert_eq!(
            fill_tokens(&s, &[Fill::new(0, 9)]),
            Err(EditError::FillNotPlaceholder { pos: 0 })
        );
    }

    #[test]
    fn identical_match_script_is_trivial() {
        let r = seq("a b c");
        let g = nway_align(&[r.clone()], &r, DEFAULT_K);
        let s = derive_edits(&g, &[r.clone()], &r).unwrap();
        assert_eq!(s.del_masks, vec![vec![true; 3]]);
        assert_eq!(s.plh_counts, vec![vec![0; 4]]);
        assert!(s.tok_fills.is_empty());
        let (out, prov) = replay(&s, &[r.clone()]).unwrap();
        assert_eq!(out, r);
        assert!(prov.iter().all(|o| o.is_copy()));
    }

    #[test]
    fn two_partial_matches_fill_only_the_uncovered() {
        // match 0 covers "a b", match 1 covers "d e"; only "c" is generated.
        let r = seq("a b c d e");
        let m = [seq("a b x"), seq("y d e")];
        let g = nway_align(&m, &r, DEFAULT_K);
        let s = derive_edits(&g, &m, &r).unwrap();
        assert_eq!(s.del_masks, vec![vec![true, true, false], vec![false, true, true]]);
        assert_eq!(s.plh_counts, vec![vec![0, 0, 3], vec![3, 0, 0]]);
        assert_eq!(s.y_cmb, plh_seq("a b _ d e"));
        assert_eq!(s.tok_fills, vec![Fill::new(2, b'c' as u32)]);
        let (out, prov) = replay(&s, &m).unwrap();
        assert_eq!(out, r);
        assert_eq!(
            prov,
            vec![
                Origin::Copy { n: 0, pos: 0 },
                Origin::Copy { n: 0, pos: 1 },
                Origin::Generated,
                Origin::Copy { n: 1, pos: 1 },
                Origin::Copy { n: 1, pos: 2 },
            ]
        );
    }

    #[test]
    fn gap_overflow_names_the_gap() {
        let r = TokenSeq::from_content(&vec![9; 70]).unwrap();
        let m = [TokenSeq::from_content(&[8]).unwrap()];
        let g = nway_align(&m, &r, DEFAULT_K);
        assert_eq!(
            derive_edits(&g, &m, &r),
            Err(EditError::GapOverflow {
                n: 0,
                gap: 0,
                needed: 70,
                k_max: K_MAX
            })
        );
    }

    #[test]
    fn replay_tags_the_failing_stage() {
        let r = seq("a b");
        let g = nway_align(&[r.clone()], &r, DEFAULT_K);
        let mut s = derive_edits(&g, &[r.clone()], &r).unwrap();
        s.plh_counts[0].pop();
        let err = replay(&s, &[r]).unwrap_err();
        assert!(matches!(err, EditError::Stage { stage: Stage::Insert, n: Some(0), .. }));
        assert!(err.to_string().starts_with("insert stage (match 0)"));
    }

    #[test]
    fn unk_surfaces_survive_the_round_trip() {
        let mut b = SeqBuilder::new();
        b.push(7);
        b.push_unk("zebra".into());
        let r = b.finish();
        let m = [TokenSeq::from_content(&[7]).unwrap()];
        let g = nway_align(&m, &r, DEFAULT_K);
        let s = derive_edits(&g, &m, &r).unwrap();
        assert_eq!(replay(&s, &m).unwrap().0, r);
    }

    #[test]
    fn lcs_keep_cases() {
        assert_eq!(lcs_keep_mask(&seq("a b"), &seq("a b")), vec![true, true]);
        assert_eq!(lcs_keep_mask(&seq("x y"), &seq("a b")), vec![false, false]);
        assert_eq!(lcs_keep_mask(&seq("a x b"), &seq("a b")), vec![true, false, true]);
    }

    #[test]
    fn placement_reaches_the_reference_skeleton() {
        let r = seq("a b c d e");
        assert_eq!(placement_counts(&seq("b d"), &r, 5), vec![1, 1, 1]);
        assert_eq!(placement_counts(&TokenSeq::empty(), &r, 5), vec![5]);
        // an unmatched token still takes a slot
        assert_eq!(placement_counts(&seq("a x e"), &r, 5), vec![0, 2, 0, 0]);
        let mut rng = Rng::new(9);
        for _ in 0..300 {
            let len = rng.below(10);
            let r: Vec<u32> = (0..len).map(|_| 10 + rng.below(4) as u32).collect();
            let keep: Vec<bool> = (0..len).map(|_| rng.bernoulli(0.5)).collect();
            let rs = TokenSeq::from_content(&r).unwrap();
            let sub = apply_deletion(&rs, &keep).unwrap();
            let counts = placement_counts(&sub, &rs, len);
            let filled = apply_insertion(&sub, &counts).unwrap();
            assert_eq!(filled.len(), len);
            // every kept token lands on an equal reference token
            assert_eq!(
                (0..len).filter(|&p| !filled.is_plh(p) && filled.get(p) == rs.get(p)).count(),
                sub.len()
            );
        }
    }
}
