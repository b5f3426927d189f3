//! One function per subcommand. Inputs are read and encoded sequentially
//! (so vocabulary ids do not depend on scheduling), the per-line work runs
//! on the rayon pool, and results come back in input order.

use rayon::prelude::*;
use serde_json::{json, Value};
use tmedit::alignment::{exact_nway_oracle, nway_align, AlignmentGraph};
use tmedit::decode::{decode, DecodeResult, ExpertPolicy, NoisyExpert, Policy, StubPolicy};
use tmedit::edits::{derive_edits_with, replay, EditScript, Fill, Origin};
use tmedit::metrics::{cover_noise, origin_ngram_stats_of};
use tmedit::realign::{realign, PlhLogits};
use tmedit::retrieval::{MatchSet, RetrieveOptions, TmEntry, TmIndex};
use tmedit::rollin::{gen_corpus, CopyFiller, Filler, GeometricInserter, Triple, UniformFiller};
use tmedit::{Rng, TokenSeq, Vocab, UNK};

use crate::config::Config;
use crate::error::CliError;
use crate::io::{read_lines, Encoder, Line};
use crate::{
    AlignArgs, Command, DecodeArgs, EditsArgs, RealignArgs, RetrieveArgs, RollinArgs, StatsArgs, SynthArgs, TmArgs,
};

pub fn dispatch(cmd: &Command, config: &mut Config, vocab: Option<Vocab>) -> Result<(&'static str, Vec<Value>), CliError> {
    // flags first, so validation and the header see the effective values
    match cmd {
        Command::Retrieve(a) => {
            if let Some(t) = a.tau {
                config.retrieval.tau = t;
            }
            if let Some(n) = a.nmax {
                config.retrieval.n_max = n;
            }
            config.retrieval.exclude_self |= a.exclude_self;
        }
        Command::Align(AlignArgs { k: Some(k), .. }) | Command::Edits(EditsArgs { k: Some(k), .. }) => {
            config.alignment.k = *k;
        }
        Command::Synth(a) => {
            if let Some(n) = a.n {
                config.synth.n = n;
            }
            if let Some(r) = a.r {
                config.synth.r = r;
            }
            if let Some(f) = a.f {
                config.synth.f = f;
            }
            if let Some(f) = &a.filler {
                config.synth.filler = f.clone();
            }
        }
        Command::Decode(a) => {
            config.decode.realign |= a.realign;
            config.retrieval.exclude_self |= a.exclude_self;
        }
        _ => {}
    }
    config.validate()?;
    let mut enc = Encoder::new(vocab, config.max_len);
    let c: &Config = config;
    Ok(match cmd {
        Command::BuildIndex(a) => ("build-index", build_index(a, c, &mut enc)?),
        Command::Retrieve(a) => ("retrieve", retrieve(a, c, &mut enc)?),
        Command::Align(a) => ("align", align(a, c, &mut enc)?),
        Command::Edits(a) => ("edits", edits(a, c, &mut enc)?),
        Command::Rollin(a) => ("rollin", rollin(a, c, &mut enc)?),
        Command::Synth(a) => ("synth", synth(a, c, &mut enc)?),
        Command::Realign(a) => ("realign", realign_cmd(a, c, &mut enc)?),
        Command::Decode(a) => ("decode", decode_cmd(a, c, &mut enc)?),
        Command::Stats(a) => ("stats", stats(a, c, &mut enc)?),
    })
}

fn load_tm(path: &str, enc: &mut Encoder) -> Result<Vec<TmEntry>, CliError> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(TmEntry {
                id: l.id()?.unwrap_or(i as u64),
                src: enc.field(l, &["src"])?,
                tgt: enc.field(l, &["tgt"])?,
            })
        })
        .collect()
}

fn retrieve_opts(c: &Config) -> RetrieveOptions {
    RetrieveOptions {
        tau: c.retrieval.tau,
        n_max: c.retrieval.n_max,
        exclude_id: None,
    }
}

/// Query ids for leave-one-out, `None` everywhere unless excluding self.
fn queries(lines: &[Line], seqs: Vec<TokenSeq>, c: &Config) -> Result<Vec<(TokenSeq, Option<u64>)>, CliError> {
    seqs.into_iter()
        .zip(lines.iter().enumerate())
        .map(|(s, (i, l))| {
            let id = if c.retrieval.exclude_self {
                Some(l.id()?.unwrap_or(i as u64))
            } else {
                None
            };
            Ok((s, id))
        })
        .collect()
}

fn matchset_json(ms: &MatchSet, enc: &Encoder) -> Value {
    Value::Array(
        ms.matches
            .iter()
            .map(|m| json!({ "id": m.id, "score": m.score, "src": enc.json(&m.src), "tgt": enc.json(&m.tgt) }))
            .collect(),
    )
}

fn build_index(a: &TmArgs, _c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let index = TmIndex::build(load_tm(&a.tm, enc)?);
    Ok(vec![json!({
        "entries": index.len(),
        "vocab_size": enc.vocab.len(),
        "buckets": index.bucket_sizes(),
    })])
}

fn retrieve(a: &RetrieveArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let index = TmIndex::build(load_tm(&a.tm, enc)?);
    let lines = read_lines(&a.queries)?;
    let seqs = lines
        .iter()
        .map(|l| enc.field(l, &["tokens", "text", "src"]))
        .collect::<Result<Vec<_>, _>>()?;
    let qs = queries(&lines, seqs, c)?;
    let sets = index.retrieve_all(&qs, &retrieve_opts(c));
    Ok(sets
        .iter()
        .zip(&lines)
        .map(|(ms, l)| {
            json!({
                "id": l.obj.get("id"),
                "query": enc.json(&ms.query),
                "matches": matchset_json(ms, enc),
            })
        })
        .collect())
}

/// Matches and reference of every line: references come from `--refs` or
/// the line's own "ref" field.
fn matches_and_refs(
    matches: &str,
    refs: Option<&str>,
    enc: &mut Encoder,
) -> Result<(Vec<Line>, Vec<(Vec<TokenSeq>, TokenSeq)>), CliError> {
    let lines = read_lines(matches)?;
    let ref_lines = refs.map(read_lines).transpose()?;
    if let Some(r) = &ref_lines {
        if r.len() != lines.len() {
            return Err(CliError::data(format!(
                "{} match lines but {} references",
                lines.len(),
                r.len()
            )));
        }
    }
    let mut items = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        let m = enc.list(l, "matches")?;
        let r = match &ref_lines {
            Some(r) => enc.field(&r[i], &["tokens", "text", "tgt", "ref"])?,
            None => enc.field(l, &["ref", "tgt"])?,
        };
        items.push((m, r));
    }
    Ok((lines, items))
}

fn graph_json(g: &AlignmentGraph) -> Value {
    let s = g.stats();
    json!({ "edges": g.edges, "covered": s.covered, "total_edges": s.total_edges })
}

fn align(a: &AlignArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let (lines, items) = matches_and_refs(&a.matches, a.refs.as_deref(), enc)?;
    let k = c.alignment.k;
    items
        .par_iter()
        .zip(&lines)
        .map(|((m, r), l)| {
            let g = if a.oracle {
                exact_nway_oracle(m, r).map_err(|e| l.err(e.to_string()))?
            } else {
                nway_align(m, r, k)
            };
            Ok(graph_json(&g))
        })
        .collect()
}

fn fills_json(fills: &[Fill], vocab: &Vocab) -> Value {
    fills
        .iter()
        .map(|f| {
            let tok = match (&f.surface, f.id) {
                (Some(s), UNK) => s.to_string(),
                (_, id) => vocab.token(id).to_string(),
            };
            json!({ "pos": f.pos, "token": tok })
        })
        .collect()
}

fn script_json(s: &EditScript, prov: &[Origin], enc: &Encoder) -> Value {
    let seqs = |v: &[TokenSeq]| v.iter().map(|s| enc.json(s)).collect::<Vec<_>>();
    json!({
        "del": s.del_masks,
        "plh": s.plh_counts,
        "cmb": s.cmb_keep,
        "tok": fills_json(&s.tok_fills, &enc.vocab),
        "y_del": seqs(&s.y_del),
        "y_plh": seqs(&s.y_plh),
        "y_cmb": enc.json(&s.y_cmb),
        "y_tok": enc.json(&s.y_tok),
        "provenance": prov,
    })
}

fn edits(a: &EditsArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let (lines, items) = matches_and_refs(&a.matches, a.refs.as_deref(), enc)?;
    let (k, k_max) = (c.alignment.k, c.alignment.k_max);
    let enc: &Encoder = enc;
    items
        .par_iter()
        .zip(&lines)
        .map(|((m, r), l)| {
            let g = nway_align(m, r, k);
            let s = derive_edits_with(&g, m, r, k_max).map_err(|e| l.err(e.to_string()))?;
            let (out, prov) = replay(&s, m).map_err(|e| CliError::Internal(format!("line {}: {e}", l.line)))?;
            if out != *r {
                return Err(CliError::Internal(format!("line {}: replay differs from the reference", l.line)));
            }
            Ok(script_json(&s, &prov, enc))
        })
        .collect()
}

fn rollin(a: &RollinArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let lines = read_lines(&a.corpus)?;
    let mut pairs = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        pairs.push((l.id()?.unwrap_or(i as u64), enc.field(l, &["src"])?, enc.field(l, &["tgt"])?));
    }
    // without a separate TM, each pair retrieves from the others
    let (entries, leave_one_out) = match &a.tm {
        Some(p) => (load_tm(p, enc)?, c.retrieval.exclude_self),
        None => (
            pairs
                .iter()
                .map(|(id, s, t)| TmEntry {
                    id: *id,
                    src: s.clone(),
                    tgt: t.clone(),
                })
                .collect(),
            true,
        ),
    };
    let index = TmIndex::build(entries);
    let qs: Vec<(TokenSeq, Option<u64>)> = pairs
        .iter()
        .map(|(id, s, _)| (s.clone(), leave_one_out.then_some(*id)))
        .collect();
    let sets = index.retrieve_all(&qs, &retrieve_opts(c));
    let triples: Vec<Triple> = pairs
        .into_iter()
        .zip(sets)
        .map(|((_, x, y), ms)| Triple {
            x,
            matches: ms.targets(),
            y_ref: y,
        })
        .collect();
    let filler = UniformFiller {
        vocab_size: enc.vocab.len(),
    };
    let inserter = GeometricInserter {
        mean: c.rollin.extra_mean,
        k_max: c.alignment.k_max,
    };
    let states = gen_corpus(&triples, &c.rollin_config(), &filler, &inserter).map_err(|e| CliError::data(e.to_string()))?;
    Ok(states.iter().map(|s| s.to_json(&enc.vocab)).collect())
}

fn synth(a: &SynthArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let lines = read_lines(&a.corpus)?;
    let ys = lines
        .iter()
        .map(|l| enc.field(l, &["tokens", "text", "tgt"]))
        .collect::<Result<Vec<_>, _>>()?;
    let s = &c.synth;
    let uniform = UniformFiller {
        vocab_size: enc.vocab.len(),
    };
    let enc: &Encoder = enc;
    Ok(ys
        .par_iter()
        .zip(&lines)
        .enumerate()
        .map(|(i, (y, l))| {
            let mut rng = Rng::derive(c.seed, i as u64);
            let copy = CopyFiller { source: y.clone() };
            let filler: &dyn Filler = if s.filler == "copy" { &copy } else { &uniform };
            let m = tmedit::rollin::synth_matches(y, s.n, s.r, s.f, filler, &mut rng);
            json!({
                "id": l.obj.get("id"),
                "ref": enc.json(y),
                "matches": m.iter().map(|t| enc.json(t)).collect::<Vec<_>>(),
            })
        })
        .collect())
}

fn logits_of(l: &Line, seqs: &[TokenSeq], normalize: bool) -> Result<PlhLogits, CliError> {
    let rows = l
        .obj
        .get("logits")
        .and_then(Value::as_array)
        .ok_or_else(|| l.err("\"logits\" must be an N × gaps × classes array"))?;
    if rows.len() != seqs.len() {
        return Err(l.err(format!("{} logit blocks for {} sequences", rows.len(), seqs.len())));
    }
    let (mut gaps, mut classes) = (None, None);
    let mut values = Vec::new();
    for block in rows {
        let block = block.as_array().ok_or_else(|| l.err("logit block is not an array"))?;
        if *gaps.get_or_insert(block.len()) != block.len() {
            return Err(l.err("logit blocks have different gap counts"));
        }
        for row in block {
            let row = row.as_array().ok_or_else(|| l.err("logit row is not an array"))?;
            if *classes.get_or_insert(row.len()) != row.len() {
                return Err(l.err("logit rows have different class counts"));
            }
            for v in row {
                values.push(v.as_f64().ok_or_else(|| l.err("logit is not a number"))?);
            }
        }
    }
    let (gaps, classes) = (gaps.unwrap_or(0), classes.unwrap_or(0));
    let lens: Vec<usize> = seqs.iter().map(TokenSeq::framed_len).collect();
    if let Some(s) = lens.iter().position(|&len| len - 1 > gaps) {
        return Err(l.err(format!("sequence {s} has more gaps than its logit block")));
    }
    let mask = PlhLogits::mask_for(&lens, gaps);
    let n = seqs.len();
    let r = if normalize {
        PlhLogits::from_scores(n, gaps, classes, values, mask)
    } else {
        PlhLogits::new(n, gaps, classes, values, mask)
    };
    r.map_err(|e| l.err(e.to_string()))
}

fn realign_cmd(a: &RealignArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let lines = read_lines(&a.logits)?;
    let seq_lines = a.seqs.as_deref().map(read_lines).transpose()?;
    if let Some(s) = &seq_lines {
        if s.len() != lines.len() {
            return Err(CliError::data(format!("{} logit lines but {} sequence lines", lines.len(), s.len())));
        }
    }
    let mut items = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        let seqs = match &seq_lines {
            Some(s) => enc.list(&s[i], "seqs")?,
            None => enc.list(l, "seqs")?,
        };
        items.push((logits_of(l, &seqs, a.normalize)?, seqs));
    }
    let cfg = c.realign_config();
    items
        .par_iter()
        .zip(&lines)
        .map(|((logits, seqs), l)| {
            let o = realign(logits, seqs, &cfg).map_err(|e| l.err(e.to_string()))?;
            Ok(json!({
                "plan": o.plan,
                "changes": o.changes,
                "loss_before": o.loss_before,
                "loss_after": o.loss_after,
                "kept_argmax": o.kept_argmax,
            }))
        })
        .collect()
}

enum PolicyKind {
    Expert,
    Noisy(f64),
    Stub,
}

fn parse_policy(s: &str) -> Result<PolicyKind, CliError> {
    match s {
        "expert" => Ok(PolicyKind::Expert),
        "stub" => Ok(PolicyKind::Stub),
        _ => {
            let p = s
                .strip_prefix("noisy:")
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|p| (0.0..=1.0).contains(p))
                .ok_or_else(|| CliError::usage(format!("unknown policy {s:?}; use expert, noisy:<p> or stub")))?;
            Ok(PolicyKind::Noisy(p))
        }
    }
}

/// Per-line seed for noisy decoding (splitmix64 finalizer).
fn line_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn result_json(r: &DecodeResult, ms: &MatchSet, id: Option<&Value>, enc: &Encoder) -> Value {
    json!({
        "id": id,
        "output": enc.json(&r.output),
        "provenance": r.provenance,
        "iterations": r.iterations,
        "matches": ms.matches.iter().map(|m| m.id).collect::<Vec<_>>(),
    })
}

fn decode_cmd(a: &DecodeArgs, c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    let kind = parse_policy(&a.policy)?;
    let index = TmIndex::build(load_tm(&a.tm, enc)?);
    let lines = read_lines(&a.src)?;
    let srcs = lines
        .iter()
        .map(|l| enc.field(l, &["tokens", "text", "src"]))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Option<Vec<TokenSeq>> = match (&kind, &a.refs) {
        (PolicyKind::Stub, None) => None,
        (_, Some(p)) => {
            let r = read_lines(p)?;
            if r.len() != lines.len() {
                return Err(CliError::data(format!("{} sources but {} references", lines.len(), r.len())));
            }
            Some(r.iter().map(|l| enc.field(l, &["tokens", "text", "tgt"])).collect::<Result<_, _>>()?)
        }
        (_, None) => {
            if lines.iter().any(|l| !l.has("tgt")) {
                return Err(CliError::usage("expert and noisy policies need --refs or a \"tgt\" field on every source"));
            }
            Some(lines.iter().map(|l| enc.field(l, &["tgt"])).collect::<Result<_, _>>()?)
        }
    };
    let qs = queries(&lines, srcs, c)?;
    let sets = index.retrieve_all(&qs, &retrieve_opts(c));
    let cfg = c.decode_config();
    let vocab_size = enc.vocab.len();
    let enc: &Encoder = enc;
    (0..lines.len())
        .into_par_iter()
        .map(|i| {
            let (x, ms, l) = (&qs[i].0, &sets[i], &lines[i]);
            let matches = ms.targets();
            let stub = StubPolicy::new();
            let expert;
            let noisy;
            let policy: &dyn Policy = match (&kind, &refs) {
                (PolicyKind::Stub, _) => &stub,
                (PolicyKind::Expert, Some(r)) => {
                    expert = ExpertPolicy::with_params(&matches, &r[i], c.alignment.k, c.alignment.k_max);
                    &expert
                }
                (PolicyKind::Noisy(p), Some(r)) => {
                    let e = ExpertPolicy::with_params(&matches, &r[i], c.alignment.k, c.alignment.k_max);
                    noisy = NoisyExpert::new(e, *p, line_seed(c.seed, i), vocab_size);
                    &noisy
                }
                _ => unreachable!("references are loaded for reference policies"),
            };
            let r = decode(x, &matches, policy, &cfg).map_err(|e| l.err(e.to_string()))?;
            Ok(result_json(&r, ms, l.obj.get("id"), enc))
        })
        .collect()
}

fn stats(a: &StatsArgs, _c: &Config, enc: &mut Encoder) -> Result<Vec<Value>, CliError> {
    if a.max_order == 0 {
        return Err(CliError::usage("--max-order must be at least 1"));
    }
    let lines = read_lines(&a.results)?;
    let ref_lines = read_lines(&a.refs)?;
    if lines.len() != ref_lines.len() {
        return Err(CliError::data(format!(
            "{} results but {} references",
            lines.len(),
            ref_lines.len()
        )));
    }
    let mut outs = Vec::with_capacity(lines.len());
    for l in &lines {
        let out = enc.field(l, &["output"])?;
        let prov: Vec<Origin> = serde_json::from_value(l.obj.get("provenance").cloned().unwrap_or(Value::Null))
            .map_err(|e| l.err(format!("bad \"provenance\": {e}")))?;
        if prov.len() != out.len() {
            return Err(l.err(format!("{} origins for {} tokens", prov.len(), out.len())));
        }
        outs.push((out, prov));
    }
    let refs = ref_lines
        .iter()
        .map(|l| enc.field(l, &["tokens", "text", "tgt", "ref"]))
        .collect::<Result<Vec<_>, _>>()?;
    let items: Vec<(&TokenSeq, &[Origin])> = outs.iter().map(|(o, p)| (o, p.as_slice())).collect();
    let origin = origin_ngram_stats_of(&items, &refs, a.max_order).map_err(|e| CliError::data(e.to_string()))?;
    let mut report = json!({ "sentences": lines.len(), "origin": origin });
    if let Some(p) = &a.matches {
        let ml = read_lines(p)?;
        if ml.len() != refs.len() {
            return Err(CliError::data(format!("{} match lines but {} references", ml.len(), refs.len())));
        }
        let mut cover = 0.0;
        let mut noise = 0.0;
        for (l, r) in ml.iter().zip(&refs) {
            let m = enc.list(l, "matches")?;
            let cn = cover_noise(r, &m);
            cover += cn.cover;
            noise += cn.noise;
        }
        let n = ml.len().max(1) as f64;
        report["cover_noise"] = json!({ "cover": cover / n, "noise": noise / n });
    }
    if let Some(p) = &a.hyp {
        let mut o = crate::io::Output::open(p)?;
        for (out, _) in &outs {
            o.write(&Value::String(enc.vocab.detokenize(out)))?;
        }
        o.finish()?;
    }
    Ok(vec![report])
}
