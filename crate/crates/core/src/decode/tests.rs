use super::*;
use crate::retrieval::levenshtein;
use crate::rng::Rng;

fn seq(s: &str) -> TokenSeq {
    TokenSeq::from_content(&s.bytes().map(u32::from).collect::<Vec<_>>()).unwrap()
}

fn cfg() -> DecodeConfig {
    DecodeConfig::default()
}

#[test]
fn expert_reproduces_reference_in_one_pass() {
    let matches = [seq("abcx"), seq("ydef")];
    let r = seq("abcdef");
    let pol = ExpertPolicy::new(&matches, &r);
    let (fp, prov, _) = first_pass(&seq("src"), &matches, &pol, &cfg()).unwrap();
    assert_eq!(fp, r);
    assert!(prov.iter().all(|o| o.is_copy()));
    let res = decode(&seq("src"), &matches, &pol, &cfg()).unwrap();
    assert_eq!(res.output, r);
    assert!(res.iterations <= 1);
    assert_eq!(replay_trace(&matches, &res.trace, K_MAX).unwrap(), (res.output, res.provenance));
}

#[test]
fn expert_single_match_fills_gaps() {
    let matches = [seq("ace")];
    let r = seq("abcde");
    let pol = ExpertPolicy::new(&matches, &r);
    let res = decode(&seq("q"), &matches, &pol, &cfg()).unwrap();
    assert_eq!(res.output, r);
    let copies: Vec<bool> = res.provenance.iter().map(|o| o.is_copy()).collect();
    assert_eq!(copies, [true, false, true, false, true]);
    assert_eq!(res.provenance[2], Origin::Copy { n: 0, pos: 1 });
}

#[test]
fn expert_refinement_repairs_a_wrong_hypothesis() {
    let r = seq("abcd");
    let pol = ExpertPolicy::new(&[], &r);
    let res = iterative_refine(&seq("axd"), &seq("q"), &pol, &cfg()).unwrap();
    assert_eq!(res.output, r);
    // the repair round, then a confirming no-op round
    assert_eq!(res.iterations, 2);
}

#[test]
fn expert_fixed_point() {
    let r = seq("abcd");
    let pol = ExpertPolicy::new(&[], &r);
    let res = iterative_refine(&r, &seq("q"), &pol, &cfg()).unwrap();
    assert_eq!(res.output, r);
    assert_eq!(res.iterations, 1);
}

#[test]
fn empty_match_set_stub_generates_everything() {
    let x = seq("hello");
    let res = decode(&x, &[], &StubPolicy::new(), &cfg()).unwrap();
    assert_eq!(res.output, x);
    assert!(res.provenance.iter().all(|o| *o == Origin::Generated));
    assert!(res.first_pass.is_empty());
}

#[test]
fn oscillating_stub_hits_the_cap() {
    let pol = OscillatingStub { a: 10, b: 11 };
    let res = decode(&seq("q"), &[seq("m")], &pol, &cfg()).unwrap();
    assert_eq!(res.iterations, 10);
    let c = DecodeConfig { max_iters: 3, ..cfg() };
    assert_eq!(decode(&seq("q"), &[], &pol, &c).unwrap().iterations, 3);
    let c = DecodeConfig { max_iters: 0, ..cfg() };
    assert_eq!(decode(&seq("q"), &[], &pol, &c).unwrap().iterations, 0);
}

#[test]
fn stub_length_mismatch_is_an_error() {
    let err = decode(&seq("q"), &[seq("ab"), seq("abc")], &StubPolicy::new(), &cfg()).unwrap_err();
    match err {
        DecodeError::Edit(EditError::Stage { stage: Stage::Combine, source, .. }) => {
            assert_eq!(*source, EditError::LengthMismatch { lengths: vec![2, 3] });
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn too_many_matches() {
    let m = vec![seq("a"); 4];
    assert!(matches!(
        decode(&seq("q"), &m, &StubPolicy::new(), &cfg()),
        Err(DecodeError::TooManyMatches { n: 4, n_max: 3 })
    ));
}

#[test]
fn penalty_shifts_zero_count() {
    // class 0 beats class 1 by 2 nats: chosen without penalty, lost with 3
    let mut v = vec![-30.0; 3 * 5];
    for g in 0..3 {
        v[g * 5] = 0.0;
        v[g * 5 + 1] = -2.0;
    }
    let l = PlhLogits::from_scores(1, 3, 5, v, vec![true; 3]).unwrap();
    assert_eq!(plh_argmax(&l, 0, 3, 0.0), [0, 0, 0]);
    assert_eq!(plh_argmax(&l, 0, 3, 3.0), [1, 1, 1]);
}

#[test]
fn token_argmax_ties_and_empty() {
    let c = [TokenChoice::new(9, -1.0), TokenChoice::new(7, -1.0), TokenChoice::new(8, -2.0)];
    assert_eq!(token_argmax(&c).0, 7);
    assert_eq!(token_argmax(&[]).0, UNK);
}

#[test]
fn noisy_trace_replays_and_differs() {
    let mut rng = Rng::new(5);
    let mut differs = 0;
    for i in 0..50 {
        let mut mk = |n: usize| {
            let v: Vec<u32> = (0..n).map(|_| 10 + rng.below(6) as u32).collect();
            TokenSeq::from_content(&v).unwrap()
        };
        let r = mk(8);
        let matches = [mk(6), mk(7)];
        let pol = NoisyExpert::new(ExpertPolicy::new(&matches, &r), 0.1, i, 16);
        let res = decode(&seq("q"), &matches, &pol, &cfg()).unwrap();
        assert_eq!(replay_trace(&matches, &res.trace, K_MAX).unwrap(), (res.output.clone(), res.provenance));
        differs += (res.output != r) as usize;
    }
    assert!(differs > 0);
}

#[test]
fn noise_degrades_output_on_average() {
    let mut means = Vec::new();
    for &p in &[0.0, 0.1, 0.3] {
        let mut rng = Rng::new(6);
        let mut total = 0;
        for i in 0..200 {
            let mut mk = |n: usize| {
                let v: Vec<u32> = (0..n).map(|_| 10 + rng.below(6) as u32).collect();
                TokenSeq::from_content(&v).unwrap()
            };
            let r = mk(10);
            let matches = [mk(8), mk(8)];
            let pol = NoisyExpert::new(ExpertPolicy::new(&matches, &r), p, i, 16);
            let out = decode(&seq("q"), &matches, &pol, &cfg()).unwrap().output;
            total += levenshtein(out.content(), r.content());
        }
        means.push(total as f64 / 200.0);
    }
    assert_eq!(means[0], 0.0);
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}

#[test]
fn realigned_first_pass_still_reaches_reference() {
    let matches = [seq("abcx"), seq("abyd")];
    let r = seq("abcd");
    let pol = ExpertPolicy::new(&matches, &r);
    let c = DecodeConfig { realign: true, ..cfg() };
    let res = decode(&seq("q"), &matches, &pol, &c).unwrap();
    assert_eq!(res.output, r);
    assert!(res.trace.iter().any(|t| matches!(t, StageRecord::Insert { realigned: true, .. })));
}
