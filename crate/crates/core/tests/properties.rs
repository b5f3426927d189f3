use proptest::prelude::*;

use tmedit::alignment::{exact_nway_oracle, nway_align, DEFAULT_K};
use tmedit::decode::{decode, replay_trace, DecodeConfig, ExpertPolicy, NoisyExpert};
use tmedit::edits::{derive_edits, replay, Origin};
use tmedit::metrics::{cover_noise, origin_ngram_stats};
use tmedit::retrieval::similarity;
use tmedit::seq::RESERVED;
use tmedit::{TokenSeq, K_MAX};

fn seq(max_len: usize, vocab: u32) -> impl Strategy<Value = TokenSeq> {
    prop::collection::vec(0..vocab, 0..=max_len)
        .prop_map(|v| TokenSeq::from_content(&v.iter().map(|t| t + RESERVED as u32).collect::<Vec<_>>()).unwrap())
}

fn instance(max_n: usize, max_len: usize, vocab: u32) -> impl Strategy<Value = (Vec<TokenSeq>, TokenSeq)> {
    (prop::collection::vec(seq(max_len, vocab), 0..=max_n), seq(max_len, vocab))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn alignment_is_valid_and_replays((m, y) in instance(3, 12, 5)) {
        let g = nway_align(&m, &y, DEFAULT_K);
        prop_assert!(g.validate(&m, &y).is_ok());
        let s = derive_edits(&g, &m, &y).unwrap();
        let (out, prov) = replay(&s, &m).unwrap();
        prop_assert_eq!(&out, &y);
        let copies = prov.iter().filter(|o| o.is_copy()).count();
        prop_assert_eq!(copies, g.stats().covered);
    }

    #[test]
    fn heuristic_never_beats_oracle((m, y) in instance(3, 6, 3)) {
        let h = nway_align(&m, &y, DEFAULT_K).stats().covered;
        let o = exact_nway_oracle(&m, &y).unwrap().stats().covered;
        prop_assert!(h <= o);
    }

    #[test]
    fn similarity_properties(a in seq(10, 4), b in seq(10, 4)) {
        let s = similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, similarity(&b, &a));
        prop_assert_eq!(similarity(&a, &a), 1.0);
    }

    #[test]
    fn expert_decoding_is_exact_in_one_pass((m, y) in instance(3, 10, 5), x in seq(6, 5)) {
        let res = decode(&x, &m, &ExpertPolicy::new(&m, &y), &DecodeConfig::default()).unwrap();
        prop_assert_eq!(&res.output, &y);
        // without matches decoding starts from the empty sequence and the
        // refinement rounds generate everything
        if !m.is_empty() {
            prop_assert_eq!(&res.first_pass, &y);
            prop_assert_eq!(res.iterations, 1);
        }
        for (p, o) in res.provenance.iter().enumerate() {
            if let Origin::Copy { n, pos } = *o {
                prop_assert_eq!(m[n].get(pos), y.get(p));
            }
        }
    }

    #[test]
    fn noisy_decoding_replays((m, y) in instance(3, 8, 5), p in 0.0f64..0.5, seed in any::<u64>()) {
        let pol = NoisyExpert::new(ExpertPolicy::new(&m, &y), p, seed, RESERVED + 5);
        let res = decode(&y, &m, &pol, &DecodeConfig::default()).unwrap();
        prop_assert!(res.iterations <= 10);
        let (out, prov) = replay_trace(&m, &res.trace, K_MAX).unwrap();
        prop_assert_eq!(out, res.output);
        prop_assert_eq!(prov, res.provenance);
    }

    #[test]
    fn metric_shares_partition((m, y) in instance(2, 8, 4)) {
        let res = decode(&y, &m, &ExpertPolicy::new(&m, &y), &DecodeConfig::default()).unwrap();
        let stats = origin_ngram_stats(std::slice::from_ref(&res), std::slice::from_ref(&y), 3).unwrap();
        for os in &stats.orders {
            let total: usize = os.classes.iter().map(|c| c.total).sum();
            let matched: usize = os.classes.iter().map(|c| c.matched).sum();
            prop_assert_eq!(total, os.overall.total);
            prop_assert_eq!(matched, os.overall.matched);
            if total > 0 {
                let s: f64 = os.classes.iter().filter_map(|c| c.share).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                // a perfect output matches every n-gram
                prop_assert_eq!(matched, total);
            }
        }
        let cn = cover_noise(&y, &m);
        prop_assert!((0.0..=1.0).contains(&cn.cover) && (0.0..=1.0).contains(&cn.noise));
    }
}
