mod common;

use aligncap::codebook::TokenSeq;
use aligncap::lm::{
    beam_decode, greedy_decode, next_token_dist, sequence_logprob, DecodeConfig, Lm, LoraAdapter, LoraConfig,
    ModelConfig, ModelParams,
};
use common::decode::{enumerate, simulate_beam};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn hand_sized() -> ModelConfig {
    ModelConfig {
        vocab: 5,
        d_model: 4,
        n_heads: 1,
        n_layers: 1,
        d_ff: 4,
        max_seq: 8,
        pad_id: None,
    }
}

#[test]
fn single_token_distribution_matches_oracle() {
    let mut r = rng(5);
    let mut p = ModelParams::init(&hand_sized(), 3).unwrap();
    perturb_all(&mut p, &mut r, 0.8);
    for tok in 0..5u32 {
        let d = next_token_dist(&p, None, &TokenSeq::new(vec![tok])).unwrap();
        let o = &oracle_log_probs(&p, &[tok])[0];
        for (a, b) in d.probs.iter().zip(o) {
            assert!((a - b.exp()).abs() < 1e-12);
        }
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn adapter_forward_matches_oracle_merge() {
    let mut r = rng(6);
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        ..hand_sized()
    };
    let p = ModelParams::init(&cfg, 1).unwrap();
    let mut ad = LoraAdapter::init(&p, &LoraConfig::default(), 2).unwrap();
    perturb_all(&mut ad, &mut r, 0.3);
    let ctx = [1u32, 3, 2, 4];
    let d = next_token_dist(&p, Some(&ad), &TokenSeq::new(ctx.to_vec())).unwrap();
    let o = oracle_log_probs(&oracle_merge(&p, &ad), &ctx);
    for (a, b) in d.probs.iter().zip(&o[3]) {
        assert!((a - b.exp()).abs() < 1e-12);
    }
}

#[test]
fn sequence_logprob_matches_oracle() {
    let mut r = rng(8);
    for _ in 0..20 {
        let cfg = random_config(&mut r);
        let p = ModelParams::init(&cfg, r.random()).unwrap();
        let ctx = random_tokens(&mut r, cfg.vocab, 3);
        let resp = random_tokens(&mut r, cfg.vocab, 4);
        let got = sequence_logprob(&p, None, &TokenSeq::new(ctx.clone()), &TokenSeq::new(resp.clone())).unwrap();
        let want = oracle_seq_logprob(&p, &ctx, &resp);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn padded_response_positions_are_ignored() {
    let p = ModelParams::init(&ModelConfig { pad_id: Some(0), ..hand_sized() }, 2).unwrap();
    let ctx = TokenSeq::new(vec![1, 2]);
    let resp = TokenSeq::new(vec![3, 4]);
    let a = sequence_logprob(&p, None, &ctx, &resp).unwrap();
    let b = sequence_logprob(&p, None, &ctx.padded(3, 0), &resp.padded(2, 0)).unwrap();
    assert_eq!(a, b);
}

fn argmax_smallest(v: &[f64]) -> u32 {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best as u32
}

#[test]
fn greedy_matches_stepwise_argmax_trace() {
    let mut r = rng(21);
    for _ in 0..10 {
        let cfg = ModelConfig { pad_id: Some(0), ..hand_sized() };
        let mut p = ModelParams::init(&cfg, r.random()).unwrap();
        perturb_all(&mut p, &mut r, 1.0);
        let dc = DecodeConfig {
            max_len: 5,
            beam_width: 1,
            eos: Some(2),
            stop_tokens: vec![4],
        };
        let prefix = vec![1u32, 3];
        let out = greedy_decode(&Lm::new(&p, None).unwrap(), &TokenSeq::new(prefix.clone()), &dc).unwrap();

        let mut ctx = prefix.clone();
        let mut trace = Vec::new();
        for _ in 0..5 {
            let lp = oracle_log_probs(&p, &ctx);
            let next = argmax_smallest(lp.last().unwrap());
            if next == 2 {
                break;
            }
            trace.push(next);
            ctx.push(next);
            if next == 4 {
                break;
            }
        }
        assert_eq!(out.ids, trace);
    }
}

#[test]
fn greedy_edge_cases() {
    let cfg = ModelConfig { pad_id: Some(0), ..hand_sized() };
    let mut p = ModelParams::init(&cfg, 1).unwrap();
    let lm = Lm::new(&p, None).unwrap();
    let prefix = TokenSeq::new(vec![1]);
    let one = DecodeConfig {
        max_len: 1,
        beam_width: 1,
        eos: None,
        stop_tokens: vec![],
    };
    let out = greedy_decode(&lm, &prefix, &one).unwrap();
    assert_eq!(out.ids, vec![next_token_dist(&p, None, &prefix).unwrap().argmax()]);

    p.b_out.data[2] = 1e3;
    let lm = Lm::new(&p, None).unwrap();
    let eos_first = DecodeConfig {
        max_len: 6,
        eos: Some(2),
        ..one
    };
    assert!(greedy_decode(&lm, &prefix, &eos_first).unwrap().is_empty());
}

#[test]
fn greedy_ignores_constant_logit_shift() {
    let mut r = rng(4);
    for _ in 0..20 {
        let cfg = random_config(&mut r);
        let p = ModelParams::init(&cfg, r.random()).unwrap();
        let mut shifted = p.clone();
        shifted.b_out.data.iter_mut().for_each(|b| *b += 7.25);
        let dc = DecodeConfig {
            max_len: 6,
            beam_width: 1,
            eos: Some(2),
            stop_tokens: vec![],
        };
        let prefix = TokenSeq::new(random_tokens(&mut r, cfg.vocab, 2));
        let a = greedy_decode(&Lm::new(&p, None).unwrap(), &prefix, &dc).unwrap();
        let b = greedy_decode(&Lm::new(&shifted, None).unwrap(), &prefix, &dc).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn beam_one_equals_greedy_on_random_models() {
    let mut r = rng(1234);
    for _ in 0..100 {
        let cfg = random_config(&mut r);
        let p = ModelParams::init(&cfg, r.random()).unwrap();
        let lm = Lm::new(&p, None).unwrap();
        let dc = DecodeConfig {
            max_len: 5,
            beam_width: 1,
            eos: Some(2),
            stop_tokens: vec![3],
        };
        let prefix = TokenSeq::new(random_tokens(&mut r, cfg.vocab, 2));
        let g = greedy_decode(&lm, &prefix, &dc).unwrap();
        let b = beam_decode(&lm, &prefix, &dc).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].tokens, g);
    }
}

#[test]
fn beam_matches_enumeration_vocab5_len3() {
    let mut r = rng(77);
    for _ in 0..10 {
        let mut p = ModelParams::init(&hand_sized(), r.random()).unwrap();
        perturb_all(&mut p, &mut r, 1.0);
        let lm = Lm::new(&p, None).unwrap();
        let dc = DecodeConfig {
            max_len: 3,
            beam_width: 3,
            eos: None,
            stop_tokens: vec![],
        };
        let prefix = [1u32, 2];
        let all = enumerate(&p, &prefix, &dc);
        assert_eq!(all.len(), 125);
        assert!((all.iter().map(|(_, s)| s.exp()).sum::<f64>() - 1.0).abs() < 1e-9);

        let beam = beam_decode(&lm, &TokenSeq::new(prefix.to_vec()), &dc).unwrap();
        let sim = simulate_beam(&p, &prefix, &dc);
        assert_eq!(beam.len(), 3);
        for (h, (t, s)) in beam.iter().zip(&sim) {
            assert_eq!(&h.tokens.ids, t);
            assert!((h.logprob - s).abs() < 1e-10);
        }
        // beam results are real sequences with their exact scores, never above the optimum
        let best = all.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        for h in &beam {
            let (_, s) = all.iter().find(|(t, _)| *t == h.tokens.ids).unwrap();
            assert!((h.logprob - s).abs() < 1e-10);
            assert!(h.logprob <= best + 1e-12);
        }

        // a beam as wide as the tree is exhaustive search
        let wide = DecodeConfig { beam_width: 125, ..dc.clone() };
        let full = beam_decode(&lm, &TokenSeq::new(prefix.to_vec()), &wide).unwrap();
        let mut sorted = all.clone();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (h, (t, s)) in full.iter().zip(&sorted).take(10) {
            assert!((h.logprob - s).abs() < 1e-10);
            let _ = t;
        }
    }
}

#[test]
fn beam_with_stop_tokens_matches_simulation() {
    let mut r = rng(78);
    for _ in 0..10 {
        let mut p = ModelParams::init(&ModelConfig { pad_id: Some(0), ..hand_sized() }, r.random()).unwrap();
        perturb_all(&mut p, &mut r, 1.0);
        let lm = Lm::new(&p, None).unwrap();
        let dc = DecodeConfig {
            max_len: 3,
            beam_width: 3,
            eos: Some(2),
            stop_tokens: vec![4],
        };
        let beam = beam_decode(&lm, &TokenSeq::new(vec![1]), &dc).unwrap();
        let sim = simulate_beam(&p, &[1], &dc);
        assert_eq!(beam.len(), sim.len());
        for (h, (t, s)) in beam.iter().zip(&sim) {
            assert_eq!(&h.tokens.ids, t);
            assert!((h.logprob - s).abs() < 1e-10);
        }
    }
}

#[test]
fn uniform_model_orders_by_token_id() {
    let p = ModelParams::zeros(&hand_sized()).unwrap();
    let lm = Lm::new(&p, None).unwrap();
    let dc = DecodeConfig {
        max_len: 1,
        beam_width: 3,
        eos: None,
        stop_tokens: vec![],
    };
    let beams = beam_decode(&lm, &TokenSeq::new(vec![1]), &dc).unwrap();
    let firsts: Vec<u32> = beams.iter().map(|h| h.tokens.ids[0]).collect();
    assert_eq!(firsts, vec![0, 1, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_distribution_normalized(seed in 0u64..1000, ctx in proptest::collection::vec(1u32..12, 1..10)) {
        let cfg = ModelConfig { vocab: 12, d_model: 8, n_heads: 2, n_layers: 2, d_ff: 8, max_seq: 16, pad_id: Some(0) };
        let p = ModelParams::init(&cfg, seed).unwrap();
        let d = next_token_dist(&p, None, &TokenSeq::new(ctx)).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(d.probs.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(d.probs[0], 0.0);
    }

    #[test]
    fn prop_causality(seed in 0u64..1000, ctx in proptest::collection::vec(1u32..12, 1..8),
                      tail in proptest::collection::vec(1u32..12, 1..6)) {
        let cfg = ModelConfig { vocab: 12, d_model: 8, n_heads: 2, n_layers: 2, d_ff: 8, max_seq: 16, pad_id: Some(0) };
        let p = ModelParams::init(&cfg, seed).unwrap();
        let lm = Lm::new(&p, None).unwrap();
        let short = lm.log_probs_all(&ctx).unwrap();
        let mut long_ids = ctx.clone();
        long_ids.extend(tail);
        let long = lm.log_probs_all(&long_ids).unwrap();
        prop_assert_eq!(&long[..short.len()], &short[..]);
    }

    #[test]
    fn prop_zero_adapter_identity(seed in 0u64..1000, ctx in proptest::collection::vec(1u32..12, 1..6),
                                  resp in proptest::collection::vec(1u32..12, 1..4)) {
        let cfg = ModelConfig { vocab: 12, d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_seq: 16, pad_id: Some(0) };
        let p = ModelParams::init(&cfg, seed).unwrap();
        let ad = LoraAdapter::init(&p, &LoraConfig::default(), seed + 1).unwrap();
        let (a, b) = (Lm::new(&p, None).unwrap(), Lm::new(&p, Some(&ad)).unwrap());
        let (c, r) = (TokenSeq::new(ctx), TokenSeq::new(resp));
        prop_assert_eq!(a.next_token_dist(&c).unwrap(), b.next_token_dist(&c).unwrap());
        prop_assert_eq!(a.sequence_logprob(&c, &r).unwrap(), b.sequence_logprob(&c, &r).unwrap());
        let dc = DecodeConfig { max_len: 4, beam_width: 2, eos: Some(2), stop_tokens: vec![] };
        prop_assert_eq!(greedy_decode(&a, &c, &dc).unwrap(), greedy_decode(&b, &c, &dc).unwrap());
        prop_assert_eq!(beam_decode(&a, &c, &dc).unwrap(), beam_decode(&b, &c, &dc).unwrap());
    }
}
