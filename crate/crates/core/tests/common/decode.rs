//! Decoding oracles: exhaustive enumeration and a replay of beam pruning.

use aligncap::lm::{DecodeConfig, ModelParams};

use super::oracle_log_probs;

/// Every sequence reachable within `max_len` steps, with its oracle log-probability.
/// Sequences end at EOS (not emitted), a stop token (emitted) or the length bound.
pub fn enumerate(p: &ModelParams, prefix: &[u32], dc: &DecodeConfig) -> Vec<(Vec<u32>, f64)> {
    let mut out = Vec::new();
    let mut frontier = vec![(Vec::<u32>::new(), 0.0)];
    for depth in 0..dc.max_len {
        let mut next = Vec::new();
        for (toks, score) in frontier {
            let mut ids = prefix.to_vec();
            ids.extend(&toks);
            let lp = oracle_log_probs(p, &ids).pop().unwrap();
            for (id, l) in lp.iter().enumerate() {
                if !l.is_finite() {
                    continue;
                }
                let id = id as u32;
                let s = score + l;
                if Some(id) == dc.eos {
                    out.push((toks.clone(), s));
                    continue;
                }
                let mut t = toks.clone();
                t.push(id);
                if dc.stop_tokens.contains(&id) || depth + 1 == dc.max_len {
                    out.push((t, s));
                } else {
                    next.push((t, s));
                }
            }
        }
        frontier = next;
    }
    out
}

/// Beam pruning replayed over the enumerated tree: keep the `k` best prefixes per depth.
pub fn simulate_beam(p: &ModelParams, prefix: &[u32], dc: &DecodeConfig) -> Vec<(Vec<u32>, f64)> {
    let k = dc.beam_width;
    let mut live = vec![(Vec::<u32>::new(), 0.0)];
    let mut finished = Vec::new();
    for _ in 0..dc.max_len {
        if live.is_empty() {
            break;
        }
        let mut cands = Vec::new();
        for (bi, (toks, score)) in live.iter().enumerate() {
            let mut ids = prefix.to_vec();
            ids.extend(toks);
            let lp = oracle_log_probs(p, &ids).pop().unwrap();
            for (id, l) in lp.iter().enumerate() {
                if l.is_finite() {
                    cands.push((score + l, id as u32, bi));
                }
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(k);
        let mut nl = Vec::new();
        for (s, id, bi) in cands {
            let mut t: Vec<u32> = live[bi].0.clone();
            if Some(id) == dc.eos {
                finished.push((t, s));
                continue;
            }
            t.push(id);
            if dc.stop_tokens.contains(&id) {
                finished.push((t, s));
            } else {
                nl.push((t, s));
            }
        }
        live = nl;
    }
    finished.extend(live);
    finished.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    finished.truncate(k);
    finished
}
