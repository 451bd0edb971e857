//! Test-only oracles. Nothing here calls into the model's forward/backward code.
#![allow(dead_code)]

pub mod decode;
pub mod metrics;

use aligncap::lm::{LoraAdapter, ModelConfig, ModelParams, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line recomputation of the transformer, one position at a time,
/// returning log-probabilities (`PAD` excluded) for every position.
pub fn oracle_log_probs(p: &ModelParams, ids: &[u32]) -> Vec<Vec<f64>> {
    let c = &p.config;
    let d = c.d_model;
    let hd = d / c.n_heads;
    let mv = |w: &aligncap::lm::tensor::Mat, x: &[f64]| -> Vec<f64> {
        (0..w.rows)
            .map(|o| (0..w.cols).map(|i| w.data[o * w.cols + i] * x[i]).sum())
            .collect()
    };
    let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let ln = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i])
            .collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());

    let mut xs: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            (0..d)
                .map(|i| p.tok_emb.data[id as usize * d + i] + p.pos_emb.data[t * d + i])
                .collect()
        })
        .collect();
    for l in &p.layers {
        let h: Vec<Vec<f64>> = xs.iter().map(|x| ln(x, &l.ln1_g.data, &l.ln1_b.data)).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|v| add(&mv(&l.wq, v), &l.bq.data)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|v| add(&mv(&l.wk, v), &l.bk.data)).collect();
        let vv: Vec<Vec<f64>> = h.iter().map(|v| add(&mv(&l.wv, v), &l.bv.data)).collect();
        let mut new_xs = Vec::new();
        for t in 0..xs.len() {
            let mut ctx = vec![0.0; d];
            for head in 0..c.n_heads {
                let r = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = (0..=t)
                    .map(|s| {
                        q[t][r.clone()].iter().zip(&k[s][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for s in 0..=t {
                    let w = (scores[s] - m).exp() / z;
                    for j in r.clone() {
                        ctx[j] += w * vv[s][j];
                    }
                }
            }
            let x1 = add(&xs[t], &add(&mv(&l.wo, &ctx), &l.bo.data));
            let h2 = ln(&x1, &l.ln2_g.data, &l.ln2_b.data);
            let f: Vec<f64> = add(&mv(&l.w1, &h2), &l.b1.data).into_iter().map(gelu).collect();
            new_xs.push(add(&x1, &add(&mv(&l.w2, &f), &l.b2.data)));
        }
        xs = new_xs;
    }
    xs.iter()
        .map(|x| {
            let h = ln(x, &p.lnf_g.data, &p.lnf_b.data);
            let logits = add(&mv(&p.w_out, &h), &p.b_out.data);
            let pad = c.pad_id.map(|v| v as usize);
            let m = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != pad)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != pad)
                .map(|(_, v)| (v - m).exp())
                .sum();
            logits
                .iter()
                .enumerate()
                .map(|(i, v)| if Some(i) == pad { f64::NEG_INFINITY } else { v - m - z.ln() })
                .collect()
        })
        .collect()
}

/// Oracle for a merged adapter: `W + scale · A · B` written out entry by entry.
pub fn oracle_merge(p: &ModelParams, ad: &LoraAdapter) -> ModelParams {
    let mut out = p.clone();
    for e in &ad.entries {
        let w = out
            .arrays_mut()
            .into_iter()
            .find(|(n, _)| *n == e.target)
            .map(|(_, m)| m)
            .unwrap();
        for o in 0..w.rows {
            for i in 0..w.cols {
                let mut s = 0.0;
                for r in 0..ad.rank {
                    s += e.a.data[o * ad.rank + r] * e.b.data[r * w.cols + i];
                }
                w.data[o * w.cols + i] += ad.scale * s;
            }
        }
    }
    out
}

pub fn oracle_seq_logprob(p: &ModelParams, ctx: &[u32], resp: &[u32]) -> f64 {
    let mut ids = ctx.to_vec();
    ids.extend_from_slice(&resp[..resp.len() - 1]);
    let lp = oracle_log_probs(p, &ids);
    resp.iter()
        .enumerate()
        .map(|(n, &y)| lp[ctx.len() - 1 + n][y as usize])
        .sum()
}

/// Random small model shape with vocab ≤ 32, d ≤ 16, L ≤ 2.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let n_heads = [1, 2][rng.random_range(0..2)];
    let d_model = n_heads * [2, 4, 8][rng.random_range(0..3)];
    ModelConfig {
        vocab: rng.random_range(6..=32),
        d_model,
        n_heads,
        n_layers: rng.random_range(1..=2),
        d_ff: rng.random_range(2..=16),
        max_seq: 16,
        pad_id: Some(0),
    }
}

/// Replaces every parameter with a draw from `U(-s, s)` (gains centred at 1).
pub fn perturb_all<P: ParamSet>(p: &mut P, rng: &mut ChaCha8Rng, s: f64) {
    for (name, m) in p.arrays_mut() {
        let gain = name.ends_with("_g");
        for v in &mut m.data {
            *v = if gain { 1.0 } else { 0.0 } + rng.random_range(-s..s);
        }
    }
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(1..vocab as u32)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub const REL_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-4;

/// Central difference of `f` at scalar `i` of `p`.
pub fn central_diff<P: ParamSet + Clone>(p: &P, i: usize, f: impl Fn(&P) -> f64) -> f64 {
    let mut plus = p.clone();
    *plus.scalar_mut(i).unwrap() += FD_STEP;
    let mut minus = p.clone();
    *minus.scalar_mut(i).unwrap() -= FD_STEP;
    (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
}
