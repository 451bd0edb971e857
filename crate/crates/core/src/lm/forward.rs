//! Forward pass with activation cache, and its hand-written backward pass.
//!
//! The block is pre-norm:
//!
//! ```text
//! x   = tok_emb[id] + pos_emb[t]
//! x  += Wo · attn(LN1(x)) + bo        (causal, multi-head)
//! x  += W2 · gelu(W1 · LN2(x) + b1) + b2
//! logits = W_out · LNf(x) + b_out
//! ```

use super::params::ModelParams;
use super::tensor::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, LnCache,
};
use crate::error::{Error, Result};

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `H × T × T` attention weights, zero above the diagonal.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
}

/// Activations of one forward pass over a sequence of valid tokens.
pub struct Forward {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Vec<f64>,
    /// `T × vocab` logits; row `t` predicts the token after position `t`.
    pub logits: Vec<f64>,
}

impl Forward {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn logits_at(&self, t: usize, vocab: usize) -> &[f64] {
        &self.logits[t * vocab..(t + 1) * vocab]
    }
}

pub fn forward(p: &ModelParams, ids: &[u32]) -> Result<Forward> {
    let cfg = &p.config;
    let (t, d, v) = (ids.len(), cfg.d_model, cfg.vocab);
    if t == 0 {
        return Err(Error::Empty("context"));
    }
    if t > cfg.max_seq {
        return Err(Error::SequenceTooLong {
            len: t,
            max: cfg.max_seq,
        });
    }
    let mut x = vec![0.0; t * d];
    for (ti, &id) in ids.iter().enumerate() {
        if id as usize >= v {
            return Err(Error::TokenOutOfRange { id, vocab: v });
        }
        let e = p.tok_emb.row(id as usize);
        let pe = p.pos_emb.row(ti);
        for i in 0..d {
            x[ti * d + i] = e[i] + pe[i];
        }
    }

    let (h, dh) = (cfg.n_heads, cfg.head_dim());
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut caches = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (h1, ln1) = layer_norm(&x, t, d, &layer.ln1_g, &layer.ln1_b);
        let q = linear(&h1, t, &layer.wq, Some(&layer.bq));
        let k = linear(&h1, t, &layer.wk, Some(&layer.bk));
        let vv = linear(&h1, t, &layer.wv, Some(&layer.bv));

        let mut probs = vec![0.0; h * t * t];
        let mut ctx = vec![0.0; t * d];
        for hi in 0..h {
            let off = hi * dh;
            for ti in 0..t {
                let row = &mut probs[(hi * t + ti) * t..(hi * t + ti + 1) * t];
                let qr = &q[ti * d + off..ti * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for si in 0..=ti {
                    let kr = &k[si * d + off..si * d + off + dh];
                    let s: f64 = qr.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt;
                    row[si] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for r in row.iter_mut().take(ti + 1) {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                for r in row.iter_mut().take(ti + 1) {
                    *r /= sum;
                }
                let cr = &mut ctx[ti * d + off..ti * d + off + dh];
                for si in 0..=ti {
                    let w = row[si];
                    let vr = &vv[si * d + off..si * d + off + dh];
                    for j in 0..dh {
                        cr[j] += w * vr[j];
                    }
                }
            }
        }
        let attn = linear(&ctx, t, &layer.wo, Some(&layer.bo));
        for (xi, a) in x.iter_mut().zip(&attn) {
            *xi += a;
        }

        let (h2, ln2) = layer_norm(&x, t, d, &layer.ln2_g, &layer.ln2_b);
        let f_pre = linear(&h2, t, &layer.w1, Some(&layer.b1));
        let f_act: Vec<f64> = f_pre.iter().map(|&z| gelu(z)).collect();
        let ff = linear(&f_act, t, &layer.w2, Some(&layer.b2));
        for (xi, f) in x.iter_mut().zip(&ff) {
            *xi += f;
        }

        caches.push(LayerCache {
            ln1,
            h1,
            q,
            k,
            v: vv,
            probs,
            ctx,
            ln2,
            h2,
            f_pre,
            f_act,
        });
    }

    let (hf, lnf) = layer_norm(&x, t, d, &p.lnf_g, &p.lnf_b);
    let logits = linear(&hf, t, &p.w_out, Some(&p.b_out));
    Ok(Forward {
        ids: ids.to_vec(),
        layers: caches,
        lnf,
        hf,
        logits,
    })
}

/// Gradients of a scalar loss w.r.t. every parameter, given `dL/dlogits` (`T × vocab`).
pub fn backward(p: &ModelParams, fw: &Forward, dlogits: &[f64]) -> ModelParams {
    let cfg = &p.config;
    let (t, d) = (fw.len(), cfg.d_model);
    let (h, dh) = (cfg.n_heads, cfg.head_dim());
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut g = p.zeros_like();

    let dhf = linear_backward(&fw.hf, t, &p.w_out, dlogits, &mut g.w_out, Some(&mut g.b_out));
    let mut dx = layer_norm_backward(&fw.lnf, t, d, &p.lnf_g, &dhf, &mut g.lnf_g, &mut g.lnf_b);

    for (li, (layer, c)) in p.layers.iter().zip(&fw.layers).enumerate().rev() {
        let gl = &mut g.layers[li];

        // feed-forward branch
        let df_act = linear_backward(&c.f_act, t, &layer.w2, &dx, &mut gl.w2, Some(&mut gl.b2));
        let df_pre: Vec<f64> = df_act
            .iter()
            .zip(&c.f_pre)
            .map(|(g, &z)| g * gelu_grad(z))
            .collect();
        let dh2 = linear_backward(&c.h2, t, &layer.w1, &df_pre, &mut gl.w1, Some(&mut gl.b1));
        let dx_ln2 = layer_norm_backward(&c.ln2, t, d, &layer.ln2_g, &dh2, &mut gl.ln2_g, &mut gl.ln2_b);
        for (a, b) in dx.iter_mut().zip(&dx_ln2) {
            *a += b;
        }

        // attention branch
        let dctx = linear_backward(&c.ctx, t, &layer.wo, &dx, &mut gl.wo, Some(&mut gl.bo));
        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut dp = vec![0.0; t];
        for hi in 0..h {
            let off = hi * dh;
            for ti in 0..t {
                let row = &c.probs[(hi * t + ti) * t..(hi * t + ti + 1) * t];
                let dcr = &dctx[ti * d + off..ti * d + off + dh];
                let mut dot = 0.0;
                for si in 0..=ti {
                    let vr = &c.v[si * d + off..si * d + off + dh];
                    dp[si] = dcr.iter().zip(vr).map(|(a, b)| a * b).sum();
                    dot += row[si] * dp[si];
                    let dvr = &mut dv[si * d + off..si * d + off + dh];
                    for j in 0..dh {
                        dvr[j] += row[si] * dcr[j];
                    }
                }
                for si in 0..=ti {
                    let ds = row[si] * (dp[si] - dot) * inv_sqrt;
                    if ds == 0.0 {
                        continue;
                    }
                    for j in 0..dh {
                        dq[ti * d + off + j] += ds * c.k[si * d + off + j];
                        dk[si * d + off + j] += ds * c.q[ti * d + off + j];
                    }
                }
            }
        }
        let mut dh1 = linear_backward(&c.h1, t, &layer.wq, &dq, &mut gl.wq, Some(&mut gl.bq));
        let dh1_k = linear_backward(&c.h1, t, &layer.wk, &dk, &mut gl.wk, Some(&mut gl.bk));
        let dh1_v = linear_backward(&c.h1, t, &layer.wv, &dv, &mut gl.wv, Some(&mut gl.bv));
        for ((a, b), c2) in dh1.iter_mut().zip(&dh1_k).zip(&dh1_v) {
            *a += b + c2;
        }
        let dx_ln1 = layer_norm_backward(&c.ln1, t, d, &layer.ln1_g, &dh1, &mut gl.ln1_g, &mut gl.ln1_b);
        for (a, b) in dx.iter_mut().zip(&dx_ln1) {
            *a += b;
        }
    }

    for (ti, &id) in fw.ids.iter().enumerate() {
        let src = &dx[ti * d..(ti + 1) * d];
        for (e, s) in g.tok_emb.row_mut(id as usize).iter_mut().zip(src) {
            *e += s;
        }
        for (e, s) in g.pos_emb.row_mut(ti).iter_mut().zip(src) {
            *e += s;
        }
    }
    g
}
