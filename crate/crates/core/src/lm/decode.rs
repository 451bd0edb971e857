use serde::{Deserialize, Serialize};

use super::Lm;
use crate::codebook::{JointCodebook, TokenSeq};
use crate::error::{Error, Result};

/// Decoding limits and stop rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub beam_width: usize,
    /// Ends a hypothesis and is not emitted.
    pub eos: Option<u32>,
    /// Tokens that end a hypothesis and are emitted (e.g. ones containing a period).
    #[serde(default)]
    pub stop_tokens: Vec<u32>,
}

impl DecodeConfig {
    pub fn for_codebook(cb: &JointCodebook, max_len: usize, beam_width: usize) -> Self {
        DecodeConfig {
            max_len,
            beam_width,
            eos: Some(cb.special().eos),
            stop_tokens: cb.period_tokens(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        Ok(())
    }

    fn is_eos(&self, id: u32) -> bool {
        self.eos == Some(id)
    }

    fn is_stop(&self, id: u32) -> bool {
        self.stop_tokens.contains(&id)
    }
}

/// Repeatedly appends the most probable token (smallest id on ties).
pub fn greedy_decode(lm: &Lm<'_>, prefix: &TokenSeq, cfg: &DecodeConfig) -> Result<TokenSeq> {
    cfg.validate()?;
    let mut ctx = TokenSeq::new(prefix.valid_ids());
    let mut out = TokenSeq::empty();
    for _ in 0..cfg.max_len {
        let next = lm.next_token_dist(&ctx)?.argmax();
        if cfg.is_eos(next) {
            break;
        }
        out.push(next);
        ctx.push(next);
        if cfg.is_stop(next) {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: TokenSeq,
    pub logprob: f64,
}

/// Length-bounded beam search over summed token log-probabilities.
///
/// Each step expands every live hypothesis by every token, keeps the
/// `beam_width` best expansions (ties: smaller token id, then earlier
/// hypothesis), and retires those ending in EOS or a stop token. Hypotheses
/// still live at `max_len` are retired as-is. Returns up to `beam_width`
/// retired hypotheses by descending log-probability, earlier retirement first
/// on ties.
pub fn beam_decode(lm: &Lm<'_>, prefix: &TokenSeq, cfg: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let base = prefix.valid_ids();
    if base.is_empty() {
        return Err(Error::Empty("prefix"));
    }
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_len {
        if live.is_empty() {
            break;
        }
        let mut cands: Vec<(f64, u32, usize)> = Vec::new();
        for (bi, (toks, score)) in live.iter().enumerate() {
            let mut ctx = base.clone();
            ctx.extend_from_slice(toks);
            let lp = lm.next_log_probs(&TokenSeq::new(ctx))?;
            for (id, &l) in lp.iter().enumerate() {
                if l.is_finite() {
                    cands.push((score + l, id as u32, bi));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(cfg.beam_width);

        let mut next_live = Vec::with_capacity(cands.len());
        for (score, id, bi) in cands {
            let mut toks = live[bi].0.clone();
            if cfg.is_eos(id) {
                finished.push(Hypothesis {
                    tokens: TokenSeq::new(toks),
                    logprob: score,
                });
                continue;
            }
            toks.push(id);
            if cfg.is_stop(id) {
                finished.push(Hypothesis {
                    tokens: TokenSeq::new(toks),
                    logprob: score,
                });
            } else {
                next_live.push((toks, score));
            }
        }
        live = next_live;
    }
    finished.extend(live.into_iter().map(|(t, s)| Hypothesis {
        tokens: TokenSeq::new(t),
        logprob: s,
    }));
    // stable sort keeps retirement order on ties
    finished.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    finished.truncate(cfg.beam_width);
    Ok(finished)
}
