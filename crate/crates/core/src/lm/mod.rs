//! Tiny decoder-only language model over the joint codebook.

mod decode;
mod forward;
mod params;
pub mod tensor;

use std::borrow::Cow;

pub use decode::{beam_decode, greedy_decode, DecodeConfig, Hypothesis};
pub use forward::{backward, forward, Forward};
pub use params::{
    Layer, LoraAdapter, LoraConfig, LoraEntry, LoraTarget, ModelConfig, ModelParams, ParamSet,
};

use crate::codebook::TokenSeq;
use crate::error::{Error, Result};
use tensor::log_softmax_excluding;

/// Probability vector over the vocabulary for one generation step.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDist {
    pub probs: Vec<f64>,
}

impl NextTokenDist {
    pub fn from_log_probs(log_probs: &[f64]) -> Self {
        NextTokenDist {
            probs: log_probs.iter().map(|v| v.exp()).collect(),
        }
    }

    /// Most probable id; the smallest id wins ties.
    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as u32
    }

    pub fn prob(&self, id: u32) -> f64 {
        self.probs[id as usize]
    }
}

/// Seeded model initialization.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    ModelParams::init(cfg, seed)
}

/// A model ready for inference: base weights with any adapter folded in.
#[derive(Debug, Clone)]
pub struct Lm<'a> {
    params: Cow<'a, ModelParams>,
}

impl<'a> Lm<'a> {
    pub fn new(base: &'a ModelParams, adapter: Option<&LoraAdapter>) -> Result<Self> {
        let params = match adapter {
            Some(a) => Cow::Owned(a.merge_into(base)?),
            None => Cow::Borrowed(base),
        };
        Ok(Lm { params })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn vocab(&self) -> usize {
        self.params.config.vocab
    }

    fn pad(&self) -> Option<usize> {
        self.params.config.pad_id.map(|p| p as usize)
    }

    /// Log-probabilities at every position of `ids` (`T × vocab`).
    pub fn log_probs_all(&self, ids: &[u32]) -> Result<Vec<f64>> {
        let fw = forward(&self.params, ids)?;
        let v = self.vocab();
        Ok((0..fw.len())
            .flat_map(|t| log_softmax_excluding(fw.logits_at(t, v), self.pad()))
            .collect())
    }

    /// Next-token log-probabilities after the last valid token.
    pub fn next_log_probs(&self, context: &TokenSeq) -> Result<Vec<f64>> {
        let ids = context.valid_ids();
        let fw = forward(&self.params, &ids)?;
        Ok(log_softmax_excluding(
            fw.logits_at(ids.len() - 1, self.vocab()),
            self.pad(),
        ))
    }

    pub fn next_token_dist(&self, context: &TokenSeq) -> Result<NextTokenDist> {
        Ok(NextTokenDist::from_log_probs(&self.next_log_probs(context)?))
    }

    /// `Σ_t log p(response_t | context ⊕ response_<t)` over valid positions.
    pub fn sequence_logprob(&self, context: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        Ok(self.sequence_logprob_grad(context, response, None)?.0)
    }

    /// Sequence log-probability and, when `weight` is given, the gradient of
    /// `weight · logprob` w.r.t. the merged parameters.
    pub fn sequence_logprob_grad(
        &self,
        context: &TokenSeq,
        response: &TokenSeq,
        weight: Option<f64>,
    ) -> Result<(f64, Option<ModelParams>)> {
        let ctx = context.valid_ids();
        let resp = response.valid_ids();
        if ctx.is_empty() {
            return Err(Error::Empty("context"));
        }
        if resp.is_empty() {
            return Err(Error::Empty("response"));
        }
        let mut ids = ctx.clone();
        ids.extend_from_slice(&resp[..resp.len() - 1]);
        let fw = forward(&self.params, &ids)?;
        let v = self.vocab();
        let start = ctx.len() - 1;
        let mut total = 0.0;
        let mut dlogits = weight.map(|_| vec![0.0; ids.len() * v]);
        for (n, &y) in resp.iter().enumerate() {
            let pos = start + n;
            let lp = log_softmax_excluding(fw.logits_at(pos, v), self.pad());
            total += lp[y as usize];
            if let (Some(dl), Some(w)) = (dlogits.as_mut(), weight) {
                let row = &mut dl[pos * v..(pos + 1) * v];
                for (i, (r, l)) in row.iter_mut().zip(&lp).enumerate() {
                    let onehot = if i == y as usize { 1.0 } else { 0.0 };
                    *r = w * (onehot - l.exp());
                }
            }
        }
        let grads = dlogits.map(|dl| backward(&self.params, &fw, &dl));
        Ok((total, grads))
    }
}

pub fn next_token_dist(
    params: &ModelParams,
    adapter: Option<&LoraAdapter>,
    context: &TokenSeq,
) -> Result<NextTokenDist> {
    Lm::new(params, adapter)?.next_token_dist(context)
}

pub fn sequence_logprob(
    params: &ModelParams,
    adapter: Option<&LoraAdapter>,
    context: &TokenSeq,
    response: &TokenSeq,
) -> Result<f64> {
    Lm::new(params, adapter)?.sequence_logprob(context, response)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelParams {
        let cfg = ModelConfig {
            vocab: 7,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 12,
            max_seq: 16,
            pad_id: Some(0),
        };
        init_model(&cfg, 11).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = toy().config;
        assert_eq!(init_model(&cfg, 1).unwrap(), init_model(&cfg, 1).unwrap());
        assert_ne!(init_model(&cfg, 1).unwrap(), init_model(&cfg, 2).unwrap());
        let bad = ModelConfig { d_model: 0, ..cfg };
        assert!(init_model(&bad, 1).is_err());
    }

    #[test]
    fn dist_sums_to_one_and_pad_is_zero() {
        let p = toy();
        let d = next_token_dist(&p, None, &TokenSeq::new(vec![1, 3, 4])).unwrap();
        assert_eq!(d.prob(0), 0.0);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_context_and_response_are_errors() {
        let p = toy();
        assert!(matches!(
            next_token_dist(&p, None, &TokenSeq::empty()),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            sequence_logprob(&p, None, &TokenSeq::new(vec![1]), &TokenSeq::empty()),
            Err(Error::Empty("response"))
        ));
    }

    #[test]
    fn padding_does_not_change_distribution() {
        let p = toy();
        let ctx = TokenSeq::new(vec![1, 5, 2]);
        let a = next_token_dist(&p, None, &ctx).unwrap();
        let b = next_token_dist(&p, None, &ctx.padded(5, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_b_adapter_is_identity() {
        let p = toy();
        let ad = LoraAdapter::init(&p, &LoraConfig::default(), 3).unwrap();
        let ctx = TokenSeq::new(vec![1, 6, 3, 2]);
        assert_eq!(
            next_token_dist(&p, None, &ctx).unwrap(),
            next_token_dist(&p, Some(&ad), &ctx).unwrap()
        );
        let resp = TokenSeq::new(vec![4, 5]);
        assert_eq!(
            sequence_logprob(&p, None, &ctx, &resp).unwrap(),
            sequence_logprob(&p, Some(&ad), &ctx, &resp).unwrap()
        );
    }

    #[test]
    fn single_token_response_is_log_prob() {
        let p = toy();
        let ctx = TokenSeq::new(vec![1, 2]);
        let d = next_token_dist(&p, None, &ctx).unwrap();
        let lp = sequence_logprob(&p, None, &ctx, &TokenSeq::new(vec![5])).unwrap();
        assert!((lp - d.prob(5).ln()).abs() < 1e-12);
    }

    #[test]
    fn logprob_chain_rule_additivity() {
        let p = toy();
        let ctx = TokenSeq::new(vec![1, 2]);
        let a = TokenSeq::new(vec![3, 4]);
        let b = TokenSeq::new(vec![5, 6, 3]);
        let whole = sequence_logprob(&p, None, &ctx, &a.concat(&b)).unwrap();
        let parts = sequence_logprob(&p, None, &ctx, &a).unwrap()
            + sequence_logprob(&p, None, &ctx.concat(&a), &b).unwrap();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn causality_prefix_logits_unchanged() {
        let p = toy();
        let lm = Lm::new(&p, None).unwrap();
        let short = lm.log_probs_all(&[1, 4, 5]).unwrap();
        let long = lm.log_probs_all(&[1, 4, 5, 6, 2, 3]).unwrap();
        assert_eq!(&long[..short.len()], &short[..]);
    }

    #[test]
    fn too_long_context_is_rejected() {
        let p = toy();
        let ctx = TokenSeq::new(vec![1; 17]);
        assert!(matches!(
            next_token_dist(&p, None, &ctx),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn adapter_shape_mismatch_names_array() {
        let p = toy();
        let mut ad = LoraAdapter::init(&p, &LoraConfig::default(), 3).unwrap();
        ad.entries[0].a = tensor::Mat::zeros(3, ad.rank);
        let err = ad.check_compatible(&p).unwrap_err();
        assert!(err.to_string().contains("layers.0.wq"), "{err}");
    }
}
