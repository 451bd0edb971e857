//! A tiny decoder with a low-rank adapter: next-token distributions, greedy and beam search.

use aligncap::codebook::TokenSeq;
use aligncap::lm::{beam_decode, greedy_decode, DecodeConfig, Lm, LoraAdapter, LoraConfig, ModelConfig, ModelParams};

fn main() -> aligncap::Result<()> {
    let cfg = ModelConfig::desk(16);
    let base = ModelParams::init(&cfg, 1)?;
    let adapter = LoraAdapter::init(&base, &LoraConfig::default(), 2)?;
    let lm = Lm::new(&base, Some(&adapter))?;

    let prefix = TokenSeq::new(vec![1, 7, 9]);
    let dist = lm.next_token_dist(&prefix)?;
    println!("p(next) sums to {:.6}", dist.probs.iter().sum::<f64>());

    let dc = DecodeConfig {
        max_len: 6,
        beam_width: 1,
        eos: Some(2),
        stop_tokens: vec![],
    };
    println!("greedy {:?}", greedy_decode(&lm, &prefix, &dc)?.ids);
    for h in beam_decode(&lm, &prefix, &DecodeConfig { beam_width: 3, ..dc })? {
        println!("beam {:?} log p {:.3}", h.tokens.ids, h.logprob);
    }
    Ok(())
}
