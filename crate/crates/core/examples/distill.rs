//! Distill a text-prompted teacher into a speech-prompted adapter on a synthetic corpus.
//!
//! `cargo run --release --example distill`

use aligncap::pipeline::{distill, generate_captions, pretrain_base, score_captions, AlignTarget, Dataset, PipelineConfig};

fn main() -> aligncap::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.kd.max_steps = 300;
    let ds = Dataset::synth(&cfg.synth)?;
    let (base, pre) = pretrain_base(&ds, &cfg)?;
    println!("base fit: loss {:.3} -> {:.3}", pre[0], pre[pre.len() - 1]);

    let run = distill(&base, &ds, &cfg, AlignTarget::Teacher)?;
    for r in run.log.iter().filter(|r| r.heldout_kl.is_some()) {
        println!("step {:>4} loss {:.4} held-out KL {:.4}", r.step, r.loss, r.heldout_kl.unwrap_or_default());
    }
    let caps = generate_captions(&base, Some(&run.adapter), &ds, &ds.split.test, &cfg)?;
    println!("{}  <-  {}", caps[0], ds.pairs[ds.split.test[0]].caption);
    let rep = score_captions(&ds, &ds.split.test, &caps)?;
    println!("test B@4 {:.3} CIDEr {:.3}", rep.bleu4, rep.cider);
    Ok(())
}
