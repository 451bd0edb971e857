//! Component ablation and preference-size sweep at reduced step counts.
//!
//! `cargo run --release --example ablation`

use aligncap::pipeline::{ablate, distill, gen_prefs, pretrain_base, sweep_prefs, AlignTarget, Dataset, PipelineConfig};
use aligncap::prefopt::MockJudge;

fn main() -> aligncap::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.kd.max_steps = 200;
    cfg.po.max_steps = 200;
    let ds = Dataset::synth(&cfg.synth)?;
    let base = pretrain_base(&ds, &cfg)?.0;
    let judge = MockJudge::new(ds.clues.clone());

    let table = ablate(&base, &ds, &cfg, &judge)?;
    println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "row", "B@4", "METEOR", "ROUGE-L", "CIDEr");
    for r in &table.rows {
        let s = r.scores;
        println!("{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", r.name, s.bleu4, s.meteor, s.rouge_l, s.cider);
    }

    let adapter = distill(&base, &ds, &cfg, AlignTarget::Teacher)?.adapter;
    let pool = gen_prefs(&base, Some(&adapter), &ds, &cfg, &judge)?;
    let s = pool.len() / 4;
    let curve = sweep_prefs(&base, &adapter, &ds, &cfg, &pool, &[0, s, 2 * s, 4 * s])?;
    for p in &curve.points {
        println!("{:>4} pairs: B@4 {:.4}", p.pairs_used, p.scores.bleu4);
    }
    Ok(())
}
