//! Judge-scored preference pairs and preference training against a frozen reference.
//!
//! `cargo run --release --example preferences`

use aligncap::pipeline::{distill, gen_prefs, po_stage, pretrain_base, AlignTarget, Dataset, PipelineConfig};
use aligncap::prefopt::{MockJudge, PreferencePair};

fn main() -> aligncap::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.kd.max_steps = 300;
    cfg.po.max_steps = 200;
    let ds = Dataset::synth(&cfg.synth)?;
    let base = pretrain_base(&ds, &cfg)?.0;
    let adapter = distill(&base, &ds, &cfg, AlignTarget::Teacher)?.adapter;

    let judge = MockJudge::new(ds.clues.clone());
    let prefs = gen_prefs(&base, Some(&adapter), &ds, &cfg, &judge)?;
    println!("{} pairs; first:", prefs.len());
    if let Some(p) = prefs.first() {
        println!("  chosen   ({}) {}", p.chosen_score, p.chosen);
        println!("  rejected ({}) {}", p.rejected_score, p.rejected);
    }
    let pairs: Vec<PreferencePair> = prefs.iter().map(|r| r.to_pair(&ds.codebook)).collect();
    let run = po_stage(&base, &adapter, &pairs, &cfg.po)?;
    for r in run.log.iter().step_by(50) {
        println!("step {:>4} loss {:.4} margin {:.3} accuracy {:.3}", r.step, r.stats.loss, r.stats.margin, r.stats.accuracy);
    }
    Ok(())
}
