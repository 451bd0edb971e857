//! Caption metrics and judge prompts.

use aligncap::evalkit::{build_aes_prompt, evaluate, AesKind, BleuOptions, EvalCorpus, EvalItem, SynonymMap};

fn main() -> aligncap::Result<()> {
    let corpus = EvalCorpus::from(vec![
        EvalItem::new("a sad speaker with low pitch", ["the sad speaker has a low pitch"]),
        EvalItem::new("an angry loud voice", ["angry speaker with loud volume", "an angry loud voice"]),
    ]);
    let mut syn = SynonymMap::new();
    syn.entry("voice".into()).or_default().insert("speaker".into());
    syn.entry("speaker".into()).or_default().insert("voice".into());

    for opts in [BleuOptions::default(), BleuOptions { sentence_mean: true, ..Default::default() }] {
        let r = evaluate(&corpus, &syn, opts)?;
        println!(
            "sentence_mean={:<5} B@4 {:.4} METEOR {:.4} ROUGE-L {:.4} CIDEr {:.4}",
            opts.sentence_mean, r.bleu4, r.meteor, r.rouge_l, r.cider
        );
    }
    println!("\n{}", build_aes_prompt(AesKind::ClueOverlap, "a sad voice", "a sad speaker with low pitch"));
    Ok(())
}
