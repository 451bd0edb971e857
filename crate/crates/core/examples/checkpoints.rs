//! Datasets on disk and bit-exact checkpoints.

use aligncap::datastore::{load_adapter_for, save_checkpoint, Checkpoint};
use aligncap::lm::{LoraAdapter, LoraConfig, ModelConfig, ModelParams};
use aligncap::pipeline::{Dataset, PipelineConfig};

fn main() -> aligncap::Result<()> {
    let dir = std::env::temp_dir().join("aligncap-checkpoints-example");
    let ds = Dataset::synth(&PipelineConfig::default().synth)?;
    ds.save(&dir)?;
    let back = Dataset::load(&dir)?;
    println!("{} pairs round-tripped: {}", back.pairs.len(), back == ds);

    let base = ModelParams::init(&ModelConfig::desk(ds.codebook.total_size()), 0)?;
    let adapter = LoraAdapter::init(&base, &LoraConfig::default(), 1)?;
    let path = dir.join("model.ckpt");
    Checkpoint::model(base.clone())
        .with_adapter(adapter.clone())
        .with_codebook(ds.codebook.clone())
        .save(&path)?;
    let ck = Checkpoint::load(&path)?;
    println!("weights identical: {}", ck.params.as_ref() == Some(&base));

    let ad_path = dir.join("adapter.ckpt");
    save_checkpoint(&ad_path, None, Some(&adapter))?;
    println!("adapter fits base: {}", load_adapter_for(&ad_path, &base)? == adapter);
    Ok(())
}
