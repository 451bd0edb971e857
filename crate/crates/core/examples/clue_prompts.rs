//! Emotional clues pulled from a caption and rendered into an acoustic prompt.

use aligncap::codebook::JointCodebook;
use aligncap::emoparse::{assemble_prefix, extract_clues, render_acoustic_prompt, ClueVocabulary, PrefixPrompt};
use std::path::Path;

fn main() -> aligncap::Result<()> {
    let tsv = "sad\tadjective\nlow pitch\tpitch\nslow rhythm\trhythm\nsoft volume\tvolume\ntrembling\ttone\n";
    let vocab = ClueVocabulary::parse_tsv(tsv, Path::new("inline.tsv"))?;
    let caption = "sad speaker with low pitch , slow rhythm and soft volume .";

    let clues = extract_clues(&vocab, caption);
    println!("clues: {clues:?}");
    println!("prompt: {}", render_acoustic_prompt(&clues).rendered);

    let instruct = "describe the emotion";
    let cb = JointCodebook::from_texts([caption, instruct, "Feeling sad, low pitch, slow rhythm, and soft volume"], 4)?;
    let prefix = assemble_prefix(&PrefixPrompt::from_caption(&vocab, caption, instruct), &cb);
    println!("teacher prefix: {} ids", prefix.len());
    Ok(())
}
