//! Joint token space: text words, then quantized speech frames.

use aligncap::codebook::{JointCodebook, ToyQuantizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aligncap::Result<()> {
    let cb = JointCodebook::from_texts(["a calm speaker with low pitch ."], 8)?;
    println!("{} text words, {} speech ids, {} total", cb.text_size(), cb.speech_size(), cb.total_size());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vq = ToyQuantizer::random(cb.speech_size(), 3, &mut rng)?;
    let frames: Vec<Vec<f32>> = vq.centroids()[..4].iter().map(|c| c.iter().map(|v| v + 0.01).collect()).collect();
    let speech = vq.quantize(&cb, &frames)?;
    println!("frames -> speech ids {:?}", speech.ids);

    let text = cb.encode_text("a calm speaker .");
    println!("text ids {:?} -> {:?}", text.ids, cb.decode_text(&text)?);
    println!("period tokens stop decoding: {:?}", cb.period_tokens());
    Ok(())
}
