//! Speech-emotion captioning alignment toolkit.
//!
//! The pipeline runs end to end at desk scale:
//!
//! 1. [`codebook`]: one token space for text words and quantized speech.
//! 2. [`emoparse`]: emotional clues pulled from captions and rendered into an
//!    acoustic prompt, then assembled with the caption and instruction into a
//!    prefix.
//! 3. [`lm`]: a small decoder-only transformer with low-rank adapters,
//!    greedy and beam decoding.
//! 4. [`kdalign`]: distillation from a text-conditioned teacher into a
//!    speech-conditioned student.
//! 5. [`prefopt`]: judge-scored preference pairs and a DPO objective against a
//!    frozen reference.
//! 6. [`evalkit`]: BLEU-4, ROUGE-L, METEOR-lite, CIDEr and judge prompts.
//! 7. [`datastore`]: JSON-lines datasets, synthetic corpora, checkpoints.
//! 8. [`pipeline`] and [`cli`]: the stages wired together, ablations,
//!    preference-size sweeps and the `aligncap` command.

pub mod cli;
pub mod codebook;
pub mod datastore;
pub mod kdalign;
pub mod emoparse;
pub mod error;
pub mod evalkit;
pub mod lm;
pub mod optim;
pub mod pipeline;
pub mod prefopt;

pub use error::{Error, Result};
