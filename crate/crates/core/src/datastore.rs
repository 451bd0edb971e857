//! Datasets and weights on disk, plus the synthetic archetype corpus.
//!
//! Datasets are JSON lines. Weights live in a small binary container:
//!
//! ```text
//! ALIGNCAP-CKPT v1\n
//! <manifest JSON on one line>\n
//! <little-endian f64 payload>
//! ```
//!
//! The manifest lists every array with its shape and offset (in scalars)
//! into the payload.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codebook::{JointCodebook, TokenKind, TokenSeq};
use crate::emoparse::{render_acoustic_prompt, ClueCategory, ClueVocabulary};
use crate::error::{Error, Result};
use crate::lm::tensor::Mat;
use crate::lm::{LoraAdapter, LoraEntry, ModelConfig, ModelParams, ParamSet};

pub const CHECKPOINT_MAGIC: &str = "ALIGNCAP-CKPT v1";

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One utterance: its speech tokens (joint-codebook ids) and reference caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechCaptionPair {
    pub id: String,
    pub speech_tokens: Vec<u32>,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

impl SpeechCaptionPair {
    /// Returns the offending field name and a message.
    fn check(&self, codebook: Option<&JointCodebook>) -> std::result::Result<(), (&'static str, String)> {
        if self.speech_tokens.is_empty() {
            return Err(("speech_tokens", "must not be empty".into()));
        }
        if self.caption.trim().is_empty() {
            return Err(("caption", "must not be empty".into()));
        }
        if let Some(cb) = codebook {
            if let Some(&id) = self
                .speech_tokens
                .iter()
                .find(|&&id| cb.kind(id) != Some(TokenKind::Speech))
            {
                return Err(("speech_tokens", format!("id {id} is outside the speech range")));
            }
        }
        Ok(())
    }

    pub fn speech_seq(&self) -> TokenSeq {
        TokenSeq::new(self.speech_tokens.clone())
    }
}

fn load_pairs_impl(path: &Path, codebook: Option<&JointCodebook>) -> Result<Vec<SpeechCaptionPair>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpeechCaptionPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.check(codebook).map_err(|(field, message)| Error::InvalidRecord {
            path: path.to_path_buf(),
            line: i + 1,
            field,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads `pairs.jsonl`, preserving order.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SpeechCaptionPair>> {
    load_pairs_impl(path.as_ref(), None)
}

/// Like [`load_pairs`], also checking every speech token against `codebook`.
pub fn load_pairs_checked(path: impl AsRef<Path>, codebook: &JointCodebook) -> Result<Vec<SpeechCaptionPair>> {
    load_pairs_impl(path.as_ref(), Some(codebook))
}

pub fn save_pairs(path: impl AsRef<Path>, pairs: &[SpeechCaptionPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// One emotion archetype: an adjective and its acoustic clue words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Archetype {
    pub adjective: String,
    pub pitch: String,
    pub rhythm: String,
    pub volume: String,
}

impl Archetype {
    fn new(adjective: &str, pitch: &str, rhythm: &str, volume: &str) -> Self {
        Archetype {
            adjective: adjective.into(),
            pitch: pitch.into(),
            rhythm: rhythm.into(),
            volume: volume.into(),
        }
    }

    /// Clue phrases in caption order.
    pub fn clues(&self) -> Vec<String> {
        vec![
            self.adjective.clone(),
            format!("{} pitch", self.pitch),
            format!("{} rhythm", self.rhythm),
            format!("{} volume", self.volume),
        ]
    }

    pub fn caption(&self) -> String {
        format!(
            "{} speaker with {} pitch , {} rhythm and {} volume .",
            self.adjective, self.pitch, self.rhythm, self.volume
        )
    }
}

/// Eight archetypes covering every pitch/rhythm/volume combination.
pub fn default_archetypes() -> Vec<Archetype> {
    vec![
        Archetype::new("happy", "high", "fast", "loud"),
        Archetype::new("sad", "low", "slow", "soft"),
        Archetype::new("angry", "low", "fast", "loud"),
        Archetype::new("calm", "low", "slow", "loud"),
        Archetype::new("fearful", "high", "fast", "soft"),
        Archetype::new("surprised", "high", "slow", "loud"),
        Archetype::new("tired", "low", "fast", "soft"),
        Archetype::new("tender", "high", "slow", "soft"),
    ]
}

/// Generator settings for the synthetic archetype corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_items: usize,
    /// Size of the joint vocabulary; speech ids fill whatever text leaves over.
    pub total_vocab: usize,
    pub speech_len: usize,
    /// Probability that a speech token is replaced by a uniform draw.
    pub noise: f64,
    pub seed: u64,
    pub instruct: String,
    pub archetypes: Vec<Archetype>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_items: 250,
            total_vocab: 64,
            speech_len: 6,
            noise: 0.05,
            seed: 7,
            instruct: "describe the emotion".into(),
            archetypes: default_archetypes(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::Config("at least one archetype is required".into()));
        }
        if self.speech_len == 0 {
            return Err(Error::Config("speech_len must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} outside [0, 1]", self.noise)));
        }
        Ok(())
    }

    pub fn clue_vocabulary(&self) -> Result<ClueVocabulary> {
        let mut entries: Vec<(String, ClueCategory)> = Vec::new();
        for a in &self.archetypes {
            entries.push((a.adjective.clone(), ClueCategory::Adjective));
            entries.push((format!("{} pitch", a.pitch), ClueCategory::Pitch));
            entries.push((format!("{} rhythm", a.rhythm), ClueCategory::Rhythm));
            entries.push((format!("{} volume", a.volume), ClueCategory::Volume));
        }
        let mut seen = BTreeSet::new();
        entries.retain(|(p, _)| seen.insert(p.clone()));
        ClueVocabulary::new(entries)
    }

    /// Every string the corpus can put in front of the model.
    fn texts(&self) -> Vec<String> {
        let mut out = vec![self.instruct.clone()];
        for a in &self.archetypes {
            out.push(a.caption());
            out.push(render_acoustic_prompt(&a.clues()).rendered);
        }
        out
    }
}

/// Indices into the corpus for each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// 8:1:1 over a seeded shuffle; validation and test get `n / 10` each.
    pub fn eight_one_one(n: usize, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let tenth = n / 10;
        let test = order.split_off(n - tenth);
        let val = order.split_off(n - 2 * tenth);
        Split { train: order, val, test }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub codebook: JointCodebook,
    pub clues: ClueVocabulary,
    pub pairs: Vec<SpeechCaptionPair>,
    /// Archetype index of each pair.
    pub labels: Vec<usize>,
    pub split: Split,
}

impl SynthCorpus {
    pub fn subset(&self, idx: &[usize]) -> Vec<SpeechCaptionPair> {
        idx.iter().map(|&i| self.pairs[i].clone()).collect()
    }
}

/// Builds the corpus. Each archetype owns, per speech position, a primary and a
/// secondary centroid (drawn 70/30); with probability `noise` the token is
/// instead uniform over all centroids.
pub fn synth_dataset(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let texts = spec.texts();
    let probe = JointCodebook::from_texts(texts.iter().map(String::as_str), 0)?;
    let used = probe.total_size();
    if spec.total_vocab < used + 2 {
        return Err(Error::Config(format!(
            "total_vocab {} leaves fewer than 2 speech tokens after {used} text and special ids",
            spec.total_vocab
        )));
    }
    let speech_size = spec.total_vocab - used;
    let codebook = JointCodebook::from_texts(texts.iter().map(String::as_str), speech_size)?;
    let clues = spec.clue_vocabulary()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let emission: Vec<Vec<(usize, usize)>> = spec
        .archetypes
        .iter()
        .map(|_| {
            (0..spec.speech_len)
                .map(|_| {
                    let a = rng.random_range(0..speech_size);
                    let b = (a + 1 + rng.random_range(0..speech_size - 1)) % speech_size;
                    (a, b)
                })
                .collect()
        })
        .collect();

    let mut pairs = Vec::with_capacity(spec.n_items);
    let mut labels = Vec::with_capacity(spec.n_items);
    for n in 0..spec.n_items {
        let k = rng.random_range(0..spec.archetypes.len());
        let speech_tokens = emission[k]
            .iter()
            .map(|&(a, b)| {
                let c = if rng.random_bool(spec.noise) {
                    rng.random_range(0..speech_size)
                } else if rng.random_bool(0.7) {
                    a
                } else {
                    b
                };
                codebook.speech_id(c).expect("centroid in range")
            })
            .collect();
        pairs.push(SpeechCaptionPair {
            id: format!("synth-{n:05}"),
            speech_tokens,
            caption: spec.archetypes[k].caption(),
            transcript: None,
        });
        labels.push(k);
    }
    let split = Split::eight_one_one(spec.n_items, &mut rng);
    Ok(SynthCorpus {
        codebook,
        clues,
        pairs,
        labels,
        split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdapterMeta {
    rank: usize,
    scale: f64,
    targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    adapter: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lora: Option<AdapterMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    codebook: Option<serde_json::Value>,
    arrays: Vec<ArrayEntry>,
    scalars: usize,
}

/// Contents of a checkpoint file. A base-model checkpoint has `params`;
/// an adapter checkpoint has `adapter`; both may be present.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub params: Option<ModelParams>,
    pub adapter: Option<LoraAdapter>,
    pub codebook: Option<JointCodebook>,
}

impl Checkpoint {
    pub fn model(params: ModelParams) -> Self {
        Checkpoint {
            params: Some(params),
            ..Default::default()
        }
    }

    pub fn with_adapter(mut self, adapter: LoraAdapter) -> Self {
        self.adapter = Some(adapter);
        self
    }

    pub fn with_codebook(mut self, codebook: JointCodebook) -> Self {
        self.codebook = Some(codebook);
        self
    }

    /// Serialized form; identical inputs give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload: Vec<f64> = Vec::new();
        let mut push = |prefix: &str, name: String, m: &Mat| {
            arrays.push(ArrayEntry {
                name: format!("{prefix}{name}"),
                shape: m.shape(),
                offset: payload.len(),
            });
            payload.extend_from_slice(&m.data);
        };
        if let Some(p) = &self.params {
            for (name, m) in p.arrays() {
                push("", name, m);
            }
        }
        if let Some(a) = &self.adapter {
            for (name, m) in a.arrays() {
                push("adapter.", name, m);
            }
        }
        let manifest = Manifest {
            adapter: self.adapter.is_some(),
            model: self.params.as_ref().map(|p| p.config.clone()),
            lora: self.adapter.as_ref().map(|a| AdapterMeta {
                rank: a.rank,
                scale: a.scale,
                targets: a.entries.iter().map(|e| e.target.clone()).collect(),
            }),
            codebook: match &self.codebook {
                Some(cb) => Some(serde_json::from_str(&cb.to_json())?),
                None => None,
            },
            scalars: payload.len(),
            arrays,
        };
        let mut out = Vec::with_capacity(payload.len() * 8 + 256);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        serde_json::to_writer(&mut out, &manifest)?;
        out.push(b'\n');
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let header = read_line(&mut r).ok_or_else(|| Error::Truncated("missing header".into()))?;
        if header != CHECKPOINT_MAGIC.as_bytes() {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_MAGIC.into(),
                found: String::from_utf8_lossy(&header[..header.len().min(64)]).into_owned(),
            });
        }
        let manifest_line = read_line(&mut r).ok_or_else(|| Error::Truncated("missing manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(manifest_line)?;
        if r.len() < manifest.scalars * 8 {
            return Err(Error::Truncated(format!(
                "payload has {} bytes, manifest needs {}",
                r.len(),
                manifest.scalars * 8
            )));
        }
        let payload: Vec<f64> = r[..manifest.scalars * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut params = match &manifest.model {
            Some(cfg) => Some(ModelParams::zeros(cfg)?),
            None => None,
        };
        let mut adapter = manifest.lora.as_ref().map(|meta| LoraAdapter {
            rank: meta.rank,
            scale: meta.scale,
            entries: meta
                .targets
                .iter()
                .map(|t| LoraEntry {
                    target: t.clone(),
                    a: Mat::zeros(0, 0),
                    b: Mat::zeros(0, 0),
                })
                .collect(),
        });
        // adapter shapes come from the manifest; base shapes from the config
        if let Some(ad) = adapter.as_mut() {
            for e in ad.entries.iter_mut() {
                for (suffix, m) in [("lora_a", &mut e.a), ("lora_b", &mut e.b)] {
                    let name = format!("adapter.{}.{suffix}", e.target);
                    let entry = manifest
                        .arrays
                        .iter()
                        .find(|a| a.name == name)
                        .ok_or_else(|| Error::MissingArray(name.clone()))?;
                    *m = Mat::zeros(entry.shape[0], entry.shape[1]);
                }
            }
        }
        if let Some(p) = params.as_mut() {
            fill_arrays("", p.arrays_mut(), &manifest.arrays, &payload)?;
        }
        if let Some(a) = adapter.as_mut() {
            fill_arrays("adapter.", a.arrays_mut(), &manifest.arrays, &payload)?;
        }
        let codebook = match manifest.codebook {
            Some(v) => Some(JointCodebook::from_json(&v.to_string())?),
            None => None,
        };
        Ok(Checkpoint {
            params,
            adapter,
            codebook,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn fill_arrays(prefix: &str, arrays: Vec<(String, &mut Mat)>, entries: &[ArrayEntry], payload: &[f64]) -> Result<()> {
    for (name, m) in arrays {
        let full = format!("{prefix}{name}");
        let entry = entries
            .iter()
            .find(|a| a.name == full)
            .ok_or_else(|| Error::MissingArray(full.clone()))?;
        if entry.shape != m.shape() {
            return Err(Error::ShapeMismatch {
                name: full,
                expected: m.shape().to_vec(),
                found: entry.shape.to_vec(),
            });
        }
        let end = entry.offset + m.data.len();
        if end > payload.len() {
            return Err(Error::Truncated(format!("array {full} runs past the payload")));
        }
        m.data.copy_from_slice(&payload[entry.offset..end]);
    }
    Ok(())
}

fn read_line<'a>(r: &mut &'a [u8]) -> Option<&'a [u8]> {
    let nl = r.iter().position(|&b| b == b'\n')?;
    let (line, rest) = r.split_at(nl);
    *r = &rest[1..];
    Some(line)
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: Option<&ModelParams>,
    adapter: Option<&LoraAdapter>,
) -> Result<()> {
    Checkpoint {
        params: params.cloned(),
        adapter: adapter.cloned(),
        codebook: None,
    }
    .save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// Loads an adapter checkpoint and checks it fits `base`.
pub fn load_adapter_for(path: impl AsRef<Path>, base: &ModelParams) -> Result<LoraAdapter> {
    let path = path.as_ref();
    let ck = Checkpoint::load(path)?;
    let ad = ck
        .adapter
        .ok_or_else(|| Error::MissingArray(format!("adapter in {}", path.display())))?;
    ad.check_compatible(base)?;
    Ok(ad)
}

/// Reads a JSON config file into any of the settings structs.
pub fn load_config<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let s = Split::eight_one_one(10, &mut r);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = Split::eight_one_one(250, &mut r);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (200, 25, 25));
        let mut all: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..250).collect::<Vec<_>>());
    }

    #[test]
    fn default_corpus_fills_vocab() {
        let c = synth_dataset(&SynthSpec::default()).unwrap();
        assert_eq!(c.codebook.total_size(), 64);
        assert!(c.codebook.speech_size() >= 8);
        assert_eq!(c.pairs.len(), 250);
        for p in &c.pairs {
            assert!(p.check(Some(&c.codebook)).is_ok());
            let enc = c.codebook.encode_text(&p.caption);
            assert!(!enc.ids.contains(&c.codebook.special().unk));
        }
    }

    #[test]
    fn read_line_splits() {
        let mut r: &[u8] = b"ab\ncd\n";
        assert_eq!(read_line(&mut r), Some(&b"ab"[..]));
        assert_eq!(read_line(&mut r), Some(&b"cd"[..]));
        assert_eq!(read_line(&mut r), None);
    }
}
