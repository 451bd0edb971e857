//! Joint text/speech token space.
//!
//! Layout of the id space, low to high:
//!
//! ```text
//! [0, 5)                         special tokens (PAD, BOS, EOS, SEP, UNK)
//! [5, 5 + text_size)             text words, in `text_vocab` order
//! [5 + text_size, total_size)    speech tokens, one per quantizer centroid
//! ```

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_SPECIAL: usize = 5;

/// Ids of the reserved tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub sep: u32,
    pub unk: u32,
}

impl Default for SpecialIds {
    fn default() -> Self {
        SpecialIds {
            pad: 0,
            bos: 1,
            eos: 2,
            sep: 3,
            unk: 4,
        }
    }
}

impl SpecialIds {
    fn as_array(&self) -> [u32; NUM_SPECIAL] {
        [self.pad, self.bos, self.eos, self.sep, self.unk]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Special,
    Text,
    Speech,
}

/// Shared vocabulary over text words and speech tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCodebook {
    text_vocab: Vec<String>,
    index: HashMap<String, u32>,
    speech_size: usize,
    special: SpecialIds,
}

#[derive(Serialize, Deserialize)]
struct CodebookDoc {
    text_vocab: Vec<String>,
    speech_size: usize,
    special: SpecialIds,
}

impl JointCodebook {
    /// Builds a codebook from an ordered word list. Duplicate words and
    /// words containing whitespace are rejected.
    pub fn new(text_vocab: Vec<String>, speech_size: usize) -> Result<Self> {
        Self::with_special(text_vocab, speech_size, SpecialIds::default())
    }

    fn with_special(text_vocab: Vec<String>, speech_size: usize, special: SpecialIds) -> Result<Self> {
        let mut ids = special.as_array();
        ids.sort_unstable();
        if ids != [0, 1, 2, 3, 4] {
            return Err(Error::Config(format!(
                "special ids must be a permutation of 0..{NUM_SPECIAL}, got {:?}",
                special.as_array()
            )));
        }
        let mut index = HashMap::with_capacity(text_vocab.len());
        for (i, word) in text_vocab.iter().enumerate() {
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary word {word:?}")));
            }
            if index.insert(word.clone(), (NUM_SPECIAL + i) as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary word {word:?}")));
            }
        }
        Ok(JointCodebook {
            text_vocab,
            index,
            speech_size,
            special,
        })
    }

    /// Collects the sorted set of whitespace units across `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, speech_size: usize) -> Result<Self> {
        let mut words: Vec<String> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .map(str::to_owned)
            .collect();
        words.sort();
        words.dedup();
        Self::new(words, speech_size)
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn text_size(&self) -> usize {
        self.text_vocab.len()
    }

    pub fn speech_size(&self) -> usize {
        self.speech_size
    }

    pub fn text_vocab(&self) -> &[String] {
        &self.text_vocab
    }

    pub fn total_size(&self) -> usize {
        NUM_SPECIAL + self.text_vocab.len() + self.speech_size
    }

    pub fn speech_offset(&self) -> u32 {
        (NUM_SPECIAL + self.text_vocab.len()) as u32
    }

    pub fn kind(&self, id: u32) -> Option<TokenKind> {
        let id = id as usize;
        if id < NUM_SPECIAL {
            Some(TokenKind::Special)
        } else if id < NUM_SPECIAL + self.text_vocab.len() {
            Some(TokenKind::Text)
        } else if id < self.total_size() {
            Some(TokenKind::Speech)
        } else {
            None
        }
    }

    pub fn text_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn speech_id(&self, centroid: usize) -> Option<u32> {
        (centroid < self.speech_size).then(|| self.speech_offset() + centroid as u32)
    }

    pub fn speech_index(&self, id: u32) -> Option<usize> {
        match self.kind(id) {
            Some(TokenKind::Speech) => Some((id - self.speech_offset()) as usize),
            _ => None,
        }
    }

    /// Surface form of a text or special token.
    pub fn token_str(&self, id: u32) -> Option<&str> {
        let s = self.special;
        match self.kind(id)? {
            TokenKind::Special if id == s.pad || id == s.bos || id == s.eos => Some(""),
            TokenKind::Special if id == s.sep => Some("<sep>"),
            TokenKind::Special => Some("<unk>"),
            TokenKind::Text => Some(&self.text_vocab[id as usize - NUM_SPECIAL]),
            TokenKind::Speech => None,
        }
    }

    /// Text tokens whose surface form contains a period; generating one ends decoding.
    pub fn period_tokens(&self) -> Vec<u32> {
        self.text_vocab
            .iter()
            .enumerate()
            .filter(|(_, w)| w.contains('.'))
            .map(|(i, _)| (NUM_SPECIAL + i) as u32)
            .collect()
    }

    /// Word-level tokenization. Unknown words become UNK; no BOS/EOS is added.
    pub fn encode_text(&self, text: &str) -> TokenSeq {
        TokenSeq::new(
            text.split_whitespace()
                .map(|w| self.text_id(w).unwrap_or(self.special.unk))
                .collect(),
        )
    }

    /// Renders text and special ids; PAD, BOS and EOS render as nothing.
    pub fn decode_text(&self, seq: &TokenSeq) -> Result<String> {
        let mut words = Vec::with_capacity(seq.len());
        for &id in &seq.ids {
            match self.kind(id) {
                None => {
                    return Err(Error::TokenOutOfRange {
                        id,
                        vocab: self.total_size(),
                    })
                }
                Some(TokenKind::Speech) => return Err(Error::SpeechTokenInText { id }),
                _ => {
                    let w = self.token_str(id).unwrap_or_default();
                    if !w.is_empty() {
                        words.push(w);
                    }
                }
            }
        }
        Ok(words.join(" "))
    }

    pub fn pad_pair(&self, a: &TokenSeq, b: &TokenSeq) -> (TokenSeq, TokenSeq) {
        pad_pair(a, b, self.special.pad)
    }

    /// Checks that every id is inside the vocabulary.
    pub fn validate(&self, seq: &TokenSeq) -> Result<()> {
        match seq.ids.iter().find(|&&id| id as usize >= self.total_size()) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab: self.total_size(),
            }),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = CodebookDoc {
            text_vocab: self.text_vocab.clone(),
            speech_size: self.speech_size,
            special: self.special,
        };
        serde_json::to_string_pretty(&doc).expect("codebook serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CodebookDoc = serde_json::from_str(s)?;
        Self::with_special(doc.text_vocab, doc.speech_size, doc.special)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Token ids with a validity mask; `false` marks padding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        let mask = vec![true; ids.len()];
        TokenSeq { ids, mask }
    }

    pub fn empty() -> Self {
        TokenSeq::default()
    }

    /// Pairs ids with an explicit mask; masked-out positions must hold `pad`.
    pub fn with_mask(ids: Vec<u32>, mask: Vec<bool>, pad: u32) -> Result<Self> {
        if ids.len() != mask.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: mask.len(),
            });
        }
        if ids.iter().zip(&mask).any(|(&id, &m)| !m && id != pad) {
            return Err(Error::Config("masked position does not hold PAD".into()));
        }
        Ok(TokenSeq { ids, mask })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Ids at unmasked positions, in order.
    pub fn valid_ids(&self) -> Vec<u32> {
        self.ids
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn push(&mut self, id: u32) {
        self.ids.push(id);
        self.mask.push(true);
    }

    pub fn extend_from(&mut self, other: &TokenSeq) {
        self.ids.extend_from_slice(&other.ids);
        self.mask.extend_from_slice(&other.mask);
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    /// Appends `n` masked PAD positions.
    pub fn padded(&self, n: usize, pad: u32) -> TokenSeq {
        let mut out = self.clone();
        out.ids.extend(std::iter::repeat_n(pad, n));
        out.mask.extend(std::iter::repeat_n(false, n));
        out
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(ids: Vec<u32>) -> Self {
        TokenSeq::new(ids)
    }
}

/// Right-pads the shorter sequence with masked PAD so both share a length.
pub fn pad_pair(a: &TokenSeq, b: &TokenSeq, pad: u32) -> (TokenSeq, TokenSeq) {
    let n = a.len().max(b.len());
    (a.padded(n - a.len(), pad), b.padded(n - b.len(), pad))
}

/// Nearest-centroid quantizer producing speech tokens from feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyQuantizer {
    centroids: Vec<Vec<f32>>,
    dim: usize,
}

const VQ_MAGIC: &str = "TOYVQ1";

impl ToyQuantizer {
    pub fn new(centroids: Vec<Vec<f32>>) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::Config("quantizer needs at least 2 centroids".into()));
        }
        let dim = centroids[0].len();
        if dim == 0 {
            return Err(Error::Config("centroid dimension must be positive".into()));
        }
        for c in &centroids {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("quantizer centroid".into()));
            }
        }
        Ok(ToyQuantizer { centroids, dim })
    }

    /// Standard-normal centroids from a seeded generator.
    pub fn random(speech_size: usize, dim: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let centroids = (0..speech_size)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        Self::new(centroids)
    }

    pub fn speech_size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    /// Index of the closest centroid; the lowest index wins ties.
    pub fn nearest(&self, frame: &[f32]) -> Result<usize> {
        if frame.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: frame.len(),
            });
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d: f64 = c
                .iter()
                .zip(frame)
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        Ok(best)
    }

    pub fn quantize(&self, codebook: &JointCodebook, frames: &[Vec<f32>]) -> Result<TokenSeq> {
        if codebook.speech_size() != self.speech_size() {
            return Err(Error::DimensionMismatch {
                expected: codebook.speech_size(),
                got: self.speech_size(),
            });
        }
        let ids = frames
            .iter()
            .map(|f| self.nearest(f).map(|i| codebook.speech_offset() + i as u32))
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSeq::new(ids))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{VQ_MAGIC} {} {}", self.speech_size(), self.dim)?;
        for c in &self.centroids {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::Truncated(format!("quantizer header: {e}")))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != VQ_MAGIC {
            return Err(Error::VersionMismatch {
                expected: VQ_MAGIC.into(),
                found: header.trim_end().into(),
            });
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad quantizer header field {s:?}")))
        };
        let (n, dim) = (parse(parts[1])?, parse(parts[2])?);
        let mut buf = vec![0u8; n * dim * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Truncated(format!("expected {n}x{dim} f32 centroid rows")))?;
        let centroids = buf
            .chunks_exact(dim * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            })
            .collect();
        Self::new(centroids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}
