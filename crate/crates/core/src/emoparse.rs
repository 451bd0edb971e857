//! Emotional-clue extraction and prompt construction.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codebook::{JointCodebook, TokenSeq};
use crate::error::{Error, Result};

const MAX_PHRASE_WORDS: usize = 4;
const TEMPLATE_HEAD: &str = "Feeling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClueCategory {
    Tone,
    Intonation,
    Pitch,
    Rhythm,
    Volume,
    Adjective,
}

impl ClueCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClueCategory::Tone => "tone",
            ClueCategory::Intonation => "intonation",
            ClueCategory::Pitch => "pitch",
            ClueCategory::Rhythm => "rhythm",
            ClueCategory::Volume => "volume",
            ClueCategory::Adjective => "adjective",
        }
    }
}

impl fmt::Display for ClueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClueCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tone" => ClueCategory::Tone,
            "intonation" => ClueCategory::Intonation,
            "pitch" => ClueCategory::Pitch,
            "rhythm" => ClueCategory::Rhythm,
            "volume" => ClueCategory::Volume,
            "adjective" => ClueCategory::Adjective,
            other => return Err(Error::Config(format!("unknown clue category {other:?}"))),
        })
    }
}

/// Lexicon of emotional-clue phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClueVocabulary {
    entries: Vec<(String, ClueCategory)>,
    by_phrase: HashMap<Vec<String>, usize>,
}

impl ClueVocabulary {
    pub fn new(entries: impl IntoIterator<Item = (String, ClueCategory)>) -> Result<Self> {
        let mut out = Vec::new();
        let mut by_phrase = HashMap::new();
        for (phrase, cat) in entries {
            let words: Vec<String> = phrase.split_whitespace().map(str::to_owned).collect();
            if words.is_empty() || words.len() > MAX_PHRASE_WORDS {
                return Err(Error::Config(format!(
                    "clue phrase {phrase:?} must have 1 to {MAX_PHRASE_WORDS} words"
                )));
            }
            if phrase != phrase.to_lowercase() {
                return Err(Error::Config(format!("clue phrase {phrase:?} is not lowercase")));
            }
            let canonical = words.join(" ");
            if by_phrase.insert(words, out.len()).is_some() {
                return Err(Error::Config(format!("duplicate clue phrase {canonical:?}")));
            }
            out.push((canonical, cat));
        }
        if out.is_empty() {
            return Err(Error::Empty("clue vocabulary"));
        }
        Ok(ClueVocabulary {
            entries: out,
            by_phrase,
        })
    }

    pub fn entries(&self) -> &[(String, ClueCategory)] {
        &self.entries
    }

    pub fn category(&self, phrase: &str) -> Option<ClueCategory> {
        let words: Vec<String> = phrase.split_whitespace().map(str::to_owned).collect();
        self.by_phrase.get(&words).map(|&i| self.entries[i].1)
    }

    /// Parses `phrase<TAB>category` lines; blank lines and `#` comments are skipped.
    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, cat) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `phrase<TAB>category`".into(),
            })?;
            let cat = cat.trim().parse().map_err(|e: Error| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push((phrase.trim().to_owned(), cat));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(p, c)| format!("{p}\t{c}\n"))
            .collect()
    }
}

/// Lowercases a word and trims surrounding punctuation.
pub(crate) fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Clue phrases found in `caption`, in order of first occurrence.
///
/// Matching is greedy left to right; at each word the longest vocabulary
/// phrase starting there is taken and the scan resumes after it.
pub fn extract_clues(vocab: &ClueVocabulary, caption: &str) -> Vec<String> {
    let words: Vec<String> = caption
        .split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect();
    let mut found: Vec<String> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let longest = (1..=MAX_PHRASE_WORDS.min(words.len() - i))
            .rev()
            .find_map(|n| vocab.by_phrase.get(&words[i..i + n]).map(|&e| (n, e)));
        match longest {
            Some((n, e)) => {
                let phrase = &vocab.entries[e].0;
                if !found.contains(phrase) {
                    found.push(phrase.clone());
                }
                i += n;
            }
            None => i += 1,
        }
    }
    found
}

/// Clue list rendered into the `Feeling e1, e2, ..., and en` template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcousticPrompt {
    pub clues: Vec<String>,
    pub rendered: String,
}

pub fn render_acoustic_prompt(clues: &[String]) -> AcousticPrompt {
    let rendered = match clues {
        [] => String::new(),
        [only] => format!("{TEMPLATE_HEAD} {only}"),
        [init @ .., last] => format!("{TEMPLATE_HEAD} {}, and {last}", init.join(", ")),
    };
    AcousticPrompt {
        clues: clues.to_vec(),
        rendered,
    }
}

/// Recovers the clue list from a rendered acoustic prompt.
pub fn parse_acoustic_prompt(rendered: &str) -> Option<Vec<String>> {
    if rendered.is_empty() {
        return Some(Vec::new());
    }
    let body = rendered.strip_prefix(TEMPLATE_HEAD)?.strip_prefix(' ')?;
    let mut parts: Vec<String> = body.split(", ").map(str::to_owned).collect();
    if parts.len() >= 2 {
        let last = parts.pop()?;
        parts.push(last.strip_prefix("and ")?.to_owned());
    }
    Some(parts)
}

/// Conditioning context: acoustic prompt, caption text, and user instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixPrompt {
    pub acoustic: AcousticPrompt,
    pub semantic: String,
    pub instruct: String,
}

impl PrefixPrompt {
    pub fn from_caption(vocab: &ClueVocabulary, caption: &str, instruct: &str) -> Self {
        PrefixPrompt {
            acoustic: render_acoustic_prompt(&extract_clues(vocab, caption)),
            semantic: caption.to_owned(),
            instruct: instruct.to_owned(),
        }
    }
}

/// `BOS acoustic SEP semantic SEP instruct`, skipping empty segments and their separators.
pub fn assemble_prefix(p: &PrefixPrompt, cb: &JointCodebook) -> TokenSeq {
    let sp = cb.special();
    let mut out = TokenSeq::new(vec![sp.bos]);
    let segments = [p.acoustic.rendered.as_str(), &p.semantic, &p.instruct];
    let mut first = true;
    for seg in segments {
        let toks = cb.encode_text(seg);
        if toks.is_empty() {
            continue;
        }
        if !first {
            out.push(sp.sep);
        }
        out.extend_from(&toks);
        first = false;
    }
    out
}
