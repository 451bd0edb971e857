//! Caption metrics: BLEU-4, ROUGE-L, a lightweight METEOR and CIDEr, plus
//! judge prompts for clue and summary overlap.
//!
//! Text is lowercased and split on whitespace; punctuation is trimmed from
//! each word and punctuation-only words are dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{read_jsonl, write_jsonl};
use crate::emoparse::normalize_word;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
const ROUGE_BETA: f64 = 1.2;
const BLEU_EPSILON: f64 = 1e-16;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub candidate: String,
    pub references: Vec<String>,
}

impl EvalItem {
    pub fn new(candidate: impl Into<String>, references: impl IntoIterator<Item = impl Into<String>>) -> Self {
        EvalItem {
            candidate: candidate.into(),
            references: references.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCorpus {
    pub items: Vec<EvalItem>,
}

impl EvalCorpus {
    pub fn validate(&self) -> Result<()> {
        match self.items.iter().position(|it| it.references.is_empty()) {
            Some(i) => Err(Error::Config(format!("item {i} has no references"))),
            None => Ok(()),
        }
    }
}

impl From<Vec<EvalItem>> for EvalCorpus {
    fn from(items: Vec<EvalItem>) -> Self {
        EvalCorpus { items }
    }
}

struct Tokenized {
    cand: Vec<String>,
    refs: Vec<Vec<String>>,
}

fn tokenized(corpus: &EvalCorpus) -> Vec<Tokenized> {
    corpus
        .items
        .iter()
        .map(|it| Tokenized {
            cand: tokenize(&it.candidate),
            refs: it.references.iter().map(|r| tokenize(r)).collect(),
        })
        .collect()
}

fn ngram_counts(toks: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sufficient statistics of one item for BLEU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    /// Clipped n-gram matches for n = 1..=4.
    pub matches: [usize; MAX_ORDER],
    /// Candidate n-gram counts for n = 1..=4.
    pub totals: [usize; MAX_ORDER],
    pub cand_len: usize,
    /// Length of the reference closest to `cand_len` (shorter wins ties).
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    /// Any zero precision makes the score zero.
    #[default]
    None,
    /// A zero-match precision is replaced by `1e-16 / total`.
    Epsilon,
}

impl BleuStats {
    fn of(cand: &[String], refs: &[Vec<String>]) -> Self {
        let mut s = BleuStats {
            cand_len: cand.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let c = ngram_counts(cand, n);
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            s.totals[n - 1] = c.values().sum();
            s.matches[n - 1] = c
                .iter()
                .map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s.ref_len = refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        s
    }

    /// Geometric mean of the four precisions times the brevity penalty.
    pub fn score(&self, smoothing: BleuSmoothing) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let p = match (self.matches[n], smoothing) {
                (0, BleuSmoothing::None) => return 0.0,
                (0, BleuSmoothing::Epsilon) => BLEU_EPSILON / self.totals[n].max(1) as f64,
                (m, _) => m as f64 / self.totals[n] as f64,
            };
            log_sum += p.ln() / MAX_ORDER as f64;
        }
        let bp = if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * log_sum.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuOptions {
    pub smoothing: BleuSmoothing,
    /// Average sentence-level scores instead of pooling statistics.
    pub sentence_mean: bool,
}

pub fn bleu4_with(corpus: &EvalCorpus, opts: BleuOptions) -> f64 {
    let stats: Vec<BleuStats> = tokenized(corpus).iter().map(|t| BleuStats::of(&t.cand, &t.refs)).collect();
    aggregate_bleu(&stats, opts)
}

fn aggregate_bleu(stats: &[BleuStats], opts: BleuOptions) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    if opts.sentence_mean {
        stats.iter().map(|s| s.score(opts.smoothing)).sum::<f64>() / stats.len() as f64
    } else {
        let mut total = BleuStats::default();
        for s in stats {
            total += *s;
        }
        total.score(opts.smoothing)
    }
}

/// Corpus-level, unsmoothed BLEU-4.
pub fn bleu4(corpus: &EvalCorpus) -> f64 {
    bleu4_with(corpus, BleuOptions::default())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn rouge_l_pair(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

fn rouge_l_item(t: &Tokenized) -> f64 {
    t.refs.iter().map(|r| rouge_l_pair(&t.cand, r)).fold(0.0, f64::max)
}

/// Mean over items of the best-reference LCS F-measure.
pub fn rouge_l(corpus: &EvalCorpus) -> f64 {
    mean(tokenized(corpus).par_iter().map(rouge_l_item).collect())
}

/// Word to interchangeable words. Lookups go both ways.
pub type SynonymMap = HashMap<String, HashSet<String>>;

fn synonyms(map: &SynonymMap, a: &str, b: &str) -> bool {
    map.get(a).is_some_and(|s| s.contains(b)) || map.get(b).is_some_and(|s| s.contains(a))
}

fn meteor_pair(cand: &[String], reference: &[String], syn: &SynonymMap) -> f64 {
    // align[i] = reference position matched by candidate word i
    let mut align: Vec<Option<usize>> = vec![None; cand.len()];
    let mut used = vec![false; reference.len()];
    // exact matches first, then synonyms
    for exact in [true, false] {
        let matches = |a: &str, b: &str| if exact { a == b } else { synonyms(syn, a, b) };
        for (i, w) in cand.iter().enumerate() {
            if align[i].is_some() {
                continue;
            }
            if let Some(j) = (0..reference.len()).find(|&j| !used[j] && matches(w, &reference[j])) {
                used[j] = true;
                align[i] = Some(j);
            }
        }
    }
    let m = align.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in &align {
        match (a, prev) {
            (Some(j), Some(p)) if *j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *a;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// Unigram METEOR: exact then synonym alignment, recall-weighted F and a
/// fragmentation penalty. Best reference per item, mean over items.
pub fn meteor_lite(corpus: &EvalCorpus, syn: &SynonymMap) -> f64 {
    mean(tokenized(corpus).par_iter().map(|t| meteor_item(t, syn)).collect())
}

fn meteor_item(t: &Tokenized, syn: &SynonymMap) -> f64 {
    t.refs.iter().map(|r| meteor_pair(&t.cand, r, syn)).fold(0.0, f64::max)
}

type Gram = Vec<String>;

struct CiderIdf {
    log_n: f64,
    df: BTreeMap<Gram, usize>,
}

impl CiderIdf {
    fn new(items: &[Tokenized]) -> Self {
        let mut df: BTreeMap<Gram, usize> = BTreeMap::new();
        for t in items {
            let mut seen: BTreeSet<&[String]> = BTreeSet::new();
            for r in &t.refs {
                for n in 1..=MAX_ORDER {
                    if r.len() >= n {
                        seen.extend(r.windows(n));
                    }
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        CiderIdf {
            log_n: (items.len() as f64).ln(),
            df,
        }
    }

    fn idf(&self, g: &[String]) -> f64 {
        self.log_n - (self.df.get(g).copied().unwrap_or(0).max(1) as f64).ln()
    }

    fn vector<'a>(&self, toks: &'a [String], n: usize) -> BTreeMap<&'a [String], f64> {
        ngram_counts(toks, n)
            .into_iter()
            .map(|(g, c)| (g, c as f64 * self.idf(g)))
            .collect()
    }
}

fn cosine(a: &BTreeMap<&[String], f64>, b: &BTreeMap<&[String], f64>) -> f64 {
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(g, v)| b.get(g).map(|w| v * w)).sum();
    dot / (na * nb)
}

fn cider_item(t: &Tokenized, idf: &CiderIdf) -> f64 {
    if t.refs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for n in 1..=MAX_ORDER {
        let c = idf.vector(&t.cand, n);
        let s: f64 = t.refs.iter().map(|r| cosine(&c, &idf.vector(r, n))).sum();
        total += s / t.refs.len() as f64;
    }
    10.0 * total / MAX_ORDER as f64
}

/// TF-IDF cosine consensus over 1..4-grams, document frequency taken over the
/// reference sets, scaled by 10 and averaged over items.
pub fn cider(corpus: &EvalCorpus) -> f64 {
    let items = tokenized(corpus);
    let idf = CiderIdf::new(&items);
    mean(items.par_iter().map(|t| cider_item(t, &idf)).collect())
}

fn mean(v: Vec<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub bleu: BleuStats,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

/// Corpus scores with their per-item inputs. Pooling `items[*].bleu` (or
/// averaging `items[*].bleu4` when `bleu_options.sentence_mean`) gives `bleu4`;
/// the other three are plain means of their item values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub bleu_options: BleuOptions,
    pub items: Vec<ItemScores>,
}

pub fn evaluate(corpus: &EvalCorpus, syn: &SynonymMap, bleu_options: BleuOptions) -> Result<MetricReport> {
    corpus.validate()?;
    let toks = tokenized(corpus);
    let idf = CiderIdf::new(&toks);
    let items: Vec<ItemScores> = toks
        .par_iter()
        .map(|t| {
            let bleu = BleuStats::of(&t.cand, &t.refs);
            ItemScores {
                id: None,
                bleu,
                bleu4: bleu.score(bleu_options.smoothing),
                meteor: meteor_item(t, syn),
                rouge_l: rouge_l_item(t),
                cider: cider_item(t, &idf),
            }
        })
        .collect();
    let stats: Vec<BleuStats> = items.iter().map(|i| i.bleu).collect();
    Ok(MetricReport {
        bleu4: aggregate_bleu(&stats, bleu_options),
        meteor: mean(items.iter().map(|i| i.meteor).collect()),
        rouge_l: mean(items.iter().map(|i| i.rouge_l).collect()),
        cider: mean(items.iter().map(|i| i.cider).collect()),
        bleu_options,
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AesKind {
    ClueOverlap,
    SummaryOverlap,
}

impl std::str::FromStr for AesKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clue_overlap" => Ok(AesKind::ClueOverlap),
            "summary_overlap" => Ok(AesKind::SummaryOverlap),
            other => Err(Error::Config(format!("unknown evaluation prompt kind `{other}`"))),
        }
    }
}

/// Judge prompt asking for a 0 to 10 overlap score between two captions.
///
/// The wording is a reconstruction; only the instruction line depends on `kind`.
pub fn build_aes_prompt(kind: AesKind, candidate: &str, reference: &str) -> String {
    let focus = match kind {
        AesKind::ClueOverlap => {
            "Judge how many of the emotional clues in the reference (emotion words, tone, intonation, \
             pitch, rhythm, volume) also appear in the candidate."
        }
        AesKind::SummaryOverlap => {
            "Judge how closely the overall emotional state summarized by the candidate agrees with the \
             one summarized by the reference."
        }
    };
    format!(
        "You are evaluating a caption that describes the emotion of a speaker.\n\
         {focus}\n\
         Candidate caption: {candidate}\n\
         Reference caption: {reference}\n\
         Reply with a single score from 0 (no overlap) to 10 (complete overlap).\n"
    )
}

/// `{"id": ..., "text": ...}` line of a candidates file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub text: String,
}

/// `{"id": ..., "texts": [...]}` line of a references file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub id: String,
    pub texts: Vec<String>,
}

pub fn save_candidates(path: impl AsRef<Path>, recs: &[CandidateRecord]) -> Result<()> {
    write_jsonl(path, recs)
}

pub fn save_references(path: impl AsRef<Path>, recs: &[ReferenceRecord]) -> Result<()> {
    write_jsonl(path, recs)
}

/// Joins the two files by id in candidate order.
pub fn load_corpus(candidates: impl AsRef<Path>, references: impl AsRef<Path>) -> Result<(Vec<String>, EvalCorpus)> {
    let cands: Vec<CandidateRecord> = read_jsonl(candidates)?;
    let refs: Vec<ReferenceRecord> = read_jsonl(references)?;
    let by_id: HashMap<&str, &ReferenceRecord> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut ids = Vec::with_capacity(cands.len());
    let mut items = Vec::with_capacity(cands.len());
    for c in cands {
        let r = by_id
            .get(c.id.as_str())
            .ok_or_else(|| Error::Config(format!("no references for candidate `{}`", c.id)))?;
        items.push(EvalItem::new(c.text, r.texts.clone()));
        ids.push(c.id);
    }
    Ok((ids, EvalCorpus { items }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(c: &str, r: &[&str]) -> EvalCorpus {
        EvalCorpus::from(vec![EvalItem::new(c, r.iter().copied())])
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("A Sad, quiet voice ."), vec!["a", "sad", "quiet", "voice"]);
    }

    #[test]
    fn identity_and_disjoint() {
        let c = one("the speaker sounds very sad", &["the speaker sounds very sad"]);
        assert_eq!(bleu4(&c), 1.0);
        assert_eq!(rouge_l(&c), 1.0);
        let d = one("glad loud fast", &["sad quiet slow voice"]);
        assert_eq!(bleu4(&d), 0.0);
        assert_eq!(rouge_l(&d), 0.0);
        assert_eq!(meteor_lite(&d, &SynonymMap::new()), 0.0);
    }

    #[test]
    fn meteor_hand_value() {
        let m = meteor_lite(&one("a b c", &["a b c"]), &SynonymMap::new());
        assert!((m - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert!((m - 0.9815).abs() < 1e-4);
        let mut syn = SynonymMap::new();
        syn.entry("happy".into()).or_default().insert("glad".into());
        assert!(meteor_lite(&one("glad", &["happy"]), &syn) > 0.0);
        assert_eq!(meteor_lite(&one("glad", &["happy"]), &SynonymMap::new()), 0.0);
    }

    #[test]
    fn cider_degenerate_idf() {
        let c = one("sad voice", &["sad voice"]);
        assert_eq!(cider(&c), 0.0);
    }

    #[test]
    fn aes_prompts() {
        let a = build_aes_prompt(AesKind::ClueOverlap, "a", "b");
        assert_eq!(a.matches("Candidate caption: a\n").count(), 1);
        assert_eq!(a.matches("Reference caption: b\n").count(), 1);
        assert_eq!(a, build_aes_prompt(AesKind::ClueOverlap, "a", "b"));
        let s = build_aes_prompt(AesKind::SummaryOverlap, "a", "b");
        let diff: Vec<_> = a.lines().zip(s.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff.len(), 1);
        assert_eq!(a.lines().count(), s.lines().count());
    }
}
