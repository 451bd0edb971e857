//! Preference regularization.
//!
//! Beam candidates are scored by a judge, the best one is paired against each
//! strictly worse one, and the adapter is trained on
//!
//! ```text
//! L = mean_pairs  −log σ(β · [(log π(c|x) − log π_ref(c|x)) − (log π(r|x) − log π_ref(r|x))])
//! ```
//!
//! with the reference model frozen.

use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{JointCodebook, TokenSeq};
use crate::datastore::{read_jsonl, write_jsonl};
use crate::emoparse::{extract_clues, ClueVocabulary};
use crate::error::{Error, Result};
use crate::kdalign::EpochSampler;
use crate::lm::{beam_decode, DecodeConfig, Lm, LoraAdapter, ModelParams, ParamSet};
use crate::optim::sgd_step;

/// Judge scores must fall in `[0, MAX_SCORE]`.
pub const MAX_SCORE: f64 = 10.0;

/// Environment variable holding the bearer token for [`HttpJudge`].
pub const JUDGE_TOKEN_ENV: &str = "ALIGNCAP_JUDGE_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub x: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Wire body sent to a judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub prompt: String,
    pub candidates: Vec<String>,
}

/// Wire body returned by a judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub scores: Vec<f64>,
}

/// Scores candidate captions. Implementations must be callable from several threads.
pub trait Judge: Send + Sync {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeResponse>;
}

const REFERENCE_LABEL: &str = "Reference caption: ";

/// Scoring prompt sent alongside the candidates.
///
/// The wording is a reconstruction: a reference caption, the numbered
/// candidates, and an instruction to score each one from 0 to 10 for how well
/// it matches the reference's emotion and acoustic cues.
pub fn scoring_prompt(reference: &str, candidates: &[String]) -> String {
    let mut s = String::from(
        "You are rating speech emotion captions against a reference written by a human annotator.\n",
    );
    s.push_str(REFERENCE_LABEL);
    s.push_str(reference);
    s.push('\n');
    s.push_str("Candidates:\n");
    for (i, c) in candidates.iter().enumerate() {
        s.push_str(&format!("{}. {}\n", i + 1, c));
    }
    s.push_str(
        "Give every candidate a score from 0 to 10. Reward captions that name the same emotion and \
         the same pitch, rhythm, volume and tone cues as the reference; penalize cues the reference \
         does not support. Reply with JSON {\"scores\": [...]} in candidate order.\n",
    );
    s
}

fn reference_from_prompt(prompt: &str) -> Option<&str> {
    prompt.lines().find_map(|l| l.strip_prefix(REFERENCE_LABEL))
}

/// Offline judge: F1 between the clue sets of each candidate and the reference, times 10.
///
/// A candidate scores 0 when either side has no clues.
#[derive(Debug, Clone)]
pub struct MockJudge {
    pub clues: ClueVocabulary,
}

impl MockJudge {
    pub fn new(clues: ClueVocabulary) -> Self {
        MockJudge { clues }
    }

    pub fn score(&self, reference: &str, candidate: &str) -> f64 {
        let r = extract_clues(&self.clues, reference);
        let c = extract_clues(&self.clues, candidate);
        let hit = c.iter().filter(|x| r.contains(x)).count() as f64;
        if hit == 0.0 {
            return 0.0;
        }
        let p = hit / c.len() as f64;
        let q = hit / r.len() as f64;
        MAX_SCORE * 2.0 * p * q / (p + q)
    }
}

impl Judge for MockJudge {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeResponse> {
        let reference = reference_from_prompt(&request.prompt)
            .ok_or_else(|| Error::JudgeResponse("prompt has no reference line".into()))?;
        Ok(JudgeResponse {
            scores: request.candidates.iter().map(|c| self.score(reference, c)).collect(),
        })
    }
}

/// Remote judge speaking the JSON request/response protocol over HTTP POST.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    pub endpoint: String,
    pub timeout: Duration,
    pub token: Option<String>,
    /// Extra attempts after the first failure.
    pub retries: u32,
    /// Delay before the first retry; doubled for each further one.
    pub backoff: Duration,
}

impl HttpJudge {
    /// Three retries from 500 ms, token from the environment.
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpJudge {
            endpoint: endpoint.into(),
            timeout,
            token: std::env::var(JUDGE_TOKEN_ENV).ok(),
            retries: 3,
            backoff: Duration::from_millis(500),
        }
    }

    fn attempt(&self, agent: &ureq::Agent, request: &JudgeRequest) -> std::result::Result<String, String> {
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(request).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

impl Judge for HttpJudge {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeResponse> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                log::warn!("judge request failed ({last}); retry {attempt} in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&agent, request) {
                Ok(body) => {
                    return serde_json::from_str(&body).map_err(|e| {
                        let shown: String = body.chars().take(200).collect();
                        Error::JudgeResponse(format!("{e}; body: {shown}"))
                    })
                }
                Err(e) => last = e,
            }
        }
        Err(Error::JudgeTransport {
            attempts: self.retries as usize + 1,
            message: last,
        })
    }
}

/// Sends one scoring request and checks the answer lines up with `candidates`.
pub fn score_candidates(judge: &dyn Judge, reference: &str, candidates: &[String]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let request = JudgeRequest {
        prompt: scoring_prompt(reference, candidates),
        candidates: candidates.to_vec(),
    };
    let resp = judge.judge(&request)?;
    if resp.scores.len() != candidates.len() {
        return Err(Error::JudgeResponse(format!(
            "{} scores for {} candidates",
            resp.scores.len(),
            candidates.len()
        )));
    }
    if let Some((i, s)) = resp
        .scores
        .iter()
        .enumerate()
        .find(|(_, s)| !s.is_finite() || **s < 0.0 || **s > MAX_SCORE)
    {
        return Err(Error::JudgeResponse(format!("score {s} for candidate {i} is outside [0, 10]")));
    }
    Ok(resp.scores)
}

/// Distinct beam hypotheses for `x`, best first. Fewer than two means the input
/// carries no preference signal and should be skipped.
pub fn generate_candidates(
    params: &ModelParams,
    adapter: Option<&LoraAdapter>,
    x: &TokenSeq,
    k: usize,
    decode: &DecodeConfig,
) -> Result<Vec<TokenSeq>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 candidates, asked for {k}")));
    }
    let lm = Lm::new(params, adapter)?;
    let cfg = DecodeConfig {
        beam_width: k,
        ..decode.clone()
    };
    let mut out: Vec<TokenSeq> = Vec::with_capacity(k);
    for h in beam_decode(&lm, x, &cfg)? {
        if !out.contains(&h.tokens) {
            out.push(h.tokens);
        }
    }
    Ok(out)
}

/// Best candidate against every strictly worse one. Ties for best go to the
/// earliest index; candidates tied with it are dropped.
pub fn build_pairs(x: &TokenSeq, candidates: &[TokenSeq], scores: &[f64]) -> Result<Vec<PreferencePair>> {
    if candidates.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    if candidates.len() < 2 {
        return Err(Error::NoUsablePairs);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    let pairs: Vec<PreferencePair> = (0..candidates.len())
        .filter(|&i| i != best && scores[i] < scores[best])
        .map(|i| PreferencePair {
            x: x.clone(),
            chosen: candidates[best].clone(),
            rejected: candidates[i].clone(),
            chosen_score: scores[best],
            rejected_score: scores[i],
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoUsablePairs);
    }
    Ok(pairs)
}

/// One line of `prefs.jsonl`; responses are stored as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefRecord {
    pub x: Vec<u32>,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Response tokens for a caption: its words followed by EOS.
pub fn response_tokens(cb: &JointCodebook, text: &str) -> TokenSeq {
    let mut t = cb.encode_text(text);
    t.push(cb.special().eos);
    t
}

impl PrefRecord {
    pub fn from_pair(cb: &JointCodebook, p: &PreferencePair) -> Result<Self> {
        Ok(PrefRecord {
            x: p.x.valid_ids(),
            chosen: cb.decode_text(&p.chosen)?,
            rejected: cb.decode_text(&p.rejected)?,
            chosen_score: p.chosen_score,
            rejected_score: p.rejected_score,
        })
    }

    pub fn to_pair(&self, cb: &JointCodebook) -> PreferencePair {
        PreferencePair {
            x: TokenSeq::new(self.x.clone()),
            chosen: response_tokens(cb, &self.chosen),
            rejected: response_tokens(cb, &self.rejected),
            chosen_score: self.chosen_score,
            rejected_score: self.rejected_score,
        }
    }
}

pub fn save_prefs(path: impl AsRef<Path>, records: &[PrefRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_prefs(path: impl AsRef<Path>) -> Result<Vec<PrefRecord>> {
    read_jsonl(path)
}

/// One input for preference collection: context plus the reference caption the judge sees.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefSource {
    pub x: TokenSeq,
    pub reference: String,
}

/// Candidates, judge scores and pairs for every source, in source order.
/// Candidates are compared as rendered text. Inputs with fewer than two
/// distinct captions or all-equal scores are skipped.
/// Judge calls run on the rayon pool.
pub fn collect_preferences(
    params: &ModelParams,
    adapter: Option<&LoraAdapter>,
    cb: &JointCodebook,
    judge: &dyn Judge,
    sources: &[PrefSource],
    k: usize,
    decode: &DecodeConfig,
) -> Result<Vec<PrefRecord>> {
    let per_source: Vec<Result<Vec<PrefRecord>>> = sources
        .par_iter()
        .map(|src| {
            let mut texts: Vec<String> = Vec::with_capacity(k);
            for c in generate_candidates(params, adapter, &src.x, k, decode)? {
                // hypotheses holding speech ids have no caption form
                if let Ok(t) = cb.decode_text(&c) {
                    if !texts.contains(&t) {
                        texts.push(t);
                    }
                }
            }
            if texts.len() < 2 {
                return Ok(Vec::new());
            }
            let scores = score_candidates(judge, &src.reference, &texts)?;
            let seqs: Vec<TokenSeq> = texts.iter().map(|t| response_tokens(cb, t)).collect();
            match build_pairs(&src.x, &seqs, &scores) {
                Ok(pairs) => pairs.iter().map(|p| PrefRecord::from_pair(cb, p)).collect(),
                Err(Error::NoUsablePairs) => Ok(Vec::new()),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut out = Vec::new();
    for r in per_source {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PoConfig {
    fn default() -> Self {
        PoConfig {
            beta: 0.1,
            learning_rate: 5e-7,
            max_steps: 1000,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl PoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// `−log σ(z)` without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Reference log-probabilities `(chosen, rejected)` per pair.
pub fn reference_logprobs(
    reference: &ModelParams,
    ref_adapter: Option<&LoraAdapter>,
    pairs: &[PreferencePair],
) -> Result<Vec<(f64, f64)>> {
    let lm = Lm::new(reference, ref_adapter)?;
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let c = lm.sequence_logprob(&p.x, &p.chosen)?;
            let r = lm.sequence_logprob(&p.x, &p.rejected)?;
            check_finite(i, c, r)?;
            Ok((c, r))
        })
        .collect()
}

fn check_finite(i: usize, c: f64, r: f64) -> Result<()> {
    if c.is_finite() && r.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("log-probability for pair {i} (chosen {c}, rejected {r})")))
    }
}

/// Batch summary. `margin` is the policy's own `log π(c|x) − log π(r|x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoStats {
    pub loss: f64,
    pub margin: f64,
    pub accuracy: f64,
}

struct PairEval {
    loss: f64,
    margin: f64,
    grad: Option<ModelParams>,
}

fn eval_pair(
    lm: &Lm<'_>,
    i: usize,
    p: &PreferencePair,
    refs: (f64, f64),
    beta: f64,
    with_grad: bool,
) -> Result<PairEval> {
    let w = with_grad.then_some(1.0);
    let (c, gc) = lm.sequence_logprob_grad(&p.x, &p.chosen, w)?;
    let (r, gr) = lm.sequence_logprob_grad(&p.x, &p.rejected, w)?;
    check_finite(i, c, r)?;
    let z = beta * ((c - refs.0) - (r - refs.1));
    let grad = match (gc, gr) {
        (Some(mut gc), Some(gr)) => {
            // d/dθ −log σ(z) = −σ(−z) · β · (∇c − ∇r)
            let k = sigmoid(-z) * beta;
            gc.scale(-k);
            gc.axpy(k, &gr);
            Some(gc)
        }
        _ => None,
    };
    Ok(PairEval {
        loss: neg_log_sigmoid(z),
        margin: c - r,
        grad,
    })
}

fn eval_pairs(
    lm: &Lm<'_>,
    pairs: &[&PreferencePair],
    idx: &[usize],
    refs: &[(f64, f64)],
    beta: f64,
    with_grad: bool,
) -> Result<(PoStats, Option<ModelParams>)> {
    if pairs.is_empty() {
        return Err(Error::Empty("preference pairs"));
    }
    let evals: Vec<PairEval> = pairs
        .par_iter()
        .zip(idx.par_iter())
        .zip(refs.par_iter())
        .map(|((p, &i), &r)| eval_pair(lm, i, p, r, beta, with_grad))
        .collect::<Result<_>>()?;
    let n = evals.len() as f64;
    let mut stats = PoStats {
        loss: 0.0,
        margin: 0.0,
        accuracy: 0.0,
    };
    let mut grad: Option<ModelParams> = None;
    for e in evals {
        stats.loss += e.loss;
        stats.margin += e.margin;
        stats.accuracy += if e.margin > 0.0 { 1.0 } else { 0.0 };
        if let Some(g) = e.grad {
            match grad.as_mut() {
                Some(acc) => acc.axpy(1.0, &g),
                None => grad = Some(g),
            }
        }
    }
    stats.loss /= n;
    stats.margin /= n;
    stats.accuracy /= n;
    if let Some(g) = grad.as_mut() {
        g.scale(1.0 / n);
    }
    Ok((stats, grad))
}

/// Mean preference loss over `pairs`.
pub fn dpo_loss(
    policy: &ModelParams,
    policy_adapter: Option<&LoraAdapter>,
    reference: &ModelParams,
    ref_adapter: Option<&LoraAdapter>,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64> {
    let refs = reference_logprobs(reference, ref_adapter, pairs)?;
    let lm = Lm::new(policy, policy_adapter)?;
    let all: Vec<&PreferencePair> = pairs.iter().collect();
    let idx: Vec<usize> = (0..pairs.len()).collect();
    Ok(eval_pairs(&lm, &all, &idx, &refs, beta, false)?.0.loss)
}

/// Loss statistics and gradients for the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoGrads {
    pub stats: PoStats,
    /// Gradient w.r.t. the policy's merged weights.
    pub base: ModelParams,
    pub adapter: Option<LoraAdapter>,
}

pub fn dpo_grad(
    policy: &ModelParams,
    policy_adapter: Option<&LoraAdapter>,
    reference: &ModelParams,
    ref_adapter: Option<&LoraAdapter>,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<DpoGrads> {
    let refs = reference_logprobs(reference, ref_adapter, pairs)?;
    let lm = Lm::new(policy, policy_adapter)?;
    let all: Vec<&PreferencePair> = pairs.iter().collect();
    let idx: Vec<usize> = (0..pairs.len()).collect();
    let (stats, g) = eval_pairs(&lm, &all, &idx, &refs, beta, true)?;
    let base = g.expect("gradient requested");
    let adapter = policy_adapter.map(|a| a.grads_from_merged(&base));
    Ok(DpoGrads { stats, base, adapter })
}

/// Policy statistics over a pair set against precomputed reference log-probabilities.
pub fn evaluate_po(
    policy: &ModelParams,
    policy_adapter: Option<&LoraAdapter>,
    pairs: &[PreferencePair],
    refs: &[(f64, f64)],
    beta: f64,
) -> Result<PoStats> {
    let lm = Lm::new(policy, policy_adapter)?;
    let all: Vec<&PreferencePair> = pairs.iter().collect();
    let idx: Vec<usize> = (0..pairs.len()).collect();
    Ok(eval_pairs(&lm, &all, &idx, refs, beta, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoLogRecord {
    pub step: usize,
    #[serde(flatten)]
    pub stats: PoStats,
}

/// Trains the policy adapter on the preference loss with seeded mini-batch
/// gradient descent.
///
/// The reference is borrowed immutably and its log-probabilities are computed
/// once up front. The log starts with a step-0 record over the full pair set;
/// each later record covers that step's mini-batch before the update.
pub fn train_po(
    policy: &ModelParams,
    policy_adapter: &LoraAdapter,
    reference: &ModelParams,
    ref_adapter: Option<&LoraAdapter>,
    pairs: &[PreferencePair],
    cfg: &PoConfig,
) -> Result<(LoraAdapter, Vec<PoLogRecord>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("preference pairs"));
    }
    let refs = reference_logprobs(reference, ref_adapter, pairs)?;
    let mut adapter = policy_adapter.clone();
    let mut log = Vec::with_capacity(cfg.max_steps + 1);
    log.push(PoLogRecord {
        step: 0,
        stats: evaluate_po(policy, Some(&adapter), pairs, &refs, cfg.beta)?,
    });
    let mut sampler = EpochSampler::new(pairs.len(), cfg.seed);
    let batch = cfg.batch_size.min(pairs.len());
    for step in 1..=cfg.max_steps {
        let idx = sampler.next_batch(batch);
        let chosen: Vec<&PreferencePair> = idx.iter().map(|&i| &pairs[i]).collect();
        let r: Vec<(f64, f64)> = idx.iter().map(|&i| refs[i]).collect();
        let lm = Lm::new(policy, Some(&adapter))?;
        let (stats, g) = eval_pairs(&lm, &chosen, &idx, &r, cfg.beta, true)?;
        if !stats.loss.is_finite() {
            return Err(Error::NonFinite(format!("preference loss at step {step}")));
        }
        let g = adapter.grads_from_merged(&g.expect("gradient requested"));
        sgd_step(&mut adapter, &g, cfg.learning_rate);
        if !adapter.is_finite() {
            return Err(Error::NonFinite(format!("adapter weights at step {step}")));
        }
        log.push(PoLogRecord { step, stats });
    }
    Ok((adapter, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emoparse::ClueCategory;

    fn seq(v: &[u32]) -> TokenSeq {
        TokenSeq::new(v.to_vec())
    }

    #[test]
    fn pairs_from_scores() {
        let x = seq(&[1]);
        let c: Vec<TokenSeq> = (10..14).map(|i| seq(&[i])).collect();
        let p = build_pairs(&x, &c, &[4.0, 2.0, 5.0, 3.0]).unwrap();
        let got: Vec<(u32, u32)> = p.iter().map(|p| (p.chosen.ids[0] - 10, p.rejected.ids[0] - 10)).collect();
        assert_eq!(got, vec![(2, 0), (2, 1), (2, 3)]);

        assert!(matches!(build_pairs(&x, &c[..2], &[7.0, 7.0]), Err(Error::NoUsablePairs)));
        let p = build_pairs(&x, &c[..2], &[9.0, 1.0]).unwrap();
        assert_eq!((p.len(), p[0].chosen.ids[0], p[0].rejected.ids[0]), (1, 10, 11));

        // earliest max wins, the tied one is dropped
        let p = build_pairs(&x, &c[..3], &[5.0, 5.0, 1.0]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].chosen.ids[0], 10);
    }

    #[test]
    fn mock_judge_f1() {
        let v = ClueVocabulary::new([
            ("a".to_string(), ClueCategory::Adjective),
            ("b".to_string(), ClueCategory::Pitch),
        ])
        .unwrap();
        let j = MockJudge::new(v);
        assert_eq!(j.score("x a y b", "x a y b"), 10.0);
        assert_eq!(j.score("a b", "nothing here"), 0.0);
        assert!((j.score("a b", "just a") - 6.666_666_666_666_667).abs() < 1e-12);
        let s = score_candidates(&j, "a b", &["a b".into(), "a".into(), "z".into()]).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn malformed_scores_rejected() {
        struct Bad(Vec<f64>);
        impl Judge for Bad {
            fn judge(&self, _: &JudgeRequest) -> Result<JudgeResponse> {
                Ok(JudgeResponse { scores: self.0.clone() })
            }
        }
        let c = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(score_candidates(&Bad(vec![1.0]), "r", &c), Err(Error::JudgeResponse(_))));
        assert!(matches!(score_candidates(&Bad(vec![1.0, f64::NAN]), "r", &c), Err(Error::JudgeResponse(_))));
        assert!(matches!(score_candidates(&Bad(vec![1.0, 11.0]), "r", &c), Err(Error::JudgeResponse(_))));
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((neg_log_sigmoid(1.0) - 0.313_261_687_518_222_8).abs() < 1e-12);
        assert!(neg_log_sigmoid(800.0) >= 0.0);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
    }
}
