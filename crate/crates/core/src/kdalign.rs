//! Speech-text alignment by distillation.
//!
//! The teacher sees the text prefix (acoustic prompt, caption, instruction);
//! the student sees speech tokens (and the instruction). At every response
//! position the student's next-token distribution is pulled toward the
//! teacher's:
//!
//! ```text
//! L = mean_{items, n}  − Σ_y  q(y | p, y_<n) · log p_student(y | x, y_<n)
//! ```
//!
//! The teacher term is a constant, so this cross-entropy and the KL divergence
//! share gradients. [`eval_alignment`] reports the KL itself.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::TokenSeq;
use crate::error::{Error, Result};
use crate::lm::{backward, forward, tensor::log_softmax_excluding, Lm, LoraAdapter, ModelParams, ParamSet};
use crate::optim::{sgd_step, warmup_lr, Adam, AdamConfig};

/// Floor applied to student probabilities inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// One distillation example. `target` is shared by both views.
#[derive(Debug, Clone, PartialEq)]
pub struct KdItem {
    pub teacher_ctx: TokenSeq,
    pub student_ctx: TokenSeq,
    pub target: TokenSeq,
}

impl KdItem {
    fn validate(&self) -> Result<()> {
        if self.teacher_ctx.valid_len() == 0 || self.student_ctx.valid_len() == 0 {
            return Err(Error::Empty("distillation context"));
        }
        if self.target.valid_len() == 0 {
            return Err(Error::Empty("distillation target"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KdBatch {
    pub items: Vec<KdItem>,
}

impl From<Vec<KdItem>> for KdBatch {
    fn from(items: Vec<KdItem>) -> Self {
        KdBatch { items }
    }
}

/// Optimization settings for distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub grad_accum: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Held-out KL is logged every this many steps (0 disables).
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 16,
            warmup_steps: 400,
            grad_accum: 8,
            max_steps: 50_000,
            seed: 0,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::Config("batch_size and grad_accum must be positive".into()));
        }
        Ok(())
    }
}

/// Aggregates of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KdStats {
    /// Mean cross-entropy: the optimized objective.
    pub loss: f64,
    /// Mean KL(teacher ‖ student).
    pub kl: f64,
    /// Mean teacher entropy; `loss == kl + teacher_entropy`.
    pub teacher_entropy: f64,
    pub positions: usize,
    /// Student probabilities that hit [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Teacher next-token distributions for every target position of an item.
fn teacher_dists(teacher: &Lm<'_>, item: &KdItem) -> Result<Vec<Vec<f64>>> {
    let ctx = item.teacher_ctx.valid_ids();
    let tgt = item.target.valid_ids();
    let mut ids = ctx.clone();
    ids.extend_from_slice(&tgt[..tgt.len() - 1]);
    let lp = teacher.log_probs_all(&ids)?;
    let v = teacher.vocab();
    Ok((0..tgt.len())
        .map(|n| {
            let pos = ctx.len() - 1 + n;
            lp[pos * v..(pos + 1) * v].iter().map(|l| l.exp()).collect()
        })
        .collect())
}

struct ItemTerm {
    ce: f64,
    kl: f64,
    entropy: f64,
    positions: usize,
    clamped: usize,
    grads: Option<ModelParams>,
}

/// Loss terms of one item, summed over positions; gradient scaled by `grad_scale`.
fn item_term(student: &Lm<'_>, item: &KdItem, teacher: &[Vec<f64>], grad_scale: Option<f64>) -> Result<ItemTerm> {
    let ctx = item.student_ctx.valid_ids();
    let tgt = item.target.valid_ids();
    let mut ids = ctx.clone();
    ids.extend_from_slice(&tgt[..tgt.len() - 1]);
    let params = student.params();
    let pad = params.config.pad_id.map(|p| p as usize);
    let v = params.config.vocab;
    let fw = forward(params, &ids)?;
    let mut dlogits = grad_scale.map(|_| vec![0.0; ids.len() * v]);
    let (mut ce, mut kl, mut entropy, mut clamped) = (0.0, 0.0, 0.0, 0);
    for (n, q) in teacher.iter().enumerate() {
        let pos = ctx.len() - 1 + n;
        let lp = log_softmax_excluding(fw.logits_at(pos, v), pad);
        let mut q_live = 0.0;
        for (y, &qy) in q.iter().enumerate() {
            if qy == 0.0 {
                continue;
            }
            let l = if lp[y] < PROB_FLOOR.ln() {
                clamped += 1;
                PROB_FLOOR.ln()
            } else {
                q_live += qy;
                lp[y]
            };
            ce -= qy * l;
            entropy -= qy * qy.ln();
            kl += qy * (qy.ln() - l);
        }
        if let (Some(dl), Some(s)) = (dlogits.as_mut(), grad_scale) {
            let row = &mut dl[pos * v..(pos + 1) * v];
            for (y, r) in row.iter_mut().enumerate() {
                let p = lp[y].exp();
                let q_y = if lp[y] < PROB_FLOOR.ln() { 0.0 } else { q[y] };
                *r = s * (p * q_live - q_y);
            }
        }
    }
    if !ce.is_finite() {
        return Err(Error::NonFinite("distillation loss".into()));
    }
    let grads = dlogits.map(|dl| backward(params, &fw, &dl));
    Ok(ItemTerm {
        ce,
        kl,
        entropy,
        positions: teacher.len(),
        clamped,
        grads,
    })
}

/// Precomputed teacher distributions for a fixed item list.
pub struct TeacherCache {
    dists: Vec<Vec<Vec<f64>>>,
}

impl TeacherCache {
    pub fn build(teacher: &ModelParams, items: &[KdItem]) -> Result<Self> {
        let lm = Lm::new(teacher, None)?;
        let dists = items
            .par_iter()
            .map(|it| {
                it.validate()?;
                teacher_dists(&lm, it)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TeacherCache { dists })
    }

    /// One-hot distributions on the targets themselves, turning the
    /// distillation loss into plain next-token negative log-likelihood.
    pub fn one_hot(items: &[KdItem], vocab: usize) -> Result<Self> {
        let dists = items
            .iter()
            .map(|it| {
                it.validate()?;
                it.target
                    .valid_ids()
                    .iter()
                    .map(|&y| {
                        if y as usize >= vocab {
                            return Err(Error::TokenOutOfRange { id: y, vocab });
                        }
                        let mut q = vec![0.0; vocab];
                        q[y as usize] = 1.0;
                        Ok(q)
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TeacherCache { dists })
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }
}

fn evaluate(
    student: &Lm<'_>,
    items: &[KdItem],
    teacher: &[&Vec<Vec<f64>>],
    want_grad: bool,
) -> Result<(KdStats, Option<ModelParams>)> {
    let positions: usize = teacher.iter().map(|t| t.len()).sum();
    if positions == 0 {
        return Err(Error::Empty("distillation batch"));
    }
    let scale = want_grad.then_some(1.0 / positions as f64);
    let terms = items
        .par_iter()
        .zip(teacher.par_iter())
        .map(|(it, t)| item_term(student, it, t, scale))
        .collect::<Result<Vec<_>>>()?;
    // reduce in item order so results do not depend on scheduling
    let mut stats = KdStats {
        positions,
        ..KdStats::default()
    };
    let mut grads: Option<ModelParams> = None;
    for term in terms {
        stats.loss += term.ce;
        stats.kl += term.kl;
        stats.teacher_entropy += term.entropy;
        stats.clamped += term.clamped;
        debug_assert!(term.positions > 0);
        if let Some(g) = term.grads {
            match grads.as_mut() {
                Some(acc) => acc.axpy(1.0, &g),
                None => grads = Some(g),
            }
        }
    }
    let n = positions as f64;
    stats.loss /= n;
    stats.kl /= n;
    stats.teacher_entropy /= n;
    if stats.clamped > 0 {
        log::warn!("{} student probabilities clamped at {PROB_FLOOR}", stats.clamped);
    }
    Ok((stats, grads))
}

/// Distillation cross-entropy of `batch`, averaged over response positions.
pub fn kd_loss(
    teacher: &ModelParams,
    student: &ModelParams,
    adapter: Option<&LoraAdapter>,
    batch: &KdBatch,
) -> Result<KdStats> {
    let cache = TeacherCache::build(teacher, &batch.items)?;
    let lm = Lm::new(student, adapter)?;
    let refs: Vec<_> = cache.dists.iter().collect();
    Ok(evaluate(&lm, &batch.items, &refs, false)?.0)
}

/// Gradients of [`kd_loss`].
#[derive(Debug, Clone)]
pub struct KdGrads {
    pub stats: KdStats,
    /// W.r.t. the student's base weights.
    pub base: ModelParams,
    /// W.r.t. the adapter factors, when an adapter is attached.
    pub adapter: Option<LoraAdapter>,
}

pub fn kd_grad(
    teacher: &ModelParams,
    student: &ModelParams,
    adapter: Option<&LoraAdapter>,
    batch: &KdBatch,
) -> Result<KdGrads> {
    let cache = TeacherCache::build(teacher, &batch.items)?;
    let lm = Lm::new(student, adapter)?;
    let refs: Vec<_> = cache.dists.iter().collect();
    let (stats, merged) = evaluate(&lm, &batch.items, &refs, true)?;
    let merged = merged.expect("gradient requested");
    Ok(KdGrads {
        stats,
        adapter: adapter.map(|a| a.grads_from_merged(&merged)),
        base: merged,
    })
}

/// Mean per-position KL(teacher ‖ student).
pub fn eval_alignment(
    teacher: &ModelParams,
    student: &ModelParams,
    adapter: Option<&LoraAdapter>,
    items: &[KdItem],
) -> Result<f64> {
    Ok(kd_loss(teacher, student, adapter, &KdBatch::from(items.to_vec()))?.kl)
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdLogRecord {
    pub step: usize,
    pub loss: f64,
    pub kl: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub heldout_kl: Option<f64>,
}

/// Seeded sampler that walks reshuffled epochs of item indices.
pub(crate) struct EpochSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        let mut s = EpochSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
        };
        s.reshuffle_if_needed();
        s
    }

    fn reshuffle_if_needed(&mut self) {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
    }

    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                self.reshuffle_if_needed();
                let i = self.order[self.cursor];
                self.cursor += 1;
                i
            })
            .collect()
    }
}

/// Trains the adapter with warmed-up gradient descent on the distillation loss.
///
/// Only the adapter moves; `teacher` and `student` base weights are read-only.
/// Returns the adapter and one log record per step.
pub fn train_kd(
    teacher: &ModelParams,
    student: &ModelParams,
    adapter: &LoraAdapter,
    dataset: &[KdItem],
    heldout: &[KdItem],
    cfg: &TrainConfig,
) -> Result<(LoraAdapter, Vec<KdLogRecord>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("distillation dataset"));
    }
    if cfg.max_steps == 0 {
        return Ok((adapter.clone(), Vec::new()));
    }
    let train_cache = TeacherCache::build(teacher, dataset)?;
    let held_cache = TeacherCache::build(teacher, heldout)?;
    train_kd_cached(student, adapter, dataset, &train_cache, heldout, &held_cache, cfg)
}

/// [`train_kd`] against precomputed target distributions.
pub fn train_kd_cached(
    student: &ModelParams,
    adapter: &LoraAdapter,
    dataset: &[KdItem],
    train_cache: &TeacherCache,
    heldout: &[KdItem],
    held_cache: &TeacherCache,
    cfg: &TrainConfig,
) -> Result<(LoraAdapter, Vec<KdLogRecord>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("distillation dataset"));
    }
    if train_cache.len() != dataset.len() || held_cache.len() != heldout.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len() + heldout.len(),
            got: train_cache.len() + held_cache.len(),
        });
    }
    let mut adapter = adapter.clone();
    let mut log = Vec::with_capacity(cfg.max_steps);
    let mut sampler = EpochSampler::new(dataset.len(), cfg.seed);

    for step in 1..=cfg.max_steps {
        let lm = Lm::new(student, Some(&adapter))?;
        let mut grad_acc: Option<ModelParams> = None;
        let (mut loss, mut kl) = (0.0, 0.0);
        for _ in 0..cfg.grad_accum {
            let idx = sampler.next_batch(cfg.batch_size);
            let items: Vec<KdItem> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let teach: Vec<_> = idx.iter().map(|&i| &train_cache.dists[i]).collect();
            let (stats, g) = evaluate(&lm, &items, &teach, true)?;
            loss += stats.loss;
            kl += stats.kl;
            let g = g.expect("gradient requested");
            match grad_acc.as_mut() {
                Some(acc) => acc.axpy(1.0, &g),
                None => grad_acc = Some(g),
            }
        }
        let k = cfg.grad_accum as f64;
        let (loss, kl) = (loss / k, kl / k);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("distillation loss at step {step}")));
        }
        let mut merged = grad_acc.expect("grad_accum >= 1");
        merged.scale(1.0 / k);
        let g = adapter.grads_from_merged(&merged);
        let lr = warmup_lr(cfg.learning_rate, cfg.warmup_steps, step);
        sgd_step(&mut adapter, &g, lr);
        if !adapter.is_finite() {
            return Err(Error::NonFinite(format!("adapter weights at step {step}")));
        }

        let heldout_kl = if cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && !heldout.is_empty() {
            let lm = Lm::new(student, Some(&adapter))?;
            let refs: Vec<_> = held_cache.dists.iter().collect();
            Some(evaluate(&lm, heldout, &refs, false)?.0.kl)
        } else {
            None
        };
        log.push(KdLogRecord {
            step,
            loss,
            kl,
            lr,
            heldout_kl,
        });
    }
    Ok((adapter, log))
}

/// Settings for fitting the base model to text by maximum likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            steps: 300,
            seed: 0,
        }
    }
}

/// Fits every base weight to `target | context` pairs with Adam on the mean
/// token negative log-likelihood. This stands in for a pretrained language
/// model: the result serves as the frozen teacher and as the student's base.
pub fn pretrain_lm(
    params: &ModelParams,
    data: &[(TokenSeq, TokenSeq)],
    cfg: &PretrainConfig,
) -> Result<(ModelParams, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Empty("pretraining dataset"));
    }
    let mut params = params.clone();
    let mut opt = Adam::new(&params, AdamConfig::default());
    let mut sampler = EpochSampler::new(data.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let tokens: usize = idx.iter().map(|&i| data[i].1.valid_len()).sum();
        let w = -1.0 / tokens as f64;
        let lm = Lm::new(&params, None)?;
        let terms = idx
            .par_iter()
            .map(|&i| lm.sequence_logprob_grad(&data[i].0, &data[i].1, Some(w)))
            .collect::<Result<Vec<_>>>()?;
        let mut loss = 0.0;
        let mut grads = params.zeros_like();
        for (lp, g) in terms {
            loss -= lp;
            grads.axpy(1.0, &g.expect("gradient requested"));
        }
        let loss = loss / tokens as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("pretraining loss".into()));
        }
        losses.push(loss);
        opt.step(&mut params, &grads, cfg.learning_rate);
    }
    Ok((params, losses))
}
