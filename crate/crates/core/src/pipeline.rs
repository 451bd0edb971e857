//! End-to-end stages shared by the command line and the experiment harnesses.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{JointCodebook, TokenSeq};
use crate::datastore::{load_pairs_checked, save_pairs, Split, SpeechCaptionPair, SynthCorpus, SynthSpec};
use crate::emoparse::{assemble_prefix, render_acoustic_prompt, extract_clues, ClueVocabulary, PrefixPrompt};
use crate::error::{Error, Result};
use crate::evalkit::{self, BleuOptions, EvalCorpus, EvalItem, MetricReport, SynonymMap};
use crate::kdalign::{pretrain_lm, train_kd_cached, KdItem, KdLogRecord, PretrainConfig, TeacherCache, TrainConfig};
use crate::lm::{beam_decode, DecodeConfig, Lm, LoraAdapter, LoraConfig, ModelConfig, ModelParams};
use crate::prefopt::{
    collect_preferences, response_tokens, train_po, Judge, PoConfig, PoLogRecord, PrefRecord, PrefSource,
    PreferencePair,
};

/// Transformer shape; the vocabulary comes from the codebook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        ModelShape {
            d_model: d.d_model,
            n_heads: d.n_heads,
            n_layers: d.n_layers,
            d_ff: d.d_ff,
            max_seq: d.max_seq,
        }
    }
}

impl ModelShape {
    pub fn config(&self, cb: &JointCodebook) -> ModelConfig {
        ModelConfig {
            vocab: cb.total_size(),
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_seq: self.max_seq,
            pad_id: Some(cb.special().pad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeSettings {
    pub max_len: usize,
    pub beam_width: usize,
    /// Beam candidates per input when collecting preferences.
    pub candidates: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            max_len: 16,
            beam_width: 1,
            candidates: 4,
        }
    }
}

impl DecodeSettings {
    pub fn config(&self, cb: &JointCodebook) -> DecodeConfig {
        DecodeConfig::for_codebook(cb, self.max_len, self.beam_width)
    }
}

/// Everything one run needs. The defaults are sized for a laptop; the
/// per-stage structs keep their own published defaults when built directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthSpec,
    pub model: ModelShape,
    pub lora: LoraConfig,
    pub pretrain: PretrainConfig,
    pub kd: TrainConfig,
    pub po: PoConfig,
    pub decode: DecodeSettings,
    /// Put the acoustic prompt into the teacher context.
    pub acoustic_prompt: bool,
    /// Append the instruction to the student context.
    pub student_instruct: bool,
    /// Request timeout for a remote judge.
    pub judge_timeout_secs: f64,
    pub model_seed: u64,
    pub adapter_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            synth: SynthSpec::default(),
            model: ModelShape::default(),
            lora: LoraConfig::default(),
            pretrain: PretrainConfig {
                learning_rate: 3e-3,
                batch_size: 16,
                steps: 400,
                seed: 0,
            },
            kd: TrainConfig {
                learning_rate: 0.5,
                batch_size: 16,
                warmup_steps: 20,
                grad_accum: 1,
                max_steps: 500,
                seed: 0,
                eval_interval: 100,
            },
            po: PoConfig {
                beta: 0.1,
                learning_rate: 1e-3,
                max_steps: 1000,
                batch_size: 16,
                seed: 0,
            },
            decode: DecodeSettings::default(),
            acoustic_prompt: true,
            student_instruct: true,
            judge_timeout_secs: 30.0,
            model_seed: 0,
            adapter_seed: 1,
        }
    }
}

impl PipelineConfig {
    /// Reseeds every stochastic stage from one generator.
    pub fn reseed(&mut self, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        self.model_seed = r.random();
        self.adapter_seed = r.random();
        self.pretrain.seed = r.random();
        self.kd.seed = r.random();
        self.po.seed = r.random();
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::datastore::load_config(path)
    }
}

/// Corpus directory: `pairs.jsonl`, `codebook.json`, `clues.tsv`, `split.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub codebook: JointCodebook,
    pub clues: ClueVocabulary,
    pub pairs: Vec<SpeechCaptionPair>,
    pub split: Split,
    pub instruct: String,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    instruct: String,
    #[serde(flatten)]
    split: Split,
}

impl Dataset {
    pub fn from_synth(c: SynthCorpus, instruct: &str) -> Self {
        Dataset {
            codebook: c.codebook,
            clues: c.clues,
            pairs: c.pairs,
            split: c.split,
            instruct: instruct.to_owned(),
        }
    }

    pub fn synth(spec: &SynthSpec) -> Result<Self> {
        Ok(Self::from_synth(crate::datastore::synth_dataset(spec)?, &spec.instruct))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_pairs(dir.join("pairs.jsonl"), &self.pairs)?;
        self.codebook.save(dir.join("codebook.json"))?;
        let clues = dir.join("clues.tsv");
        std::fs::write(&clues, self.clues.to_tsv()).map_err(|e| Error::io(&clues, e))?;
        let split = dir.join("split.json");
        let doc = SplitFile {
            instruct: self.instruct.clone(),
            split: self.split.clone(),
        };
        std::fs::write(&split, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&split, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let codebook = JointCodebook::load(dir.join("codebook.json"))?;
        let clues = ClueVocabulary::load(dir.join("clues.tsv"))?;
        let pairs = load_pairs_checked(dir.join("pairs.jsonl"), &codebook)?;
        let split_path = dir.join("split.json");
        let s = std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let doc: SplitFile = serde_json::from_str(&s)?;
        if let Some(&i) = doc
            .split
            .train
            .iter()
            .chain(&doc.split.val)
            .chain(&doc.split.test)
            .find(|&&i| i >= pairs.len())
        {
            return Err(Error::Config(format!("split index {i} beyond {} pairs", pairs.len())));
        }
        Ok(Dataset {
            codebook,
            clues,
            pairs,
            split: doc.split,
            instruct: doc.instruct,
        })
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&SpeechCaptionPair> {
        idx.iter().map(|&i| &self.pairs[i]).collect()
    }

    /// `BOS speech SEP instruct`, or `BOS speech` without the instruction.
    pub fn student_context(&self, pair: &SpeechCaptionPair, with_instruct: bool) -> TokenSeq {
        let sp = self.codebook.special();
        let mut t = TokenSeq::new(vec![sp.bos]);
        t.extend_from(&pair.speech_seq());
        if with_instruct {
            t.push(sp.sep);
            t.extend_from(&self.codebook.encode_text(&self.instruct));
        }
        t
    }

    /// Text prefix with or without the acoustic prompt.
    pub fn teacher_context(&self, pair: &SpeechCaptionPair, acoustic: bool) -> TokenSeq {
        let mut p = PrefixPrompt::from_caption(&self.clues, &pair.caption, &self.instruct);
        if !acoustic {
            p.acoustic = render_acoustic_prompt(&[]);
        }
        assemble_prefix(&p, &self.codebook)
    }

    pub fn kd_items(&self, idx: &[usize], cfg: &PipelineConfig) -> Vec<KdItem> {
        self.subset(idx)
            .into_iter()
            .map(|p| KdItem {
                teacher_ctx: self.teacher_context(p, cfg.acoustic_prompt),
                student_ctx: self.student_context(p, cfg.student_instruct),
                target: response_tokens(&self.codebook, &p.caption),
            })
            .collect()
    }
}

/// Stand-in for a pretrained language model: fits a fresh transformer to the
/// caption given each training text prefix, with and without the acoustic
/// prompt, so every ablation shares one base.
pub fn pretrain_base(ds: &Dataset, cfg: &PipelineConfig) -> Result<(ModelParams, Vec<f64>)> {
    let mc = cfg.model.config(&ds.codebook);
    let init = ModelParams::init(&mc, cfg.model_seed)?;
    let mut data = Vec::with_capacity(2 * ds.split.train.len());
    for p in ds.subset(&ds.split.train) {
        let target = response_tokens(&ds.codebook, &p.caption);
        data.push((ds.teacher_context(p, true), target.clone()));
        data.push((ds.teacher_context(p, false), target));
    }
    pretrain_lm(&init, &data, &cfg.pretrain)
}

/// How the adapter learns from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignTarget {
    /// Teacher next-token distributions.
    Teacher,
    /// The reference caption only (one-hot targets).
    GroundTruth,
}

#[derive(Debug, Clone)]
pub struct KdRun {
    pub adapter: LoraAdapter,
    pub log: Vec<KdLogRecord>,
}

pub fn distill(base: &ModelParams, ds: &Dataset, cfg: &PipelineConfig, target: AlignTarget) -> Result<KdRun> {
    let init = LoraAdapter::init(base, &cfg.lora, cfg.adapter_seed)?;
    let train = ds.kd_items(&ds.split.train, cfg);
    let held = ds.kd_items(&ds.split.val, cfg);
    let (tc, hc) = match target {
        AlignTarget::Teacher => (TeacherCache::build(base, &train)?, TeacherCache::build(base, &held)?),
        AlignTarget::GroundTruth => {
            let v = base.config.vocab;
            (TeacherCache::one_hot(&train, v)?, TeacherCache::one_hot(&held, v)?)
        }
    };
    let (adapter, log) = train_kd_cached(base, &init, &train, &tc, &held, &hc, &cfg.kd)?;
    Ok(KdRun { adapter, log })
}

/// Judge-scored preference records over the training split.
pub fn gen_prefs(
    base: &ModelParams,
    adapter: Option<&LoraAdapter>,
    ds: &Dataset,
    cfg: &PipelineConfig,
    judge: &dyn Judge,
) -> Result<Vec<PrefRecord>> {
    let sources: Vec<PrefSource> = ds
        .subset(&ds.split.train)
        .into_iter()
        .map(|p| PrefSource {
            x: ds.student_context(p, cfg.student_instruct),
            reference: p.caption.clone(),
        })
        .collect();
    collect_preferences(
        base,
        adapter,
        &ds.codebook,
        judge,
        &sources,
        cfg.decode.candidates,
        &cfg.decode.config(&ds.codebook),
    )
}

/// Ground-truth captions against copies with some words swapped for other
/// caption words: `per_item` pairs for every training item.
pub fn corrupted_pairs(ds: &Dataset, cfg: &PipelineConfig, per_item: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab: Vec<String> = Vec::new();
    for p in &ds.pairs {
        for w in p.caption.split_whitespace() {
            if !vocab.iter().any(|v| v == w) {
                vocab.push(w.to_owned());
            }
        }
    }
    let mut out = Vec::new();
    for p in ds.subset(&ds.split.train) {
        let x = ds.student_context(p, cfg.student_instruct);
        let words: Vec<&str> = p.caption.split_whitespace().collect();
        let chosen = response_tokens(&ds.codebook, &p.caption);
        let mut made = 0;
        while made < per_item {
            let mut w: Vec<String> = words.iter().map(|s| s.to_string()).collect();
            let n_swaps = rng.random_range(1..=2);
            for _ in 0..n_swaps {
                let i = rng.random_range(0..w.len());
                w[i] = vocab.choose(&mut rng).expect("non-empty vocabulary").clone();
            }
            let text = w.join(" ");
            if text == p.caption {
                continue;
            }
            out.push(PreferencePair {
                x: x.clone(),
                chosen: chosen.clone(),
                rejected: response_tokens(&ds.codebook, &text),
                chosen_score: 10.0,
                rejected_score: 0.0,
            });
            made += 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct PoRun {
    pub adapter: LoraAdapter,
    pub log: Vec<PoLogRecord>,
}

/// Preference training of a copy of `adapter`, with the adapter itself as reference.
pub fn po_stage(base: &ModelParams, adapter: &LoraAdapter, pairs: &[PreferencePair], cfg: &PoConfig) -> Result<PoRun> {
    let (adapter, log) = train_po(base, adapter, base, Some(adapter), pairs, cfg)?;
    Ok(PoRun { adapter, log })
}

/// Best beam hypothesis for each item, rendered as text.
pub fn generate_captions(
    base: &ModelParams,
    adapter: Option<&LoraAdapter>,
    ds: &Dataset,
    idx: &[usize],
    cfg: &PipelineConfig,
) -> Result<Vec<String>> {
    let lm = Lm::new(base, adapter)?;
    let dc = cfg.decode.config(&ds.codebook);
    ds.subset(idx)
        .par_iter()
        .map(|p| {
            let x = ds.student_context(p, cfg.student_instruct);
            let best = beam_decode(&lm, &x, &dc)?.into_iter().next();
            match best {
                Some(h) => render_caption(&ds.codebook, &h.tokens),
                None => Ok(String::new()),
            }
        })
        .collect()
}

/// Text form of generated ids; speech ids render as `<speech>`.
pub fn render_caption(cb: &JointCodebook, seq: &TokenSeq) -> Result<String> {
    let mut words = Vec::with_capacity(seq.len());
    for &id in &seq.ids {
        match cb.kind(id) {
            Some(crate::codebook::TokenKind::Speech) => words.push("<speech>".to_owned()),
            _ => {
                let w = cb.decode_text(&TokenSeq::new(vec![id]))?;
                if !w.is_empty() {
                    words.push(w);
                }
            }
        }
    }
    Ok(words.join(" "))
}

pub fn score_captions(ds: &Dataset, idx: &[usize], candidates: &[String]) -> Result<MetricReport> {
    let items: Vec<EvalItem> = ds
        .subset(idx)
        .into_iter()
        .zip(candidates)
        .map(|(p, c)| EvalItem::new(c.clone(), [p.caption.clone()]))
        .collect();
    evalkit::evaluate(&EvalCorpus::from(items), &SynonymMap::new(), BleuOptions::default())
}

/// Headline numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl From<&MetricReport> for Scores {
    fn from(r: &MetricReport) -> Self {
        Scores {
            bleu4: r.bleu4,
            meteor: r.meteor,
            rouge_l: r.rouge_l,
            cider: r.cider,
        }
    }
}

impl Scores {
    fn minus(&self, o: &Scores) -> Scores {
        Scores {
            bleu4: self.bleu4 - o.bleu4,
            meteor: self.meteor - o.meteor,
            rouge_l: self.rouge_l - o.rouge_l,
            cider: self.cider - o.cider,
        }
    }
}

fn test_scores(base: &ModelParams, adapter: &LoraAdapter, ds: &Dataset, cfg: &PipelineConfig) -> Result<Scores> {
    let caps = generate_captions(base, Some(adapter), ds, &ds.split.test, cfg)?;
    Ok(Scores::from(&score_captions(ds, &ds.split.test, &caps)?))
}

/// Distillation, preference collection and preference training with the
/// given components switched on. Returns test-split scores.
pub fn run_variant(
    base: &ModelParams,
    ds: &Dataset,
    cfg: &PipelineConfig,
    judge: &dyn Judge,
    acoustic: bool,
    kd: bool,
    po: bool,
) -> Result<Scores> {
    let mut vc = cfg.clone();
    vc.acoustic_prompt = acoustic;
    let target = if kd { AlignTarget::Teacher } else { AlignTarget::GroundTruth };
    let kd_run = distill(base, ds, &vc, target)?;
    let mut adapter = kd_run.adapter;
    if po {
        let recs = gen_prefs(base, Some(&adapter), ds, &vc, judge)?;
        if recs.is_empty() {
            log::warn!("no usable preference pairs; skipping preference training");
        } else {
            let pairs: Vec<PreferencePair> = recs.iter().map(|r| r.to_pair(&ds.codebook)).collect();
            adapter = po_stage(base, &adapter, &pairs, &vc.po)?.adapter;
        }
    }
    test_scores(base, &adapter, ds, &vc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub acoustic_prompt: bool,
    pub kd: bool,
    pub po: bool,
    pub scores: Scores,
    /// Row minus the full system; zero for the full row.
    pub delta: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Full system and each component removed in turn. Without distillation the
/// adapter is fit to the reference captions alone.
pub fn ablate(base: &ModelParams, ds: &Dataset, cfg: &PipelineConfig, judge: &dyn Judge) -> Result<AblationTable> {
    let variants = [
        ("full", true, true, true),
        ("-P_act", false, true, true),
        ("-L_KL", true, false, true),
        ("-L_PO", true, true, false),
    ];
    let mut rows: Vec<AblationRow> = Vec::with_capacity(4);
    for (name, a, k, p) in variants {
        log::info!("ablation row {name}");
        let scores = run_variant(base, ds, cfg, judge, a, k, p)?;
        let delta = match rows.first() {
            Some(full) => scores.minus(&full.scores),
            None => scores.minus(&scores),
        };
        rows.push(AblationRow {
            name: name.into(),
            acoustic_prompt: a,
            kd: k,
            po: p,
            scores,
            delta,
        });
    }
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    /// Pairs actually used (the pool may be smaller than `size`).
    pub pairs_used: usize,
    pub steps: usize,
    pub final_accuracy: Option<f64>,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub pool: usize,
    pub points: Vec<SweepPoint>,
}

/// Preference training from the same adapter on the first `size` records of
/// `pool`, for each size.
pub fn sweep_prefs(
    base: &ModelParams,
    adapter: &LoraAdapter,
    ds: &Dataset,
    cfg: &PipelineConfig,
    pool: &[PrefRecord],
    sizes: &[usize],
) -> Result<SweepCurve> {
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let used = size.min(pool.len());
        let pairs: Vec<PreferencePair> = pool[..used].iter().map(|r| r.to_pair(&ds.codebook)).collect();
        let (ad, acc) = if used == 0 {
            (adapter.clone(), None)
        } else {
            let run = po_stage(base, adapter, &pairs, &cfg.po)?;
            let acc = run.log.last().map(|r| r.stats.accuracy);
            (run.adapter, acc)
        };
        points.push(SweepPoint {
            size,
            pairs_used: used,
            steps: if used == 0 { 0 } else { cfg.po.max_steps },
            final_accuracy: acc,
            scores: test_scores(base, &ad, ds, cfg)?,
        });
    }
    Ok(SweepCurve {
        pool: pool.len(),
        points,
    })
}

/// Clues and rendered acoustic prompt of one caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCaption {
    pub id: String,
    pub clues: Vec<String>,
    pub acoustic_prompt: String,
}

pub fn parse_captions(clues: &ClueVocabulary, pairs: &[SpeechCaptionPair]) -> Vec<ParsedCaption> {
    pairs
        .iter()
        .map(|p| {
            let c = extract_clues(clues, &p.caption);
            ParsedCaption {
                id: p.id.clone(),
                acoustic_prompt: render_acoustic_prompt(&c).rendered,
                clues: c,
            }
        })
        .collect()
}
