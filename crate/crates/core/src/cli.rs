//! The `aligncap` command line.
//!
//! Every subcommand reads its settings from an optional JSON
//! [`PipelineConfig`] and writes plain files; `--seed` reseeds all stochastic
//! stages so reruns give byte-identical artifacts.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::datastore::{write_jsonl, Checkpoint};
use crate::emoparse::{extract_clues, render_acoustic_prompt, ClueVocabulary};
use crate::error::{Error, Result};
use crate::evalkit::{self, BleuOptions, CandidateRecord, ReferenceRecord, SynonymMap};
use crate::lm::{LoraAdapter, ModelParams};
use crate::pipeline::{self, AlignTarget, Dataset, PipelineConfig};
use crate::prefopt::{load_prefs, save_prefs, HttpJudge, Judge, MockJudge, PreferencePair};

#[derive(Debug, Parser)]
#[command(
    name = "aligncap",
    version,
    about = "Speech-emotion caption alignment on synthetic token corpora",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Corpus directory, or the `pairs.jsonl` inside one.
    #[arg(long, required = true)]
    data: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic archetype corpus to a directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Print the acoustic prompt for one caption.
    ParseClues {
        #[arg(long, required = true)]
        vocab: PathBuf,
        #[arg(long, required = true)]
        caption: String,
    },
    /// Fit the base model, then distill the teacher into a speech-conditioned adapter.
    TrainKd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required = true)]
        out: PathBuf,
        /// Reuse the base weights of an existing checkpoint instead of fitting one.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Per-step metrics log; defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Sample beam candidates, score them with a judge and write preference pairs.
    GenPrefs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required = true)]
        model: PathBuf,
        /// `mock` or the endpoint URL of a remote judge.
        #[arg(long, default_value = "mock")]
        judge: String,
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Preference-train the adapter of a checkpoint against a frozen copy of it.
    TrainPo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required = true)]
        model: PathBuf,
        #[arg(long, required = true)]
        prefs: PathBuf,
        #[arg(long, required = true)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Caption a split; writes candidates and optionally its references.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required = true)]
        model: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
        #[arg(long, required = true)]
        out: PathBuf,
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Score candidates against references.
    Evaluate {
        #[arg(long, required = true)]
        candidates: PathBuf,
        #[arg(long, required = true)]
        references: PathBuf,
        #[arg(long, required = true)]
        report: PathBuf,
        /// Average sentence-level BLEU instead of pooling counts.
        #[arg(long)]
        sentence_bleu: bool,
    },
    /// Preference training at several pool sizes from one distilled adapter.
    SweepPrefs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Distilled checkpoint; trained from scratch when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "mock")]
        judge: String,
        /// Comma-separated pool sizes; `0,s,2s,4s` with `s` a quarter of the pool when absent.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, required = true)]
        out: PathBuf,
    },
    /// Full system against each component removed in turn.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Take the base weights from this checkpoint instead of fitting them.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value = "mock")]
        judge: String,
        /// Step count for both distillation and preference training.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, required = true)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.synth.seed = s;
        cfg.reseed(s);
    }
    Ok(cfg)
}

fn load_data(arg: &DataArg) -> Result<Dataset> {
    let dir = if arg.data.is_dir() {
        arg.data.as_path()
    } else {
        arg.data.parent().unwrap_or(Path::new("."))
    };
    Dataset::load(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn log_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".metrics.jsonl");
        PathBuf::from(s)
    })
}

/// Base weights and adapter of a distilled checkpoint.
fn load_model(path: &Path) -> Result<(ModelParams, LoraAdapter)> {
    let ck = Checkpoint::load(path)?;
    let params = ck
        .params
        .ok_or_else(|| Error::Config(format!("{} holds no base weights", path.display())))?;
    let adapter = ck
        .adapter
        .ok_or_else(|| Error::Config(format!("{} holds no adapter", path.display())))?;
    adapter.check_compatible(&params)?;
    Ok((params, adapter))
}

fn load_base(path: &Path) -> Result<ModelParams> {
    Checkpoint::load(path)?
        .params
        .ok_or_else(|| Error::Config(format!("{} holds no base weights", path.display())))
}

fn make_judge(spec: &str, ds: &Dataset, cfg: &PipelineConfig) -> Box<dyn Judge> {
    if spec == "mock" {
        Box::new(MockJudge::new(ds.clues.clone()))
    } else {
        Box::new(HttpJudge::new(spec, Duration::from_secs_f64(cfg.judge_timeout_secs)))
    }
}

fn to_pairs(ds: &Dataset, path: &Path) -> Result<Vec<PreferencePair>> {
    let recs = load_prefs(path)?;
    recs.iter()
        .map(|r| {
            let p = r.to_pair(&ds.codebook);
            ds.codebook.validate(&p.x)?;
            Ok(p)
        })
        .collect()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let ds = Dataset::synth(&cfg.synth)?;
            ds.save(&out)?;
            log::info!("{} pairs written to {}", ds.pairs.len(), out.display());
        }
        Command::ParseClues { vocab, caption } => {
            let v = ClueVocabulary::load(&vocab)?;
            println!("{}", render_acoustic_prompt(&extract_clues(&v, &caption)).rendered);
        }
        Command::TrainKd {
            common,
            data,
            out,
            base,
            steps,
            log,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.kd.max_steps = s;
            }
            let ds = load_data(&data)?;
            let params = match base {
                Some(p) => load_base(&p)?,
                None => pipeline::pretrain_base(&ds, &cfg)?.0,
            };
            let run = pipeline::distill(&params, &ds, &cfg, AlignTarget::Teacher)?;
            if let Some(last) = run.log.last() {
                log::info!("step {} loss {:.4} kl {:.4}", last.step, last.loss, last.kl);
            }
            write_jsonl(log_path(&out, &log), &run.log)?;
            Checkpoint::model(params)
                .with_adapter(run.adapter)
                .with_codebook(ds.codebook.clone())
                .save(&out)?;
        }
        Command::GenPrefs {
            common,
            data,
            model,
            judge,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&data)?;
            let (params, adapter) = load_model(&model)?;
            let j = make_judge(&judge, &ds, &cfg);
            let recs = pipeline::gen_prefs(&params, Some(&adapter), &ds, &cfg, j.as_ref())?;
            log::info!("{} preference pairs", recs.len());
            save_prefs(&out, &recs)?;
        }
        Command::TrainPo {
            common,
            data,
            model,
            prefs,
            out,
            steps,
            log,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.po.max_steps = s;
            }
            let ds = load_data(&data)?;
            let (params, adapter) = load_model(&model)?;
            let pairs = to_pairs(&ds, &prefs)?;
            let run = pipeline::po_stage(&params, &adapter, &pairs, &cfg.po)?;
            if let Some(last) = run.log.last() {
                log::info!("step {} loss {:.4} accuracy {:.3}", last.step, last.stats.loss, last.stats.accuracy);
            }
            write_jsonl(log_path(&out, &log), &run.log)?;
            Checkpoint::model(params)
                .with_adapter(run.adapter)
                .with_codebook(ds.codebook.clone())
                .save(&out)?;
        }
        Command::Generate {
            common,
            data,
            model,
            split,
            out,
            references,
        } => {
            let cfg = load_config(&common)?;
            let ds = load_data(&data)?;
            let (params, adapter) = load_model(&model)?;
            let idx = match split.as_str() {
                "train" => &ds.split.train,
                "val" => &ds.split.val,
                _ => &ds.split.test,
            };
            let caps = pipeline::generate_captions(&params, Some(&adapter), &ds, idx, &cfg)?;
            let items = ds.subset(idx);
            let cands: Vec<CandidateRecord> = items
                .iter()
                .zip(caps)
                .map(|(p, text)| CandidateRecord { id: p.id.clone(), text })
                .collect();
            evalkit::save_candidates(&out, &cands)?;
            if let Some(r) = references {
                let refs: Vec<ReferenceRecord> = items
                    .iter()
                    .map(|p| ReferenceRecord {
                        id: p.id.clone(),
                        texts: vec![p.caption.clone()],
                    })
                    .collect();
                evalkit::save_references(&r, &refs)?;
            }
        }
        Command::Evaluate {
            candidates,
            references,
            report,
            sentence_bleu,
        } => {
            let (ids, corpus) = evalkit::load_corpus(&candidates, &references)?;
            let opts = BleuOptions {
                sentence_mean: sentence_bleu,
                ..Default::default()
            };
            let mut rep = evalkit::evaluate(&corpus, &SynonymMap::new(), opts)?;
            for (item, id) in rep.items.iter_mut().zip(ids) {
                item.id = Some(id);
            }
            log::info!(
                "B@4 {:.4} METEOR {:.4} ROUGE-L {:.4} CIDEr {:.4}",
                rep.bleu4,
                rep.meteor,
                rep.rouge_l,
                rep.cider
            );
            write_json(&report, &rep)?;
        }
        Command::SweepPrefs {
            common,
            data,
            model,
            judge,
            sizes,
            steps,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.po.max_steps = s;
            }
            let ds = load_data(&data)?;
            let (params, adapter) = match model {
                Some(p) => load_model(&p)?,
                None => {
                    let params = pipeline::pretrain_base(&ds, &cfg)?.0;
                    let ad = pipeline::distill(&params, &ds, &cfg, AlignTarget::Teacher)?.adapter;
                    (params, ad)
                }
            };
            let j = make_judge(&judge, &ds, &cfg);
            let pool = pipeline::gen_prefs(&params, Some(&adapter), &ds, &cfg, j.as_ref())?;
            let sizes = sizes.unwrap_or_else(|| {
                let s = pool.len() / 4;
                vec![0, s, 2 * s, 4 * s]
            });
            let curve = pipeline::sweep_prefs(&params, &adapter, &ds, &cfg, &pool, &sizes)?;
            write_json(&out, &curve)?;
        }
        Command::Ablate {
            common,
            data,
            base,
            judge,
            steps,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.kd.max_steps = s;
                cfg.po.max_steps = s;
            }
            let ds = load_data(&data)?;
            let params = match base {
                Some(p) => load_base(&p)?,
                None => pipeline::pretrain_base(&ds, &cfg)?.0,
            };
            let j = make_judge(&judge, &ds, &cfg);
            let table = pipeline::ablate(&params, &ds, &cfg, j.as_ref())?;
            for r in &table.rows {
                log::info!(
                    "{:<7} B@4 {:+.4} METEOR {:+.4} ROUGE-L {:+.4} CIDEr {:+.4}",
                    r.name,
                    r.delta.bleu4,
                    r.delta.meteor,
                    r.delta.rouge_l,
                    r.delta.cider
                );
            }
            write_json(&out, &table)?;
        }
    }
    Ok(())
}
