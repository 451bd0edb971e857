use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Mat;
use crate::error::{Error, Result};

/// Shape of the decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    /// Token that never receives probability mass.
    pub pad_id: Option<u32>,
}

impl ModelConfig {
    /// L=2, H=2, d=32, d_ff=64.
    pub fn desk(vocab: usize) -> Self {
        ModelConfig {
            vocab,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            max_seq: 64,
            pad_id: Some(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if let Some(p) = self.pad_id {
            if p as usize >= self.vocab {
                return Err(Error::Config(format!("pad_id {p} outside vocab {}", self.vocab)));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

/// Parameters of the model. Weight matrices are stored `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<Layer>,
    pub lnf_g: Mat,
    pub lnf_b: Mat,
    pub w_out: Mat,
    pub b_out: Mat,
}

/// Uniform access to the named arrays of a parameter container.
pub trait ParamSet {
    fn arrays(&self) -> Vec<(String, &Mat)>;
    fn arrays_mut(&mut self) -> Vec<(String, &mut Mat)>;

    fn num_scalars(&self) -> usize {
        self.arrays().iter().map(|(_, m)| m.data.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, m)| m.is_finite())
    }

    /// `self += alpha * other`; shapes must agree.
    fn axpy(&mut self, alpha: f64, other: &Self) {
        let src = other.arrays();
        for ((_, dst), (_, s)) in self.arrays_mut().into_iter().zip(src) {
            for (d, v) in dst.data.iter_mut().zip(&s.data) {
                *d += alpha * v;
            }
        }
    }

    fn scale(&mut self, alpha: f64) {
        for (_, m) in self.arrays_mut() {
            m.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    fn zero(&mut self) {
        for (_, m) in self.arrays_mut() {
            m.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn flatten(&self) -> Vec<f64> {
        self.arrays()
            .iter()
            .flat_map(|(_, m)| m.data.iter().copied())
            .collect()
    }

    /// Mutable reference to the `i`-th scalar in flattening order.
    fn scalar_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for (_, m) in self.arrays_mut() {
            if i < m.data.len() {
                return Some(&mut m.data[i]);
            }
            i -= m.data.len();
        }
        None
    }

    /// Name of the array holding the `i`-th scalar.
    fn scalar_name(&self, mut i: usize) -> Option<String> {
        for (name, m) in self.arrays() {
            if i < m.data.len() {
                return Some(name);
            }
            i -= m.data.len();
        }
        None
    }

    fn l2_norm(&self) -> f64 {
        self.arrays()
            .iter()
            .flat_map(|(_, m)| m.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl Layer {
    fn zeros(d: usize, d_ff: usize) -> Self {
        let sq = || Mat::zeros(d, d);
        let vec = |n| Mat::zeros(1, n);
        Layer {
            ln1_g: Mat::filled(1, d, 1.0),
            ln1_b: vec(d),
            wq: sq(),
            bq: vec(d),
            wk: sq(),
            bk: vec(d),
            wv: sq(),
            bv: vec(d),
            wo: sq(),
            bo: vec(d),
            ln2_g: Mat::filled(1, d, 1.0),
            ln2_b: vec(d),
            w1: Mat::zeros(d_ff, d),
            b1: vec(d_ff),
            w2: Mat::zeros(d, d_ff),
            b2: vec(d),
        }
    }

    fn named(&self) -> [(&'static str, &Mat); 16] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Mat); 16] {
        [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

impl ModelParams {
    /// All-zero parameters (layer-norm gains one) of the given shape.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (v, d) = (config.vocab, config.d_model);
        Ok(ModelParams {
            tok_emb: Mat::zeros(v, d),
            pos_emb: Mat::zeros(config.max_seq, d),
            layers: (0..config.n_layers)
                .map(|_| Layer::zeros(d, config.d_ff))
                .collect(),
            lnf_g: Mat::filled(1, d, 1.0),
            lnf_b: Mat::zeros(1, d),
            w_out: Mat::zeros(v, d),
            b_out: Mat::zeros(1, v),
            config: config.clone(),
        })
    }

    /// Gradient buffer with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// Seeded scaled-normal initialization: weights `N(0, 1/d_in)`,
    /// embeddings `N(0, 1)`, gains one and biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, m) in p.arrays_mut() {
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let std = match leaf {
                "tok_emb" | "pos_emb" => 1.0,
                "wq" | "wk" | "wv" | "wo" | "w1" | "w2" | "w_out" => 1.0 / (m.cols as f64).sqrt(),
                _ => continue,
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            m.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Ok(p)
    }

    /// Array by manifest name.
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.arrays().into_iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.arrays_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }
}

impl ParamSet for ModelParams {
    fn arrays(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.named().into_iter().map(|(n, m)| (format!("layers.{i}.{n}"), m)));
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), &self.b_out));
        out
    }

    fn arrays_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(
                l.named_mut()
                    .into_iter()
                    .map(|(n, m)| (format!("layers.{i}.{n}"), m)),
            );
        }
        out.push(("lnf_g".into(), &mut self.lnf_g));
        out.push(("lnf_b".into(), &mut self.lnf_b));
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), &mut self.b_out));
        out
    }
}

/// Weight matrices a low-rank adapter may attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoraTarget {
    Query,
    Key,
    Value,
    AttnOut,
    FfnUp,
    FfnDown,
    Head,
}

impl LoraTarget {
    pub const ALL: [LoraTarget; 7] = [
        LoraTarget::Query,
        LoraTarget::Key,
        LoraTarget::Value,
        LoraTarget::AttnOut,
        LoraTarget::FfnUp,
        LoraTarget::FfnDown,
        LoraTarget::Head,
    ];

    fn array_names(&self, n_layers: usize) -> Vec<String> {
        let leaf = match self {
            LoraTarget::Query => "wq",
            LoraTarget::Key => "wk",
            LoraTarget::Value => "wv",
            LoraTarget::AttnOut => "wo",
            LoraTarget::FfnUp => "w1",
            LoraTarget::FfnDown => "w2",
            LoraTarget::Head => return vec!["w_out".into()],
        };
        (0..n_layers).map(|i| format!("layers.{i}.{leaf}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
}

impl Default for LoraConfig {
    /// Rank 8 on every projection, `alpha == rank`.
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 8.0,
            targets: LoraTarget::ALL.to_vec(),
        }
    }
}

/// Low-rank delta for one weight: `W_eff = W + scale · A · B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraEntry {
    pub target: String,
    /// `d_out × r`
    pub a: Mat,
    /// `r × d_in`
    pub b: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub scale: f64,
    pub entries: Vec<LoraEntry>,
}

impl LoraAdapter {
    /// `A` drawn from `N(0, 1/r)`, `B` zero, so the adapter starts as the identity.
    pub fn init(base: &ModelParams, cfg: &LoraConfig, seed: u64) -> Result<Self> {
        if cfg.rank == 0 {
            return Err(Error::Config("adapter rank must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (cfg.rank as f64).sqrt()).expect("positive std");
        let mut entries = Vec::new();
        for t in &cfg.targets {
            for name in t.array_names(base.config.n_layers) {
                let w = base
                    .get(&name)
                    .ok_or_else(|| Error::MissingArray(name.clone()))?;
                entries.push(LoraEntry {
                    target: name,
                    a: Mat::from_fn(w.rows, cfg.rank, || normal.sample(&mut rng)),
                    b: Mat::zeros(cfg.rank, w.cols),
                });
            }
        }
        Ok(LoraAdapter {
            rank: cfg.rank,
            scale: cfg.alpha / cfg.rank as f64,
            entries,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    /// Checks every target exists in `base` with a compatible shape.
    pub fn check_compatible(&self, base: &ModelParams) -> Result<()> {
        for e in &self.entries {
            let w = base
                .get(&e.target)
                .ok_or_else(|| Error::MissingArray(e.target.clone()))?;
            if e.a.rows != w.rows || e.b.cols != w.cols || e.a.cols != self.rank || e.b.rows != self.rank {
                return Err(Error::ShapeMismatch {
                    name: e.target.clone(),
                    expected: vec![w.rows, w.cols],
                    found: vec![e.a.rows, e.b.cols],
                });
            }
        }
        Ok(())
    }

    /// Base parameters with every delta folded in.
    pub fn merge_into(&self, base: &ModelParams) -> Result<ModelParams> {
        self.check_compatible(base)?;
        let mut out = base.clone();
        for e in &self.entries {
            let delta = e.a.matmul(&e.b);
            let w = out.get_mut(&e.target).expect("checked above");
            for (dst, d) in w.data.iter_mut().zip(&delta.data) {
                *dst += self.scale * d;
            }
        }
        Ok(out)
    }

    /// Chain rule from gradients w.r.t. the merged weights to `A` and `B`.
    pub fn grads_from_merged(&self, merged_grads: &ModelParams) -> LoraAdapter {
        let mut out = self.zeros_like();
        for (g, e) in out.entries.iter_mut().zip(&self.entries) {
            let dw = merged_grads.get(&e.target).expect("target exists");
            let mut da = dw.matmul(&e.b.transpose());
            let mut db = e.a.transpose().matmul(dw);
            da.data.iter_mut().for_each(|v| *v *= self.scale);
            db.data.iter_mut().for_each(|v| *v *= self.scale);
            g.a = da;
            g.b = db;
        }
        out
    }
}

impl ParamSet for LoraAdapter {
    fn arrays(&self) -> Vec<(String, &Mat)> {
        self.entries
            .iter()
            .flat_map(|e| [(format!("{}.lora_a", e.target), &e.a), (format!("{}.lora_b", e.target), &e.b)])
            .collect()
    }

    fn arrays_mut(&mut self) -> Vec<(String, &mut Mat)> {
        self.entries
            .iter_mut()
            .flat_map(|e| {
                let t = e.target.clone();
                [(format!("{t}.lora_a"), &mut e.a), (format!("{t}.lora_b"), &mut e.b)]
            })
            .collect()
    }
}
