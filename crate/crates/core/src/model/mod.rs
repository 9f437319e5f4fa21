//! Plaintext reference transformer: the ground truth every secure run is
//! compared against.
//!
//! Post-LN blocks (`MHA → residual → norm → FFN → residual → norm`) with an
//! embedding norm up front, and either a BERT-style pooler + classifier or a
//! language-model head at the end. Linear layers store weights as
//! `(out × in)` and compute `X · Wᵀ`.

pub mod ops;
pub mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::RealTensor;

pub use ops::NORM_EPS;

/// Additive surrogate for `-inf` in attention masks.
pub const MASK_VALUE: f64 = -1.0e4;

/// Token id used to pad sequences up to `seq_len`.
pub const PAD_TOKEN: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
    SiluGate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Maximum (and padded) sequence length n.
    pub seq_len: usize,
    /// Feature dimension d.
    pub d_model: usize,
    pub heads: usize,
    /// FFN intermediate dimension k.
    pub d_ff: usize,
    pub vocab: usize,
    pub blocks: usize,
    pub arch: Arch,
    pub norm: NormKind,
    pub activation: Activation,
    /// Output classes of the encoder head; ignored by decoders.
    pub classes: usize,
}

impl ModelConfig {
    /// The small configuration used throughout the tests: n=8, d=16, h=2, k=32, V=50, 2 blocks.
    pub fn toy_encoder() -> Self {
        Self {
            seq_len: 8,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            vocab: 50,
            blocks: 2,
            arch: Arch::Encoder,
            norm: NormKind::LayerNorm,
            activation: Activation::Gelu,
            classes: 3,
        }
    }

    pub fn toy_decoder() -> Self {
        Self {
            arch: Arch::Decoder,
            ..Self::toy_encoder()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("seq_len", self.seq_len),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("blocks", self.blocks),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::ConfigMismatch(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::ConfigMismatch(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.arch == Arch::Encoder && self.classes == 0 {
            return Err(Error::ConfigMismatch("encoder needs at least one class".into()));
        }
        Ok(())
    }

    /// Width of the output logits.
    pub fn output_width(&self) -> usize {
        match self.arch {
            Arch::Encoder => self.classes,
            Arch::Decoder => self.vocab,
        }
    }
}

/// Norm affine parameters; `beta` is absent for RMSNorm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: RealTensor,
    pub beta: Option<RealTensor>,
}

impl NormParams {
    pub fn apply(&self, x: &RealTensor) -> Result<RealTensor> {
        match &self.beta {
            Some(beta) => ops::layernorm(x, &self.gamma, beta, NORM_EPS),
            None => ops::rmsnorm(x, &self.gamma, NORM_EPS),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub w_q: RealTensor,
    pub w_k: RealTensor,
    pub w_v: RealTensor,
    pub w_o: RealTensor,
    pub b_o: RealTensor,
    pub norm1: NormParams,
    pub w_1: RealTensor,
    pub b_1: RealTensor,
    pub w_2: RealTensor,
    pub b_2: RealTensor,
    pub norm2: NormParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HeadParams {
    /// Pooler over the first position, tanh, then a classifier.
    Classifier {
        w_pool: RealTensor,
        b_pool: RealTensor,
        w_cls: RealTensor,
        b_cls: RealTensor,
    },
    /// Final norm, then vocabulary logits at every position.
    LanguageModel {
        norm: NormParams,
        w_lm: RealTensor,
        b_lm: RealTensor,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `V × d`
    pub token_embedding: RealTensor,
    /// `n × d`
    pub position_embedding: RealTensor,
    pub embed_norm: NormParams,
    pub blocks: Vec<BlockParams>,
    pub head: HeadParams,
}

struct Init {
    rng: ChaCha20Rng,
    zero: bool,
}

impl Init {
    /// Normal samples rounded through binary32 so the weight blob is lossless.
    fn normal(&mut self, shape: Vec<usize>, std: f64, mean: f64) -> RealTensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if self.zero {
                    return 0.0;
                }
                let z: f64 = StandardNormal.sample(&mut self.rng);
                (mean + std * z) as f32 as f64
            })
            .collect();
        RealTensor::new(shape, data).expect("finite samples")
    }

    fn linear(&mut self, out: usize, inp: usize) -> RealTensor {
        self.normal(vec![out, inp], 1.0 / (inp as f64).sqrt(), 0.0)
    }

    fn norm(&mut self, kind: NormKind, d: usize) -> NormParams {
        let gamma = if self.zero {
            RealTensor::new(vec![d], vec![1.0; d]).expect("finite")
        } else {
            self.normal(vec![d], 0.1, 1.0)
        };
        let beta = match kind {
            NormKind::LayerNorm => Some(self.normal(vec![d], 0.1, 0.0)),
            NormKind::RmsNorm => None,
        };
        NormParams { gamma, beta }
    }
}

impl ModelParams {
    /// Deterministic random parameters for `config`.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(
            config,
            Init {
                rng: ChaCha20Rng::seed_from_u64(seed),
                zero: false,
            },
        )
    }

    /// All-zero weights and biases with unit norm gains.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Self::build(
            config,
            Init {
                rng: ChaCha20Rng::seed_from_u64(0),
                zero: true,
            },
        )
    }

    fn build(config: &ModelConfig, mut init: Init) -> Result<Self> {
        config.validate()?;
        let (n, d, k, v) = (config.seq_len, config.d_model, config.d_ff, config.vocab);
        let token_embedding = init.normal(vec![v, d], 1.0, 0.0);
        let position_embedding = init.normal(vec![n, d], 0.1, 0.0);
        let embed_norm = init.norm(config.norm, d);
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                w_q: init.linear(d, d),
                w_k: init.linear(d, d),
                w_v: init.linear(d, d),
                w_o: init.linear(d, d),
                b_o: init.normal(vec![d], 0.1, 0.0),
                norm1: init.norm(config.norm, d),
                w_1: init.linear(k, d),
                b_1: init.normal(vec![k], 0.1, 0.0),
                w_2: init.linear(d, k),
                b_2: init.normal(vec![d], 0.1, 0.0),
                norm2: init.norm(config.norm, d),
            })
            .collect();
        let head = match config.arch {
            Arch::Encoder => HeadParams::Classifier {
                w_pool: init.linear(d, d),
                b_pool: init.normal(vec![d], 0.1, 0.0),
                w_cls: init.linear(config.classes, d),
                b_cls: init.normal(vec![config.classes], 0.1, 0.0),
            },
            Arch::Decoder => HeadParams::LanguageModel {
                norm: init.norm(config.norm, d),
                w_lm: init.linear(v, d),
                b_lm: init.normal(vec![v], 0.1, 0.0),
            },
        };
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            embed_norm,
            blocks,
            head,
        })
    }

    /// Every tensor with its canonical name, in container order.
    pub fn named_tensors(&self) -> Vec<(String, &RealTensor)> {
        let mut out: Vec<(String, &RealTensor)> = vec![
            ("embed.token".into(), &self.token_embedding),
            ("embed.position".into(), &self.position_embedding),
        ];
        push_norm(&mut out, "embed.norm", &self.embed_norm);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.attn.q"), &b.w_q));
            out.push((format!("{p}.attn.k"), &b.w_k));
            out.push((format!("{p}.attn.v"), &b.w_v));
            out.push((format!("{p}.attn.o"), &b.w_o));
            out.push((format!("{p}.attn.o_bias"), &b.b_o));
            push_norm(&mut out, &format!("{p}.norm1"), &b.norm1);
            out.push((format!("{p}.ffn.w1"), &b.w_1));
            out.push((format!("{p}.ffn.b1"), &b.b_1));
            out.push((format!("{p}.ffn.w2"), &b.w_2));
            out.push((format!("{p}.ffn.b2"), &b.b_2));
            push_norm(&mut out, &format!("{p}.norm2"), &b.norm2);
        }
        match &self.head {
            HeadParams::Classifier {
                w_pool,
                b_pool,
                w_cls,
                b_cls,
            } => {
                out.push(("head.pool".into(), w_pool));
                out.push(("head.pool_bias".into(), b_pool));
                out.push(("head.cls".into(), w_cls));
                out.push(("head.cls_bias".into(), b_cls));
            }
            HeadParams::LanguageModel { norm, w_lm, b_lm } => {
                push_norm(&mut out, "head.norm", norm);
                out.push(("head.lm".into(), w_lm));
                out.push(("head.lm_bias".into(), b_lm));
            }
        }
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut RealTensor> {
        let mut out: Vec<&mut RealTensor> = vec![&mut self.token_embedding, &mut self.position_embedding];
        push_norm_mut(&mut out, &mut self.embed_norm);
        for b in &mut self.blocks {
            out.extend([&mut b.w_q, &mut b.w_k, &mut b.w_v, &mut b.w_o, &mut b.b_o]);
            push_norm_mut(&mut out, &mut b.norm1);
            out.extend([&mut b.w_1, &mut b.b_1, &mut b.w_2, &mut b.b_2]);
            push_norm_mut(&mut out, &mut b.norm2);
        }
        match &mut self.head {
            HeadParams::Classifier {
                w_pool,
                b_pool,
                w_cls,
                b_cls,
            } => out.extend([w_pool, b_pool, w_cls, b_cls]),
            HeadParams::LanguageModel { norm, w_lm, b_lm } => {
                push_norm_mut(&mut out, norm);
                out.extend([w_lm, b_lm]);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn push_norm<'a>(out: &mut Vec<(String, &'a RealTensor)>, prefix: &str, n: &'a NormParams) {
    out.push((format!("{prefix}.gamma"), &n.gamma));
    if let Some(beta) = &n.beta {
        out.push((format!("{prefix}.beta"), beta));
    }
}

fn push_norm_mut<'a>(out: &mut Vec<&'a mut RealTensor>, n: &'a mut NormParams) {
    out.push(&mut n.gamma);
    if let Some(beta) = &mut n.beta {
        out.push(beta);
    }
}

/// Public additive attention mask (`n × n`, entries 0 or [`MASK_VALUE`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMask {
    pub values: RealTensor,
}

impl AttentionMask {
    /// Masks key positions at or beyond `len`.
    pub fn padding(n: usize, len: usize) -> Self {
        Self::build(n, |_, j| j >= len)
    }

    /// Lower-triangular causal mask, also hiding padded keys.
    pub fn causal(n: usize, len: usize) -> Self {
        Self::build(n, |i, j| j > i || j >= len)
    }

    pub fn for_arch(arch: Arch, n: usize, len: usize) -> Self {
        match arch {
            Arch::Encoder => Self::padding(n, len),
            Arch::Decoder => Self::causal(n, len),
        }
    }

    fn build(n: usize, masked: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if masked(i, j) {
                    data[i * n + j] = MASK_VALUE;
                }
            }
        }
        Self {
            values: RealTensor::new(vec![n, n], data).expect("finite"),
        }
    }
}

/// Validates ids and pads to `seq_len` with [`PAD_TOKEN`].
pub fn pad_tokens(config: &ModelConfig, tokens: &[usize]) -> Result<Vec<usize>> {
    if tokens.is_empty() || tokens.len() > config.seq_len {
        return Err(Error::InvalidArgument(format!(
            "need between 1 and {} tokens, got {}",
            config.seq_len,
            tokens.len()
        )));
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= config.vocab) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab: config.vocab,
        });
    }
    let mut padded = tokens.to_vec();
    padded.resize(config.seq_len, PAD_TOKEN);
    Ok(padded)
}

/// Intermediate activations of one plaintext forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Embedding plus positions, before the embedding norm.
    pub embedding_pre_norm: Option<RealTensor>,
    /// Masked, scaled scores `QKᵀ/√d_h + M`, per block then head.
    pub attention_scores: Vec<Vec<RealTensor>>,
    /// FFN pre-activation, per block.
    pub ffn_pre_activation: Vec<RealTensor>,
    /// Output of each block's final norm.
    pub block_outputs: Vec<RealTensor>,
    /// Pooler pre-activation (encoder only).
    pub pooler_pre_activation: Option<RealTensor>,
}

pub fn forward(params: &ModelParams, tokens: &[usize], mask: &AttentionMask) -> Result<RealTensor> {
    forward_traced(params, tokens, mask).map(|(y, _)| y)
}

pub fn forward_traced(params: &ModelParams, tokens: &[usize], mask: &AttentionMask) -> Result<(RealTensor, Trace)> {
    let cfg = &params.config;
    let n = cfg.seq_len;
    let d = cfg.d_model;
    let padded = pad_tokens(cfg, tokens)?;
    if mask.values.shape() != [n, n] {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} for sequence length {n}",
            mask.values.shape()
        )));
    }
    let mut trace = Trace::default();

    let mut emb = Vec::with_capacity(n * d);
    for &t in &padded {
        emb.extend_from_slice(params.token_embedding.row(t));
    }
    let x_m = RealTensor::new(vec![n, d], emb)?.add(&params.position_embedding)?;
    let mut x = params.embed_norm.apply(&x_m)?;
    trace.embedding_pre_norm = Some(x_m);

    let dh = cfg.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    for b in &params.blocks {
        let q = x.matmul_t(&b.w_q)?;
        let k = x.matmul_t(&b.w_k)?;
        let v = x.matmul_t(&b.w_v)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        let mut scores = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(lo, hi)?;
            let kh = k.slice_cols(lo, hi)?;
            let vh = v.slice_cols(lo, hi)?;
            let s = qh.matmul_t(&kh)?.scale(inv_sqrt)?.add(&mask.values)?;
            let p = ops::softmax_rows(&s)?;
            heads.push(p.matmul(&vh)?);
            scores.push(s);
        }
        trace.attention_scores.push(scores);
        let o3 = RealTensor::hcat(&heads)?;
        let o4 = o3.matmul_t(&b.w_o)?.add_row_vector(&b.b_o)?;
        let l1 = b.norm1.apply(&x.add(&o4)?)?;
        let o5 = l1.matmul_t(&b.w_1)?.add_row_vector(&b.b_1)?;
        let g = activation(cfg.activation, &o5)?;
        trace.ffn_pre_activation.push(o5);
        let o6 = g.matmul_t(&b.w_2)?.add_row_vector(&b.b_2)?;
        x = b.norm2.apply(&l1.add(&o6)?)?;
        trace.block_outputs.push(x.clone());
    }

    let logits = match &params.head {
        HeadParams::Classifier {
            w_pool,
            b_pool,
            w_cls,
            b_cls,
        } => {
            let xp = x.slice_rows(0, 1)?.matmul_t(w_pool)?.add_row_vector(b_pool)?;
            let t = ops::tanh(&xp)?;
            trace.pooler_pre_activation = Some(xp);
            t.matmul_t(w_cls)?.add_row_vector(b_cls)?
        }
        HeadParams::LanguageModel { norm, w_lm, b_lm } => norm.apply(&x)?.matmul_t(w_lm)?.add_row_vector(b_lm)?,
    };
    Ok((logits, trace))
}

pub fn activation(kind: Activation, x: &RealTensor) -> Result<RealTensor> {
    match kind {
        Activation::Gelu => ops::gelu(x),
        Activation::SiluGate => ops::silu_gate(x),
    }
}

/// Index of the largest entry in the row at `pos`.
pub fn argmax_row(logits: &RealTensor, pos: usize) -> usize {
    logits
        .row(pos)
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}
