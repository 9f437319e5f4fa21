//! Permutations standing in for permutation matrices, and the parameter
//! permutation `Θ → Θ′` performed at initialization.
//!
//! A [`PermSpec`] `p` denotes the matrix `π` with `π[p[j], j] = 1`, so
//!
//! * `apply_cols(X, p) = X·π`: column `j` of the result is column `p[j]` of `X`;
//! * `apply_rows(X, p) = πᵀ·X`: row `j` of the result is row `p[j]` of `X`.
//!
//! With weights stored `(out × in)`, `apply_cols(X, p) · apply_cols(W, p)ᵀ = X·Wᵀ`
//! exactly, which is what lets the cloud multiply permuted activations by
//! permuted weights without ever seeing either in the clear.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadParams, ModelConfig, ModelParams, NormParams};
use crate::ring::{RealTensor, RingConfig, RingTensor};
use crate::sharing::{share, SharedTensor};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PermSpec {
    indices: Vec<usize>,
}

impl TryFrom<Vec<usize>> for PermSpec {
    type Error = Error;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        Self::new(indices)
    }
}

impl From<PermSpec> for Vec<usize> {
    fn from(p: PermSpec) -> Self {
        p.indices
    }
}

impl PermSpec {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let m = indices.len();
        let mut seen = vec![false; m];
        for &i in &indices {
            if i >= m || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation(format!(
                    "{indices:?} is not a bijection on 0..{m}"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            indices: (0..m).collect(),
        }
    }

    /// Uniform over all `m!` permutations (Fisher–Yates).
    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let mut indices: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_identity(&self) -> bool {
        self.indices.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (j, &p) in self.indices.iter().enumerate() {
            inv[p] = j;
        }
        Self { indices: inv }
    }

    /// The permutation equivalent to applying `self` then `then` on columns
    /// (matrix product `π_self · π_then`).
    pub fn compose(&self, then: &Self) -> Result<Self> {
        if self.len() != then.len() {
            return Err(Error::DimMismatch {
                expected: self.len(),
                got: then.len(),
            });
        }
        Ok(Self {
            indices: then.indices.iter().map(|&q| self.indices[q]).collect(),
        })
    }

    /// Number of positions left in place.
    pub fn fixed_points(&self) -> usize {
        self.indices.iter().enumerate().filter(|(i, &v)| *i == v).count()
    }

    /// Fraction of positions where `self` agrees with `truth`.
    pub fn agreement(&self, truth: &Self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        let hits = self.indices.iter().zip(&truth.indices).filter(|(a, b)| a == b).count();
        hits as f64 / self.len() as f64
    }

    /// Dense real 0/1 matrix `π`.
    pub fn to_matrix(&self) -> RealTensor {
        let m = self.len();
        let mut data = vec![0.0; m * m];
        for (j, &p) in self.indices.iter().enumerate() {
            data[p * m + j] = 1.0;
        }
        RealTensor::new(vec![m, m], data).expect("0/1 entries")
    }

    /// Raw (unscaled) 0/1 ring matrix `π`.
    pub fn to_ring_matrix(&self, cfg: RingConfig) -> RingTensor {
        let m = self.len();
        let mut data = vec![0u64; m * m];
        for (j, &p) in self.indices.iter().enumerate() {
            data[p * m + j] = 1;
        }
        RingTensor::new(vec![m, m], data, cfg).expect("square")
    }
}

/// Additive shares of the 0/1 matrix of `p`, without fixed-point scaling, so
/// a Beaver product with it needs no truncation.
pub fn as_shared_matrix(p: &PermSpec, cfg: RingConfig, rng: &mut impl RngCore) -> (SharedTensor, SharedTensor) {
    share(&p.to_ring_matrix(cfg), rng)
}

fn gather<T: Copy>(data: &[T], rows: usize, cols: usize, p: &PermSpec, on_cols: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    if on_cols {
        for i in 0..rows {
            let row = &data[i * cols..(i + 1) * cols];
            out.extend(p.indices.iter().map(|&s| row[s]));
        }
    } else {
        for &s in &p.indices {
            out.extend_from_slice(&data[s * cols..(s + 1) * cols]);
        }
    }
    out
}

/// Row and column permutation of matrices (vectors count as one row).
pub trait Permutable: Sized {
    fn extent(&self) -> (usize, usize);
    fn regather(&self, p: &PermSpec, on_cols: bool) -> Self;

    fn apply_cols(&self, p: &PermSpec) -> Result<Self> {
        let (_, c) = self.extent();
        check(c, p)?;
        Ok(self.regather(p, true))
    }

    fn apply_rows(&self, p: &PermSpec) -> Result<Self> {
        let (r, _) = self.extent();
        check(r, p)?;
        Ok(self.regather(p, false))
    }

    fn unapply_cols(&self, p: &PermSpec) -> Result<Self> {
        self.apply_cols(&p.inverse())
    }

    fn unapply_rows(&self, p: &PermSpec) -> Result<Self> {
        self.apply_rows(&p.inverse())
    }
}

fn check(dim: usize, p: &PermSpec) -> Result<()> {
    if dim != p.len() {
        return Err(Error::DimMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    Ok(())
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [c] => (1, c),
        [r, c] => (r, c),
        _ => (0, 0),
    }
}

impl Permutable for RealTensor {
    fn extent(&self) -> (usize, usize) {
        matrix_dims(self.shape())
    }

    fn regather(&self, p: &PermSpec, on_cols: bool) -> Self {
        let (r, c) = self.extent();
        RealTensor::new(self.shape().to_vec(), gather(self.data(), r, c, p, on_cols))
            .expect("permutation preserves entries")
    }
}

impl Permutable for RingTensor {
    fn extent(&self) -> (usize, usize) {
        matrix_dims(self.shape())
    }

    fn regather(&self, p: &PermSpec, on_cols: bool) -> Self {
        let (r, c) = self.extent();
        RingTensor::new(
            self.shape().to_vec(),
            gather(self.data(), r, c, p, on_cols),
            self.config(),
        )
        .expect("permutation preserves entries")
    }
}

pub fn apply_cols<T: Permutable>(x: &T, p: &PermSpec) -> Result<T> {
    x.apply_cols(p)
}

pub fn apply_rows<T: Permutable>(x: &T, p: &PermSpec) -> Result<T> {
    x.apply_rows(p)
}

/// The secret permutations `{π, π₁, π₂}` over feature, sequence and FFN axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermSet {
    /// `d × d`, feature axis.
    pub pi: PermSpec,
    /// `n × n`, sequence axis inside attention.
    pub pi1: PermSpec,
    /// `k × k`, FFN intermediate axis.
    pub pi2: PermSpec,
    pub seed: Option<u64>,
}

impl PermSet {
    pub fn random(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self {
            pi: PermSpec::random(cfg.d_model, &mut rng),
            pi1: PermSpec::random(cfg.seq_len, &mut rng),
            pi2: PermSpec::random(cfg.d_ff, &mut rng),
            seed: Some(seed),
        }
    }

    pub fn identity(cfg: &ModelConfig) -> Self {
        Self {
            pi: PermSpec::identity(cfg.d_model),
            pi1: PermSpec::identity(cfg.seq_len),
            pi2: PermSpec::identity(cfg.d_ff),
            seed: None,
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            pi: self.pi.inverse(),
            pi1: self.pi1.inverse(),
            pi2: self.pi2.inverse(),
            seed: self.seed,
        }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        for (p, want) in [(&self.pi, cfg.d_model), (&self.pi1, cfg.seq_len), (&self.pi2, cfg.d_ff)] {
            if p.len() != want {
                return Err(Error::DimMismatch {
                    expected: want,
                    got: p.len(),
                });
            }
        }
        Ok(())
    }
}

/// `Θ′`: the parameter set as the cloud receives it.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutedParams(pub ModelParams);

fn norm_cols(n: &NormParams, p: &PermSpec) -> Result<NormParams> {
    Ok(NormParams {
        gamma: n.gamma.apply_cols(p)?,
        beta: n.beta.as_ref().map(|b| b.apply_cols(p)).transpose()?,
    })
}

/// Applies `Π` to every parameter:
///
/// * input-side `π` on embeddings, `W_Q`, `W_K`, `W_V`, the classifier or LM head;
/// * output-side `π` on `W_O` (stored `πᵀW_O`) and its bias;
/// * `πᵀ₂W₁π` with `B₁π₂`, and `πᵀW₂π₂` with `B₂π`;
/// * norm gains and shifts, and the pooler (`πᵀW_Pπ`, `B_Pπ`), on `π`.
pub fn permute_params(theta: &ModelParams, perms: &PermSet) -> Result<PermutedParams> {
    let cfg = &theta.config;
    perms.check(cfg)?;
    let (pi, pi2) = (&perms.pi, &perms.pi2);
    let mut out = theta.clone();
    out.token_embedding = theta.token_embedding.apply_cols(pi)?;
    out.position_embedding = theta.position_embedding.apply_cols(pi)?;
    out.embed_norm = norm_cols(&theta.embed_norm, pi)?;
    for (dst, src) in out.blocks.iter_mut().zip(&theta.blocks) {
        dst.w_q = src.w_q.apply_cols(pi)?;
        dst.w_k = src.w_k.apply_cols(pi)?;
        dst.w_v = src.w_v.apply_cols(pi)?;
        dst.w_o = src.w_o.apply_rows(pi)?;
        dst.b_o = src.b_o.apply_cols(pi)?;
        dst.norm1 = norm_cols(&src.norm1, pi)?;
        dst.w_1 = src.w_1.apply_cols(pi)?.apply_rows(pi2)?;
        dst.b_1 = src.b_1.apply_cols(pi2)?;
        dst.w_2 = src.w_2.apply_cols(pi2)?.apply_rows(pi)?;
        dst.b_2 = src.b_2.apply_cols(pi)?;
        dst.norm2 = norm_cols(&src.norm2, pi)?;
    }
    out.head = match &theta.head {
        HeadParams::Classifier {
            w_pool,
            b_pool,
            w_cls,
            b_cls,
        } => HeadParams::Classifier {
            w_pool: w_pool.apply_cols(pi)?.apply_rows(pi)?,
            b_pool: b_pool.apply_cols(pi)?,
            w_cls: w_cls.apply_cols(pi)?,
            b_cls: b_cls.clone(),
        },
        HeadParams::LanguageModel { norm, w_lm, b_lm } => HeadParams::LanguageModel {
            norm: norm_cols(norm, pi)?,
            w_lm: w_lm.apply_cols(pi)?,
            b_lm: b_lm.clone(),
        },
    };
    Ok(PermutedParams(out))
}

/// `log₂(m!)`.
pub fn log2_factorial(m: usize) -> f64 {
    (2..=m).map(|i| (i as f64).log2()).sum()
}

/// Brute-force key-space sizes (as `log₂` of the number of candidates) faced by
/// the cloud when recovering each parameter group from `Θ′`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeySpace {
    /// Embeddings, attention weights, norms, `B_O`, `B₂`: `d!`.
    pub feature_log2: f64,
    /// `W₁`, `W₂`: `d!·k!`.
    pub ffn_weights_log2: f64,
    /// `B₁`: `k!`.
    pub ffn_bias_log2: f64,
}

pub fn key_space(cfg: &ModelConfig) -> KeySpace {
    let d = log2_factorial(cfg.d_model);
    let k = log2_factorial(cfg.d_ff);
    KeySpace {
        feature_log2: d,
        ffn_weights_log2: d + k,
        ffn_bias_log2: k,
    }
}
