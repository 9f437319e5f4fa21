//! Real-domain nonlinearities shared by the plaintext oracle and the cloud
//! party's reveal step.
//!
//! Row reductions sum in a canonical (sorted) order, so every row-wise op is
//! exactly equivariant under column permutations: `f(Xπ) == f(X)π` bit for bit.

use crate::error::Result;
use crate::ring::RealTensor;

pub const NORM_EPS: f64 = 1e-5;

/// Sum whose result does not depend on the order of `xs`.
pub fn canonical_sum(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let s = canonical_sum(&e);
    e.into_iter().map(|x| x / s).collect()
}

/// Max-subtracted softmax over the last axis.
pub fn softmax_rows(x: &RealTensor) -> Result<RealTensor> {
    x.map_rows(softmax_row)
}

/// GeLU, tanh approximation.
pub fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gelu(x: &RealTensor) -> Result<RealTensor> {
    x.map(gelu_scalar)
}

pub fn tanh(x: &RealTensor) -> Result<RealTensor> {
    x.map(f64::tanh)
}

/// `x / (1 + e^-x)`, the gate nonlinearity of gated FFNs.
pub fn silu_scalar(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_gate(x: &RealTensor) -> Result<RealTensor> {
    x.map(silu_scalar)
}

/// Normalizes one row to zero mean and unit variance (biased), no affine.
pub fn standardize_row(row: &[f64], eps: f64) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = canonical_sum(row) / d;
    let centered: Vec<f64> = row.iter().map(|x| x - mean).collect();
    let sq: Vec<f64> = centered.iter().map(|c| c * c).collect();
    let var = canonical_sum(&sq) / d;
    let inv = 1.0 / (var + eps).sqrt();
    centered.into_iter().map(|c| c * inv).collect()
}

pub fn layernorm(x: &RealTensor, gamma: &RealTensor, beta: &RealTensor, eps: f64) -> Result<RealTensor> {
    let (g, b) = (gamma.data(), beta.data());
    check_affine(x, gamma)?;
    check_affine(x, beta)?;
    x.map_rows(|row| {
        standardize_row(row, eps)
            .into_iter()
            .enumerate()
            .map(|(j, z)| z * g[j] + b[j])
            .collect()
    })
}

pub fn rmsnorm(x: &RealTensor, gamma: &RealTensor, eps: f64) -> Result<RealTensor> {
    check_affine(x, gamma)?;
    let g = gamma.data();
    x.map_rows(|row| {
        let sq: Vec<f64> = row.iter().map(|v| v * v).collect();
        let inv = 1.0 / (canonical_sum(&sq) / row.len() as f64 + eps).sqrt();
        row.iter().enumerate().map(|(j, v)| v * inv * g[j]).collect()
    })
}

fn check_affine(x: &RealTensor, p: &RealTensor) -> Result<()> {
    let d = *x.shape().last().unwrap_or(&0);
    if p.len() != d {
        return Err(crate::error::Error::ShapeMismatch(format!(
            "affine parameter of {} for rows of {d}",
            p.len()
        )));
    }
    Ok(())
}
