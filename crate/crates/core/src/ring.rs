//! Fixed-point arithmetic over the ring of integers modulo `2^ℓ`.
//!
//! Residues are stored as `u64` regardless of the ring width; every operation
//! masks back into `[0, 2^ℓ)`, so 32- and 64-bit rings share one code path.
//! Reals are lifted with `encode` (scale by `2^f`, round half away from zero)
//! and lowered with `decode` (two's-complement interpretation, divide by `2^f`).
//!
//! Products of two encoded values carry scale `2^(2f)`. Nothing here rescales
//! implicitly: callers invoke [`RingTensor::truncate`] once per fixed-point
//! multiplication depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingConfig {
    /// Bit width ℓ of the ring modulus `2^ℓ`.
    pub ring_bits: u32,
    /// Fractional bits f of the fixed-point encoding.
    pub frac_bits: u32,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            ring_bits: 64,
            frac_bits: 16,
        }
    }
}

impl RingConfig {
    pub fn new(ring_bits: u32, frac_bits: u32) -> Result<Self> {
        let cfg = Self { ring_bits, frac_bits };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ring_bits != 32 && self.ring_bits != 64 {
            return Err(Error::InvalidRing(format!(
                "ring width must be 32 or 64, got {}",
                self.ring_bits
            )));
        }
        if self.frac_bits == 0 || self.frac_bits >= self.ring_bits {
            return Err(Error::InvalidRing(format!(
                "need 0 < f < ℓ, got f={} ℓ={}",
                self.frac_bits, self.ring_bits
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        if self.ring_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.ring_bits) - 1
        }
    }

    /// Bytes taken by one residue on the wire.
    #[inline]
    pub fn residue_bytes(&self) -> usize {
        (self.ring_bits / 8) as usize
    }

    /// Signed (two's-complement) view of a residue.
    #[inline]
    pub fn to_signed(&self, r: u64) -> i64 {
        let shift = 64 - self.ring_bits;
        ((r << shift) as i64) >> shift
    }

    #[inline]
    pub fn from_signed(&self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    /// Exclusive magnitude bound `2^(ℓ-f-1)` on encodable reals.
    pub fn magnitude_limit(&self) -> f64 {
        2f64.powi((self.ring_bits - self.frac_bits - 1) as i32)
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(self.frac_bits as i32)
    }

    /// Encodes one real; see [`encode`].
    pub fn encode_scalar(&self, x: f64) -> Result<u64> {
        if !x.is_finite() {
            return Err(Error::NonFinite { value: x, index: 0 });
        }
        if x.abs() >= self.magnitude_limit() {
            return Err(Error::MagnitudeOverflow {
                value: x,
                limit_log2: self.ring_bits - self.frac_bits - 1,
            });
        }
        // f64::round is half-away-from-zero.
        Ok(self.from_signed((x * self.scale()).round() as i64))
    }

    pub fn decode_scalar(&self, r: u64) -> f64 {
        self.to_signed(r) as f64 / self.scale()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if numel(shape) != len {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} needs {} entries, got {len}",
            numel(shape)
        )));
    }
    Ok(())
}

fn dims2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        [c] => Ok((1, c)),
        _ => Err(Error::ShapeMismatch(format!(
            "{what} needs a matrix, got shape {shape:?}"
        ))),
    }
}

/// Dense row-major tensor of real values. Entries are always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { value, index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(m: usize) -> Self {
        let mut t = Self::zeros(vec![m, m]);
        for i in 0..m {
            t.data[i * m + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        dims2(&self.shape, "rows").map_or(0, |d| d.0)
    }

    pub fn cols(&self) -> usize {
        dims2(&self.shape, "cols").map_or(0, |d| d.1)
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        dims2(&self.shape, "matrix op")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        check_len(&shape, self.data.len())?;
        self.shape = shape;
        Ok(self)
    }

    /// Applies `f` to every entry; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Applies `f` row by row over the last axis.
    pub fn map_rows(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let c = *self.shape.last().unwrap_or(&0);
        let mut out = Vec::with_capacity(self.data.len());
        if c > 0 {
            for row in self.data.chunks(c) {
                out.extend(f(row));
            }
        }
        Self::new(self.shape.clone(), out)
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Self::new(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn neg(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| -x).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        self.map(|x| x * s)
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_vector(&self, v: &Self) -> Result<Self> {
        let (r, c) = self.dims()?;
        if v.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "row vector of {} against {c} columns",
                v.len()
            )));
        }
        let mut data = self.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += v.data[j];
            }
        }
        Self::new(self.shape.clone(), data)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], data)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims()?;
        let (k2, n) = other.dims()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[p * n + j];
                }
            }
        }
        Self::new(vec![m, n], data)
    }

    /// `self · otherᵀ`, the orientation every linear layer uses.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        self.matmul(&other.transpose()?)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims()?;
        if start > end || end > c {
            return Err(Error::ShapeMismatch(format!("column slice {start}..{end} of {c}")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Self::new(vec![r, w], data)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims()?;
        if start > end || end > r {
            return Err(Error::ShapeMismatch(format!("row slice {start}..{end} of {r}")));
        }
        Self::new(vec![end - start, c], self.data[start * c..end * c].to_vec())
    }

    /// Horizontal concatenation of equally tall matrices.
    pub fn hcat(parts: &[Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, Self::rows);
        let widths: Vec<usize> = parts.iter().map(Self::cols).collect();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(Error::ShapeMismatch("hcat with unequal heights".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Self::new(vec![rows, total], data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Dense row-major tensor of residues modulo `2^ℓ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingTensor {
    shape: Vec<usize>,
    data: Vec<u64>,
    config: RingConfig,
}

impl RingTensor {
    /// Wraps raw residues, reducing each one modulo `2^ℓ`.
    pub fn new(shape: Vec<usize>, data: Vec<u64>, config: RingConfig) -> Result<Self> {
        check_len(&shape, data.len())?;
        let mask = config.mask();
        Ok(Self {
            shape,
            data: data.into_iter().map(|r| r & mask).collect(),
            config,
        })
    }

    pub fn zeros(shape: Vec<usize>, config: RingConfig) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![0; n],
            config,
        }
    }

    /// Integer (unscaled) identity: raw residues 0 and 1.
    pub fn identity(m: usize, config: RingConfig) -> Self {
        let mut t = Self::zeros(vec![m, m], config);
        for i in 0..m {
            t.data[i * m + i] = 1;
        }
        t
    }

    /// Lifts signed integers without fixed-point scaling.
    pub fn from_signed(shape: Vec<usize>, values: &[i64], config: RingConfig) -> Result<Self> {
        check_len(&shape, values.len())?;
        Ok(Self {
            shape,
            data: values.iter().map(|&v| config.from_signed(v)).collect(),
            config,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn config(&self) -> RingConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        dims2(&self.shape, "matrix op")
    }

    pub fn rows(&self) -> usize {
        dims2(&self.shape, "rows").map_or(0, |d| d.0)
    }

    pub fn cols(&self) -> usize {
        dims2(&self.shape, "cols").map_or(0, |d| d.1)
    }

    pub fn to_signed(&self) -> Vec<i64> {
        self.data.iter().map(|&r| self.config.to_signed(r)).collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        check_len(&shape, self.data.len())?;
        self.shape = shape;
        Ok(self)
    }

    fn zip(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        if self.config != other.config {
            return Err(Error::ShapeMismatch("operands live in different rings".into()));
        }
        let mask = self.config.mask();
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b) & mask)
                .collect(),
            config: self.config,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, u64::wrapping_add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, u64::wrapping_sub)
    }

    /// Elementwise (Hadamard) product, no rescale.
    pub fn mul_elem(&self, other: &Self) -> Result<Self> {
        self.zip(other, u64::wrapping_mul)
    }

    pub fn neg(&self) -> Self {
        let mask = self.config.mask();
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&r| r.wrapping_neg() & mask).collect(),
            config: self.config,
        }
    }

    /// Multiplies every residue by a ring scalar, no rescale.
    pub fn scalar_mul(&self, s: u64) -> Self {
        let mask = self.config.mask();
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&r| r.wrapping_mul(s) & mask).collect(),
            config: self.config,
        }
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row_vector(&self, v: &Self) -> Result<Self> {
        let (r, c) = self.dims()?;
        if v.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "row vector of {} against {c} columns",
                v.len()
            )));
        }
        let mask = self.config.mask();
        let mut data = self.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = data[i * c + j].wrapping_add(v.data[j]) & mask;
            }
        }
        Self::new(self.shape.clone(), data, self.config)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims()?;
        let mut data = vec![0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data,
            config: self.config,
        })
    }

    /// Exact modular matrix product. No truncation.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims()?;
        let (k2, n) = other.dims()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul inner dims {m}x{k} · {k2}x{n}")));
        }
        let mut data = vec![0u64; m * n];
        for i in 0..m {
            let out = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out.iter_mut().zip(row) {
                    *o = o.wrapping_add(a.wrapping_mul(b));
                }
            }
        }
        let mask = self.config.mask();
        data.iter_mut().for_each(|r| *r &= mask);
        Ok(Self {
            shape: vec![m, n],
            data,
            config: self.config,
        })
    }

    /// Arithmetic right shift by `bits` of the signed interpretation.
    pub fn truncate(&self, bits: u32) -> Self {
        let cfg = self.config;
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&r| cfg.from_signed(cfg.to_signed(r) >> bits))
                .collect(),
            config: cfg,
        }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims()?;
        if start > end || end > c {
            return Err(Error::ShapeMismatch(format!("column slice {start}..{end} of {c}")));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(Self {
            shape: vec![r, end - start],
            data,
            config: self.config,
        })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims()?;
        if start > end || end > r {
            return Err(Error::ShapeMismatch(format!("row slice {start}..{end} of {r}")));
        }
        Ok(Self {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
            config: self.config,
        })
    }

    pub fn hcat(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("hcat of nothing".into()))?;
        let rows = first.rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(Error::ShapeMismatch("hcat with unequal heights".into()));
        }
        let total: usize = parts.iter().map(Self::cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                let c = p.cols();
                data.extend_from_slice(&p.data[i * c..(i + 1) * c]);
            }
        }
        Ok(Self {
            shape: vec![rows, total],
            data,
            config: first.config,
        })
    }
}

/// Lifts reals into the ring: `round(x · 2^f) mod 2^ℓ`, half away from zero.
pub fn encode(x: &RealTensor, cfg: RingConfig) -> Result<RingTensor> {
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            cfg.encode_scalar(v).map_err(|e| match e {
                Error::NonFinite { value, .. } => Error::NonFinite { value, index: i },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RingTensor::new(x.shape().to_vec(), data, cfg)
}

/// Signed interpretation divided by `2^f`.
pub fn decode(r: &RingTensor) -> RealTensor {
    let cfg = r.config();
    RealTensor {
        shape: r.shape().to_vec(),
        data: r.data().iter().map(|&v| cfg.decode_scalar(v)).collect(),
    }
}

pub fn matmul(a: &RingTensor, b: &RingTensor) -> Result<RingTensor> {
    a.matmul(b)
}

pub fn truncate(r: &RingTensor, bits: u32) -> RingTensor {
    r.truncate(bits)
}
