//! Two-out-of-two additive secret sharing over the ring, plus the local halves
//! of the share-level protocols.
//!
//! Everything here is party-local arithmetic. Message exchange (the Beaver
//! opening) lives in [`crate::protocol`], which calls [`beaver_open`] and
//! [`beaver_close`] around one transport round.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::{RingConfig, RingTensor};

/// One party's additive share `[x]_index` of a secret ring tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedTensor {
    pub share: RingTensor,
    pub index: u8,
}

impl SharedTensor {
    pub fn new(share: RingTensor, index: u8) -> Result<Self> {
        if index > 1 {
            return Err(Error::ShareIndexMismatch(index, index));
        }
        Ok(Self { share, index })
    }

    pub fn shape(&self) -> &[usize] {
        self.share.shape()
    }

    pub fn config(&self) -> RingConfig {
        self.share.config()
    }

    /// Applies a purely local, linear reshaping (slice, transpose, concat) to the share.
    pub fn map_local(&self, f: impl FnOnce(&RingTensor) -> Result<RingTensor>) -> Result<Self> {
        Ok(Self {
            share: f(&self.share)?,
            index: self.index,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        self.map_local(RingTensor::transpose)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        self.map_local(|s| s.slice_cols(start, end))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        self.map_local(|s| s.slice_rows(start, end))
    }

    pub fn hcat(parts: &[Self]) -> Result<Self> {
        let index = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("hcat of nothing".into()))?
            .index;
        if let Some(bad) = parts.iter().find(|p| p.index != index) {
            return Err(Error::ShareIndexMismatch(index, bad.index));
        }
        let shares: Vec<RingTensor> = parts.iter().map(|p| p.share.clone()).collect();
        Ok(Self {
            share: RingTensor::hcat(&shares)?,
            index,
        })
    }
}

fn random_like(shape: &[usize], cfg: RingConfig, rng: &mut impl RngCore) -> RingTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.next_u64()).collect();
    RingTensor::new(shape.to_vec(), data, cfg).expect("length matches shape")
}

/// Splits `x` into `([x]_0, [x]_1)` with `[x]_0` uniform and `[x]_1 = x - [x]_0`.
pub fn share(x: &RingTensor, rng: &mut impl RngCore) -> (SharedTensor, SharedTensor) {
    let mask = random_like(x.shape(), x.config(), rng);
    let other = x.sub(&mask).expect("same shape and ring");
    (
        SharedTensor { share: mask, index: 0 },
        SharedTensor { share: other, index: 1 },
    )
}

/// `([x]_0 + [x]_1) mod 2^ℓ`. Accepts the two shares in either order.
pub fn reconstruct(s0: &SharedTensor, s1: &SharedTensor) -> Result<RingTensor> {
    if s0.index + s1.index != 1 || s0.index == s1.index {
        return Err(Error::ShareIndexMismatch(s0.index, s1.index));
    }
    s0.share.add(&s1.share)
}

/// Local addition of two shares held by the same party.
pub fn pi_add(x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
    if x.index != y.index {
        return Err(Error::ShareIndexMismatch(x.index, y.index));
    }
    Ok(SharedTensor {
        share: x.share.add(&y.share)?,
        index: x.index,
    })
}

/// Adds a public tensor: only party 0 touches its share.
pub fn pi_add_public(x: &SharedTensor, public: &RingTensor) -> Result<SharedTensor> {
    if x.shape() != public.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs public {:?}",
            x.shape(),
            public.shape()
        )));
    }
    if x.index != 0 {
        return Ok(x.clone());
    }
    Ok(SharedTensor {
        share: x.share.add(public)?,
        index: 0,
    })
}

/// Adds a public row vector (bias) to every row; party 0 only.
pub fn pi_add_public_row(x: &SharedTensor, bias: &RingTensor) -> Result<SharedTensor> {
    if x.index != 0 {
        // Still validate so both parties fail identically.
        if bias.len() != x.share.cols() {
            return Err(Error::ShapeMismatch(format!(
                "bias of {} against {} columns",
                bias.len(),
                x.share.cols()
            )));
        }
        return Ok(x.clone());
    }
    Ok(SharedTensor {
        share: x.share.add_row_vector(bias)?,
        index: 0,
    })
}

/// Where the public operand sits in a plaintext-share product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// `public · [[x]]`
    Left,
    /// `[[x]] · public`
    Right,
    /// `[[x]] · publicᵀ`, the linear-layer form `X W^T`.
    RightTransposed,
}

/// Whether a product is rescaled back to `2^f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rescale {
    /// Both operands are fixed-point encoded; truncate by `f` afterwards.
    Truncate,
    /// One operand is an unscaled integer matrix (e.g. 0/1 permutation); no truncation.
    Exact,
}

/// Local probabilistic truncation of a share by `bits`.
///
/// Party 0 floors, party 1 ceils, so the reconstructed value is within one
/// unit of `x / 2^bits` except with probability about `|x| / 2^ℓ`.
pub fn truncate_share(x: &SharedTensor, bits: u32) -> SharedTensor {
    let share = if x.index == 0 {
        x.share.truncate(bits)
    } else {
        x.share.neg().truncate(bits).neg()
    };
    SharedTensor { share, index: x.index }
}

fn rescale(x: SharedTensor, mode: Rescale) -> SharedTensor {
    match mode {
        Rescale::Truncate => {
            let bits = x.config().frac_bits;
            truncate_share(&x, bits)
        }
        Rescale::Exact => x,
    }
}

/// Plaintext × share multiplication. Purely local: no messages.
pub fn pi_scalmul(
    public: &RingTensor,
    shared: &SharedTensor,
    orientation: Orientation,
    mode: Rescale,
) -> Result<SharedTensor> {
    let product = match orientation {
        Orientation::Left => public.matmul(&shared.share)?,
        Orientation::Right => shared.share.matmul(public)?,
        Orientation::RightTransposed => shared.share.matmul(&public.transpose()?)?,
    };
    Ok(rescale(
        SharedTensor {
            share: product,
            index: shared.index,
        },
        mode,
    ))
}

/// Multiplies a share by a public ring scalar (already encoded).
pub fn pi_scale(x: &SharedTensor, scalar: u64, mode: Rescale) -> SharedTensor {
    rescale(
        SharedTensor {
            share: x.share.scalar_mul(scalar),
            index: x.index,
        },
        mode,
    )
}

/// Matrix-product shape `(p, q, r)` for `(p×q)·(q×r)`.
pub type TripleShape = (usize, usize, usize);

/// Dealer-side view of a Beaver triple: `C = A · B` in the ring, all shared.
#[derive(Clone, Debug)]
pub struct BeaverTriple {
    pub id: u64,
    pub shape: TripleShape,
    pub a: (SharedTensor, SharedTensor),
    pub b: (SharedTensor, SharedTensor),
    pub c: (SharedTensor, SharedTensor),
}

impl BeaverTriple {
    pub fn generate(id: u64, shape: TripleShape, cfg: RingConfig, rng: &mut impl RngCore) -> Self {
        let (p, q, r) = shape;
        let a = random_like(&[p, q], cfg, rng);
        let b = random_like(&[q, r], cfg, rng);
        let c = a.matmul(&b).expect("conforming by construction");
        Self {
            id,
            shape,
            a: share(&a, rng),
            b: share(&b, rng),
            c: share(&c, rng),
        }
    }

    /// Splits the dealer view into the two parties' halves.
    pub fn split(self) -> [TripleShare; 2] {
        [
            TripleShare {
                id: self.id,
                shape: self.shape,
                a: self.a.0,
                b: self.b.0,
                c: self.c.0,
            },
            TripleShare {
                id: self.id,
                shape: self.shape,
                a: self.a.1,
                b: self.b.1,
                c: self.c.1,
            },
        ]
    }
}

/// One party's half of a Beaver triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleShare {
    pub id: u64,
    pub shape: TripleShape,
    pub a: SharedTensor,
    pub b: SharedTensor,
    pub c: SharedTensor,
}

impl TripleShare {
    pub fn index(&self) -> u8 {
        self.a.index
    }

    /// Residues per party in the serialized form (`a`, `b`, `c` back to back).
    pub fn residues(shape: TripleShape) -> usize {
        let (p, q, r) = shape;
        p * q + q * r + p * r
    }

    pub fn to_residues(&self, out: &mut Vec<u64>) {
        out.extend_from_slice(self.a.share.data());
        out.extend_from_slice(self.b.share.data());
        out.extend_from_slice(self.c.share.data());
    }

    pub fn from_residues(id: u64, shape: TripleShape, index: u8, residues: &[u64], cfg: RingConfig) -> Result<Self> {
        let (p, q, r) = shape;
        if residues.len() != Self::residues(shape) {
            return Err(Error::ShapeMismatch(format!(
                "triple {shape:?} needs {} residues, got {}",
                Self::residues(shape),
                residues.len()
            )));
        }
        let (a, rest) = residues.split_at(p * q);
        let (b, c) = rest.split_at(q * r);
        let mk = |shape: Vec<usize>, d: &[u64]| -> Result<SharedTensor> {
            SharedTensor::new(RingTensor::new(shape, d.to_vec(), cfg)?, index)
        };
        Ok(Self {
            id,
            shape,
            a: mk(vec![p, q], a)?,
            b: mk(vec![q, r], b)?,
            c: mk(vec![p, r], c)?,
        })
    }
}

/// Dealer that issues triples from a seeded RNG.
pub struct Dealer<R> {
    cfg: RingConfig,
    rng: R,
    next_id: u64,
}

impl<R: Rng> Dealer<R> {
    pub fn new(cfg: RingConfig, rng: R) -> Self {
        Self { cfg, rng, next_id: 0 }
    }

    pub fn triple(&mut self, shape: TripleShape) -> BeaverTriple {
        let id = self.next_id;
        self.next_id += 1;
        BeaverTriple::generate(id, shape, self.cfg, &mut self.rng)
    }

    /// Issues one triple per requested shape and returns both parties' supplies.
    pub fn provision(&mut self, plan: &[TripleShape]) -> [TripleSupply; 2] {
        let mut supplies = [TripleSupply::default(), TripleSupply::default()];
        for &shape in plan {
            let [t0, t1] = self.triple(shape).split();
            supplies[0].push(t0);
            supplies[1].push(t1);
        }
        supplies
    }
}

/// A party's queue of triple halves, keyed by shape. Single consumer.
#[derive(Debug, Default)]
pub struct TripleSupply {
    queues: HashMap<TripleShape, VecDeque<TripleShare>>,
    consumed: HashSet<u64>,
}

impl TripleSupply {
    pub fn push(&mut self, t: TripleShare) {
        self.queues.entry(t.shape).or_default().push_back(t);
    }

    pub fn remaining(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn take(&mut self, shape: TripleShape) -> Result<TripleShare> {
        self.queues
            .get_mut(&shape)
            .and_then(VecDeque::pop_front)
            .ok_or(Error::TripleExhausted(shape))
    }

    /// Marks a triple as spent; a second spend of the same id is an error.
    pub fn consume(&mut self, t: &TripleShare) -> Result<()> {
        if !self.consumed.insert(t.id) {
            return Err(Error::TripleReused(t.id));
        }
        Ok(())
    }
}

/// First half of a Beaver multiplication: the party's shares of
/// `E = X - A` and `D = Y - B`, to be opened in one round.
pub fn beaver_open(x: &SharedTensor, y: &SharedTensor, t: &TripleShare) -> Result<(RingTensor, RingTensor)> {
    let (p, q) = x.share.dims()?;
    let (q2, r) = y.share.dims()?;
    if q != q2 {
        return Err(Error::ShapeMismatch(format!("Beaver operands {p}x{q} · {q2}x{r}")));
    }
    if t.shape != (p, q, r) {
        return Err(Error::TripleShapeMismatch {
            triple: t.shape,
            needed: (p, q, r),
        });
    }
    if x.index != y.index || x.index != t.index() {
        return Err(Error::ShareIndexMismatch(x.index, t.index()));
    }
    Ok((x.share.sub(&t.a.share)?, y.share.sub(&t.b.share)?))
}

/// Second half: given the opened `E` and `D`, the party's share of
/// `E·D (party 0 only) + E·B + A·D + C`, rescaled per `mode`.
pub fn beaver_close(e: &RingTensor, d: &RingTensor, t: &TripleShare, mode: Rescale) -> Result<SharedTensor> {
    let mut z = e.matmul(&t.b.share)?.add(&t.a.share.matmul(d)?)?.add(&t.c.share)?;
    if t.index() == 0 {
        z = z.add(&e.matmul(d)?)?;
    }
    Ok(rescale(
        SharedTensor {
            share: z,
            index: t.index(),
        },
        mode,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{decode, encode, RealTensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn cfg() -> RingConfig {
        RingConfig::default()
    }

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn enc(rows: &[Vec<f64>]) -> RingTensor {
        encode(&RealTensor::from_rows(rows).unwrap(), cfg()).unwrap()
    }

    /// Runs both halves of a Beaver product without any transport.
    fn joint_matmul(
        x: &(SharedTensor, SharedTensor),
        y: &(SharedTensor, SharedTensor),
        t: &BeaverTriple,
        mode: Rescale,
    ) -> RingTensor {
        let [t0, t1] = t.clone().split();
        let (e0, d0) = beaver_open(&x.0, &y.0, &t0).unwrap();
        let (e1, d1) = beaver_open(&x.1, &y.1, &t1).unwrap();
        let e = e0.add(&e1).unwrap();
        let d = d0.add(&d1).unwrap();
        let z0 = beaver_close(&e, &d, &t0, mode).unwrap();
        let z1 = beaver_close(&e, &d, &t1, mode).unwrap();
        reconstruct(&z0, &z1).unwrap()
    }

    #[test]
    fn share_zero_reconstructs() {
        let x = RingTensor::zeros(vec![2, 3], cfg());
        let (a, b) = share(&x, &mut rng(1));
        assert_eq!(a.share.neg(), b.share);
        assert_eq!(reconstruct(&a, &b).unwrap(), x);
    }

    #[test]
    fn share_round_trip_and_order() {
        let x = enc(&[vec![3.5]]);
        let (a, b) = share(&x, &mut rng(2));
        assert_eq!(decode(&reconstruct(&a, &b).unwrap()).data(), &[3.5]);
        assert_eq!(reconstruct(&b, &a).unwrap(), x);
    }

    #[test]
    fn share_is_deterministic_per_seed() {
        let x = enc(&[vec![1.0, -2.0], vec![0.25, 7.0]]);
        assert_eq!(share(&x, &mut rng(9)), share(&x, &mut rng(9)));
        assert_ne!(share(&x, &mut rng(9)).0, share(&x, &mut rng(10)).0);
    }

    #[test]
    fn tampered_share_changes_secret() {
        let x = enc(&[vec![1.0, 2.0]]);
        let (a, mut b) = share(&x, &mut rng(3));
        let mut data = b.share.clone().into_data();
        data[1] = data[1].wrapping_add(1);
        b.share = RingTensor::new(vec![1, 2], data, cfg()).unwrap();
        assert_ne!(reconstruct(&a, &b).unwrap(), x);
    }

    #[test]
    fn reconstruct_rejects_bad_indices() {
        let x = enc(&[vec![1.0]]);
        let (a, _) = share(&x, &mut rng(4));
        assert!(matches!(reconstruct(&a, &a), Err(Error::ShareIndexMismatch(0, 0))));
        let (_, b) = share(&enc(&[vec![1.0, 2.0]]), &mut rng(4));
        assert!(matches!(reconstruct(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn add_zero_and_public() {
        let x = enc(&[vec![1.5, -2.0]]);
        let zero = RingTensor::zeros(vec![1, 2], cfg());
        let (x0, x1) = share(&x, &mut rng(5));
        let (z0, z1) = share(&zero, &mut rng(6));
        let s0 = pi_add(&x0, &z0).unwrap();
        let s1 = pi_add(&x1, &z1).unwrap();
        assert_eq!(reconstruct(&s0, &s1).unwrap(), x);

        let b = enc(&[vec![0.5, 0.5]]);
        let p0 = pi_add_public(&x0, &b).unwrap();
        let p1 = pi_add_public(&x1, &b).unwrap();
        assert_eq!(p1, x1);
        assert_eq!(decode(&reconstruct(&p0, &p1).unwrap()).data(), &[2.0, -1.5]);
        assert!(pi_add(&x0, &x1).is_err());
    }

    #[test]
    fn scalmul_with_integer_identity_is_exact() {
        let x = enc(&[vec![1.25, -3.0], vec![0.5, 2.0]]);
        let (x0, x1) = share(&x, &mut rng(7));
        let id = RingTensor::identity(2, cfg());
        for o in [Orientation::Left, Orientation::Right, Orientation::RightTransposed] {
            let y0 = pi_scalmul(&id, &x0, o, Rescale::Exact).unwrap();
            let y1 = pi_scalmul(&id, &x1, o, Rescale::Exact).unwrap();
            assert_eq!(reconstruct(&y0, &y1).unwrap(), x);
        }
    }

    #[test]
    fn scalmul_linear_layer_matches_reals() {
        let xr = RealTensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]]).unwrap();
        let wr = RealTensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 0.0]]).unwrap();
        let (x0, x1) = share(&encode(&xr, cfg()).unwrap(), &mut rng(8));
        let w = encode(&wr, cfg()).unwrap();
        let y0 = pi_scalmul(&w, &x0, Orientation::RightTransposed, Rescale::Truncate).unwrap();
        let y1 = pi_scalmul(&w, &x1, Orientation::RightTransposed, Rescale::Truncate).unwrap();
        let got = decode(&reconstruct(&y0, &y1).unwrap());
        let want = xr.matmul_t(&wr).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() <= 3.0 * 2f64.powi(-16));
    }

    #[test]
    fn beaver_identity_times_matrix() {
        let x = enc(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = enc(&[vec![2.0, 3.0], vec![4.0, 5.0]]);
        let mut r = rng(11);
        let xs = share(&x, &mut r);
        let ys = share(&y, &mut r);
        let t = BeaverTriple::generate(0, (2, 2, 2), cfg(), &mut r);
        let z = decode(&joint_matmul(&xs, &ys, &t, Rescale::Truncate));
        let want = RealTensor::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        assert!(z.max_abs_diff(&want).unwrap() <= 2f64.powi(-14));
    }

    #[test]
    fn beaver_zero_operand() {
        let x = RingTensor::zeros(vec![3, 2], cfg());
        let y = enc(&[vec![2.0, 3.0, 1.0], vec![4.0, 5.0, -1.0]]);
        let mut r = rng(12);
        let xs = share(&x, &mut r);
        let ys = share(&y, &mut r);
        let t = BeaverTriple::generate(0, (3, 2, 3), cfg(), &mut r);
        let z = joint_matmul(&xs, &ys, &t, Rescale::Exact);
        assert_eq!(z, RingTensor::zeros(vec![3, 3], cfg()));
    }

    #[test]
    fn beaver_rejects_wrong_triple_shape() {
        let mut r = rng(13);
        let xs = share(&RingTensor::zeros(vec![2, 2], cfg()), &mut r);
        let ys = share(&RingTensor::zeros(vec![2, 3], cfg()), &mut r);
        let [t0, _] = BeaverTriple::generate(0, (2, 2, 2), cfg(), &mut r).split();
        assert!(matches!(
            beaver_open(&xs.0, &ys.0, &t0),
            Err(Error::TripleShapeMismatch { .. })
        ));
    }

    #[test]
    fn triple_reconstructs_product() {
        let t = BeaverTriple::generate(0, (3, 4, 2), cfg(), &mut rng(14));
        let a = reconstruct(&t.a.0, &t.a.1).unwrap();
        let b = reconstruct(&t.b.0, &t.b.1).unwrap();
        let c = reconstruct(&t.c.0, &t.c.1).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), c);
    }

    #[test]
    fn supply_exhaustion_and_reuse() {
        let mut dealer = Dealer::new(cfg(), rng(15));
        let [mut s0, _] = dealer.provision(&[(2, 2, 2)]);
        let t = s0.take((2, 2, 2)).unwrap();
        s0.consume(&t).unwrap();
        assert!(matches!(s0.consume(&t), Err(Error::TripleReused(0))));
        assert!(matches!(s0.take((2, 2, 2)), Err(Error::TripleExhausted((2, 2, 2)))));
    }

    #[test]
    fn triple_share_residue_round_trip() {
        let [t0, _] = BeaverTriple::generate(5, (2, 3, 4), cfg(), &mut rng(16)).split();
        let mut buf = Vec::new();
        t0.to_residues(&mut buf);
        assert_eq!(buf.len(), TripleShare::residues((2, 3, 4)));
        let back = TripleShare::from_residues(5, (2, 3, 4), 0, &buf, cfg()).unwrap();
        assert_eq!(back, t0);
    }

    #[test]
    fn single_share_bytes_look_uniform() {
        // Chi-square over the low byte of [x]_0 for a fixed secret in a 32-bit ring.
        let c = RingConfig::new(32, 8).unwrap();
        let x = RingTensor::new(vec![1], vec![42], c).unwrap();
        let mut r = rng(17);
        let mut hist = [0u32; 256];
        let trials = 25_600;
        for _ in 0..trials {
            let (s0, _) = share(&x, &mut r);
            hist[(s0.share.data()[0] & 0xff) as usize] += 1;
        }
        let expected = trials as f64 / 256.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 255 degrees of freedom; 0.999 quantile is about 330.
        assert!(chi2 < 330.0, "chi2 = {chi2}");
    }
}
