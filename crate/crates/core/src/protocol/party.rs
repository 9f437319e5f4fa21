//! One party's runtime: its links, its share of the transcript, and (for the
//! two computing parties) the share-level protocols.

use futures::future::join;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::transcript::{LayerKind, Message, OpRecord, Phase, ProtocolKind, Transcript};
use super::transport::{mesh, Frame, Links, OpTag, TransportKind};
use super::{Carry, PartyId};
use crate::error::{Error, Result};
use crate::model::{self, ops, Activation, NormParams};
use crate::ring::{decode, encode, RealTensor, RingConfig, RingTensor};
use crate::sharing::{
    beaver_close, beaver_open, pi_add, pi_add_public, pi_add_public_row, pi_scale, pi_scalmul, share, Dealer,
    Orientation, Rescale, SharedTensor, TripleShape, TripleSupply,
};

/// Links plus the party's own log of ops and sends.
pub struct Io {
    me: PartyId,
    links: Links,
    ring: RingConfig,
    phase: Phase,
    next_op: u64,
    ops: Vec<OpRecord>,
    messages: Vec<Message>,
    recording: bool,
}

/// Identifies the op a message belongs to.
#[derive(Clone, Debug)]
pub struct OpHandle {
    pub phase: Phase,
    pub op_id: u64,
    pub label: String,
    pub kind: LayerKind,
}

impl Io {
    /// `recording` parties write op records; the other computing party only
    /// advances its counter in step.
    pub fn new(me: PartyId, links: Links, ring: RingConfig, recording: bool) -> Self {
        Self {
            me,
            links,
            ring,
            phase: Phase::Online,
            next_op: 1,
            ops: Vec::new(),
            messages: Vec::new(),
            recording,
        }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn ring(&self) -> RingConfig {
        self.ring
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Starts an op with the next id from the shared counter.
    pub fn begin(
        &mut self,
        label: impl Into<String>,
        kind: LayerKind,
        protocol: ProtocolKind,
        elements: usize,
    ) -> OpHandle {
        let id = self.next_op;
        self.next_op += 1;
        self.begin_with_id(id, label, kind, protocol, elements)
    }

    /// Starts an op with a fixed id (the dealer's ops live at id 0).
    pub fn begin_with_id(
        &mut self,
        op_id: u64,
        label: impl Into<String>,
        kind: LayerKind,
        protocol: ProtocolKind,
        elements: usize,
    ) -> OpHandle {
        let h = OpHandle {
            phase: self.phase,
            op_id,
            label: label.into(),
            kind,
        };
        if self.recording {
            self.ops.push(OpRecord {
                phase: h.phase,
                op_id,
                label: h.label.clone(),
                kind,
                protocol,
                elements: elements as u64,
            });
        }
        h
    }

    pub async fn send(&mut self, to: PartyId, tag: OpTag, op: &OpHandle, round: u32, residues: &[u64]) -> Result<()> {
        let frame = Frame::from_residues(tag, residues, self.ring);
        self.messages.push(Message {
            phase: op.phase,
            op_id: op.op_id,
            label: op.label.clone(),
            kind: op.kind,
            from: self.me,
            to,
            bytes: frame.payload.len() as u64,
            round,
        });
        self.links.get(to).send(&frame).await
    }

    pub async fn recv(&mut self, from: PartyId, tag: OpTag, expect_len: usize) -> Result<Vec<u64>> {
        let frame = self.links.get(from).recv(tag).await?;
        let r = frame.residues(self.ring)?;
        if r.len() != expect_len {
            return Err(Error::TransportFailure {
                from,
                to: self.me,
                reason: format!("expected {expect_len} residues, got {}", r.len()),
            });
        }
        Ok(r)
    }

    pub fn into_log(self) -> (Vec<OpRecord>, Vec<Message>) {
        (self.ops, self.messages)
    }
}

/// A shared intermediate and the permutation it carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Value {
    pub share: SharedTensor,
    pub carry: Carry,
}

impl Value {
    pub fn new(share: SharedTensor, carry: Carry) -> Self {
        Self { share, carry }
    }

    pub fn shape(&self) -> &[usize] {
        self.share.shape()
    }
}

/// Which side of `X` a shared permutation multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `X · π`
    Right,
    /// `πᵀ · X`
    Left,
}

/// The function the cloud evaluates in the clear during a reveal.
#[derive(Clone, Copy, Debug)]
pub enum Nonlinear<'a> {
    Softmax,
    Activation(Activation),
    Tanh,
    /// Norm parameters as the cloud holds them; `None` on the developer side.
    Norm(Option<&'a NormParams>),
}

impl Nonlinear<'_> {
    pub fn apply(&self, x: &RealTensor) -> Result<RealTensor> {
        match self {
            Nonlinear::Softmax => ops::softmax_rows(x),
            Nonlinear::Activation(a) => model::activation(*a, x),
            Nonlinear::Tanh => ops::tanh(x),
            Nonlinear::Norm(Some(n)) => n.apply(x),
            Nonlinear::Norm(None) => Err(Error::InvalidArgument("norm reveal without norm parameters".into())),
        }
    }
}

/// What the cloud saw during one reveal (test instrumentation).
#[derive(Clone, Debug, PartialEq)]
pub struct RevealRecord {
    pub label: String,
    pub value: RealTensor,
}

/// P0 or P1 inside a session.
pub struct ComputeParty {
    pub io: Io,
    index: u8,
    supply: TripleSupply,
    rng: ChaCha20Rng,
    check_ledger: bool,
    record_reveals: bool,
    reveals: Vec<RevealRecord>,
}

impl ComputeParty {
    pub fn new(io: Io, supply: TripleSupply, rng: ChaCha20Rng, check_ledger: bool, record_reveals: bool) -> Self {
        let index = match io.me() {
            PartyId::P0 => 0,
            PartyId::P1 => 1,
            PartyId::P2 => panic!("P2 does not compute on shares"),
        };
        Self {
            io,
            index,
            supply,
            rng,
            check_ledger,
            record_reveals,
            reveals: Vec::new(),
        }
    }

    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn ring(&self) -> RingConfig {
        self.io.ring()
    }

    pub fn peer(&self) -> PartyId {
        if self.index == 0 {
            PartyId::P1
        } else {
            PartyId::P0
        }
    }

    pub fn supply_mut(&mut self) -> &mut TripleSupply {
        &mut self.supply
    }

    pub fn take_reveals(&mut self) -> Vec<RevealRecord> {
        std::mem::take(&mut self.reveals)
    }

    /// Permutation-ledger check at a call site.
    pub fn expect(&self, site: &'static str, found: Carry, expected: Carry) -> Result<()> {
        if self.check_ledger && found != expected {
            return Err(Error::PermLedger { site, expected, found });
        }
        Ok(())
    }

    /// `Π_ScalMul`: local product with a public tensor.
    #[allow(clippy::too_many_arguments)]
    pub fn scalmul(
        &mut self,
        public: &RingTensor,
        x: &Value,
        orientation: Orientation,
        mode: Rescale,
        carry: Carry,
        label: &str,
        kind: LayerKind,
    ) -> Result<Value> {
        self.io.begin(label, kind, ProtocolKind::ScalMul, 0);
        Ok(Value::new(pi_scalmul(public, &x.share, orientation, mode)?, carry))
    }

    /// Public scalar (already encoded), then truncation.
    pub fn scale(&mut self, x: &Value, scalar: u64, label: &str, kind: LayerKind) -> Value {
        self.io.begin(label, kind, ProtocolKind::ScalMul, 0);
        Value::new(pi_scale(&x.share, scalar, Rescale::Truncate), x.carry)
    }

    /// `Π_Add` of two shared values carrying the same permutation.
    pub fn add(&mut self, site: &'static str, x: &Value, y: &Value, kind: LayerKind) -> Result<Value> {
        self.expect(site, y.carry, x.carry)?;
        self.io.begin(site, kind, ProtocolKind::Add, 0);
        Ok(Value::new(pi_add(&x.share, &y.share)?, x.carry))
    }

    /// Adds a public tensor (party 0 only).
    pub fn add_public(&mut self, x: &Value, public: &RingTensor, label: &str, kind: LayerKind) -> Result<Value> {
        self.io.begin(label, kind, ProtocolKind::Add, 0);
        Ok(Value::new(pi_add_public(&x.share, public)?, x.carry))
    }

    /// Adds a public bias row to every row (party 0 only).
    pub fn add_public_row(&mut self, x: &Value, bias: &RingTensor, label: &str, kind: LayerKind) -> Result<Value> {
        self.io.begin(label, kind, ProtocolKind::Add, 0);
        Ok(Value::new(pi_add_public_row(&x.share, bias)?, x.carry))
    }

    /// Adds a shared bias row: each party adds its own share of it.
    pub fn add_shared_row(&mut self, x: &Value, bias: &SharedTensor, label: &str, kind: LayerKind) -> Result<Value> {
        self.io.begin(label, kind, ProtocolKind::Add, 0);
        let s = SharedTensor::new(x.share.share.add_row_vector(&bias.share)?, x.share.index)?;
        Ok(Value::new(s, x.carry))
    }

    async fn beaver(
        &mut self,
        x: &SharedTensor,
        y: &SharedTensor,
        mode: Rescale,
        label: &str,
        kind: LayerKind,
        protocol: ProtocolKind,
    ) -> Result<SharedTensor> {
        let (p, q) = x.share.dims()?;
        let (q2, r) = y.share.dims()?;
        if q != q2 {
            return Err(Error::ShapeMismatch(format!("{label}: {p}x{q} · {q2}x{r}")));
        }
        let shape: TripleShape = (p, q, r);
        let elements = p * q + q * r;
        let op = self.io.begin(label, kind, protocol, elements);
        let t = self.supply.take(shape)?;
        self.supply.consume(&t)?;
        let (e, d) = beaver_open(x, y, &t)?;
        let mut mine = Vec::with_capacity(elements);
        mine.extend_from_slice(e.data());
        mine.extend_from_slice(d.data());
        let peer = self.peer();
        // Fixed order keeps blocking transports deadlock-free; logically one round.
        let theirs = if self.index == 0 {
            self.io.send(peer, OpTag::Beaver, &op, 1, &mine).await?;
            self.io.recv(peer, OpTag::Beaver, elements).await?
        } else {
            let theirs = self.io.recv(peer, OpTag::Beaver, elements).await?;
            self.io.send(peer, OpTag::Beaver, &op, 1, &mine).await?;
            theirs
        };
        let cfg = self.ring();
        let (te, td) = theirs.split_at(p * q);
        let e = e.add(&RingTensor::new(vec![p, q], te.to_vec(), cfg)?)?;
        let d = d.add(&RingTensor::new(vec![q, r], td.to_vec(), cfg)?)?;
        beaver_close(&e, &d, &t, mode)
    }

    /// `Π_MatMul` of two shared operands, truncated back to scale `2^f`.
    pub async fn matmul(&mut self, x: &Value, y: &Value, carry: Carry, label: &str, kind: LayerKind) -> Result<Value> {
        let s = self
            .beaver(&x.share, &y.share, Rescale::Truncate, label, kind, ProtocolKind::MatMul)
            .await?;
        Ok(Value::new(s, carry))
    }

    /// `Π_PPP`: multiplies by a shared raw 0/1 permutation matrix, exactly.
    pub async fn permute(
        &mut self,
        x: &Value,
        perm: &SharedTensor,
        side: Side,
        carry: Carry,
        label: &str,
    ) -> Result<Value> {
        let s = match side {
            Side::Right => {
                self.beaver(
                    &x.share,
                    perm,
                    Rescale::Exact,
                    label,
                    LayerKind::Ppp,
                    ProtocolKind::Permute,
                )
                .await?
            }
            Side::Left => {
                let pt = perm.transpose()?;
                self.beaver(
                    &pt,
                    &x.share,
                    Rescale::Exact,
                    label,
                    LayerKind::Ppp,
                    ProtocolKind::Permute,
                )
                .await?
            }
        };
        Ok(Value::new(s, carry))
    }

    /// Reveal-under-permutation: P0 hands its share to P1, which evaluates
    /// `f` on the (permuted) plaintext and returns a fresh sharing.
    pub async fn reveal(&mut self, x: &Value, f: Nonlinear<'_>, label: &str, kind: LayerKind) -> Result<Value> {
        let shape = x.shape().to_vec();
        let size = x.share.share.len();
        let op = self.io.begin(label, kind, ProtocolKind::Reveal, size);
        let cfg = self.ring();
        let share = if self.index == 0 {
            self.io
                .send(PartyId::P1, OpTag::Reveal, &op, 1, x.share.share.data())
                .await?;
            let back = self.io.recv(PartyId::P1, OpTag::Reveal, size).await?;
            SharedTensor::new(RingTensor::new(shape, back, cfg)?, 0)?
        } else {
            let other = self.io.recv(PartyId::P0, OpTag::Reveal, size).await?;
            let full = x.share.share.add(&RingTensor::new(shape, other, cfg)?)?;
            let plain = decode(&full);
            let y = f.apply(&plain)?;
            if self.record_reveals {
                self.reveals.push(RevealRecord {
                    label: label.to_string(),
                    value: plain,
                });
            }
            let (s0, s1) = share(&encode(&y, cfg)?, &mut self.rng);
            self.io
                .send(PartyId::P0, OpTag::Reveal, &op, 2, s0.share.data())
                .await?;
            s1
        };
        Ok(Value::new(share, x.carry))
    }
}

/// Runs a two-party computation between P0 and P1 over in-process links,
/// with triples for `plan` handed straight to both (no dealer messages).
/// `f` is called once per party; it picks its inputs by [`ComputeParty::index`].
pub fn run_pair<T>(
    ring: RingConfig,
    plan: &[TripleShape],
    seed: u64,
    f: impl AsyncFn(&mut ComputeParty) -> Result<T>,
) -> Result<(T, T, Transcript)> {
    let [l0, l1, _] = mesh(TransportKind::InProcess)?;
    let [s0, s1] = Dealer::new(ring, ChaCha20Rng::seed_from_u64(seed)).provision(plan);
    let mut reshare = ChaCha20Rng::seed_from_u64(seed);
    reshare.set_stream(1);
    let mut p0 = ComputeParty::new(
        Io::new(PartyId::P0, l0, ring, true),
        s0,
        ChaCha20Rng::seed_from_u64(seed),
        true,
        false,
    );
    let mut p1 = ComputeParty::new(Io::new(PartyId::P1, l1, ring, false), s1, reshare, true, false);
    let (r0, r1) = futures::executor::block_on(join(f(&mut p0), f(&mut p1)));
    let t = Transcript::merge(ring.residue_bytes(), [p0.io.into_log(), p1.io.into_log()]);
    Ok((r0?, r1?, t))
}
