//! Initialization and the secure forward pass.
//!
//! Each party is an async program talking only through its links. The
//! lockstep scheduler polls all three on one thread; the threaded scheduler
//! gives each its own thread. Either way the transcript is merged into a
//! canonical order, so both produce identical results.

use std::collections::HashMap;
use std::future::Future;

use futures::executor::block_on;
use futures::future::join3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::party::{ComputeParty, Io, Nonlinear, RevealRecord, Side, Value};
use super::transcript::{LayerKind, Phase, ProtocolKind, Transcript};
use super::transport::{mesh, OpTag, TransportKind};
use super::{Carry, PartyId};
use crate::error::{Error, Result};
use crate::model::{pad_tokens, Arch, AttentionMask, ModelConfig, ModelParams, NormParams};
use crate::perm::{as_shared_matrix, permute_params, PermSet, PermSpec};
use crate::ring::{decode, encode, RealTensor, RingConfig, RingTensor};
use crate::sharing::{
    reconstruct, share, BeaverTriple, Orientation, Rescale, SharedTensor, TripleShape, TripleShare, TripleSupply,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Permuted public weights, reveal under permutation.
    Centaur,
    /// Secret-shared weights, every linear layer a Beaver product, reveals in
    /// the clear. Insecure; for cost comparison only.
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    Lockstep,
    Threaded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seeds {
    pub perms: u64,
    pub shares: u64,
    pub triples: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            perms: 1,
            shares: 2,
            triples: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub ring: RingConfig,
    pub scheduler: Scheduler,
    pub transport: TransportKind,
    /// Check the permutation ledger at every call site.
    pub check_ledger: bool,
    /// Keep what the cloud sees at each reveal.
    pub record_reveals: bool,
    /// Use identity permutations (test hook).
    pub force_identity_perms: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            ring: RingConfig::default(),
            scheduler: Scheduler::Lockstep,
            transport: TransportKind::InProcess,
            check_ledger: cfg!(debug_assertions),
            record_reveals: false,
            force_identity_perms: false,
        }
    }
}

/// RNG purposes, so no two uses of a seed share a stream.
#[derive(Clone, Copy)]
enum Stream {
    SetupShares = 1,
    Reshare = 2,
    Input = 3,
    Triples = 4,
    Developer = 5,
}

fn stream_rng(seed: u64, stream: Stream, session: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(((stream as u64) << 32) | session);
    r
}

#[derive(Clone, Debug)]
enum Operand {
    Public(RingTensor),
    Shared(SharedTensor),
}

/// A linear layer as a computing party holds it. Shared weights are kept
/// transposed (`in × out`) ready for the Beaver product.
#[derive(Clone, Debug)]
struct Linear {
    w: Operand,
    b: Operand,
    carry_in: Carry,
    carry_out: Carry,
}

#[derive(Clone, Debug)]
struct BlockView {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: Option<NormParams>,
    ffn1: Linear,
    ffn2: Linear,
    norm2: Option<NormParams>,
}

#[derive(Clone, Debug)]
enum HeadView {
    Classifier { pool: Linear, cls: Linear },
    LanguageModel { norm: Option<NormParams>, lm: Linear },
}

/// Expected carries at the reveal sites.
#[derive(Clone, Copy, Debug)]
struct Carries {
    stream: Carry,
    ffn: Carry,
    scores: Carry,
}

/// Everything one computing party needs for the forward pass.
#[derive(Clone, Debug)]
struct PartyModel {
    embed: Operand,
    position: Operand,
    embed_norm: Option<NormParams>,
    blocks: Vec<BlockView>,
    head: HeadView,
    carries: Carries,
    /// This party's share of the raw 0/1 matrix of π₁ (Centaur only).
    pi1: Option<SharedTensor>,
}

struct Operands {
    map: HashMap<String, Operand>,
}

impl Operands {
    fn take(&mut self, name: &str) -> Result<Operand> {
        self.map
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    fn linear(&mut self, w: &str, b: &str, carry_in: Carry, carry_out: Carry) -> Result<Linear> {
        let w = match self.take(w)? {
            Operand::Shared(s) => Operand::Shared(s.transpose()?),
            public => public,
        };
        Ok(Linear {
            w,
            b: self.take(b)?,
            carry_in,
            carry_out,
        })
    }
}

fn clear_norm(params: Option<&NormParams>) -> Option<NormParams> {
    params.cloned()
}

/// Builds a party's view. `ops` holds every non-norm tensor by name; `norms`
/// is the cloud's cleartext copy of the norm parameters (if this party is the cloud).
fn build_view(
    cfg: &ModelConfig,
    mode: Mode,
    mut ops: Operands,
    norms: Option<&ModelParams>,
    pi1: Option<SharedTensor>,
) -> Result<PartyModel> {
    let (s, f, a) = match mode {
        Mode::Centaur => (Carry::Pi, Carry::Pi2, Carry::Pi1),
        Mode::Baseline => (Carry::None, Carry::None, Carry::None),
    };
    let none = Carry::None;
    let blocks = (0..cfg.blocks)
        .map(|i| {
            let p = format!("blocks.{i}");
            let nb = norms.map(|n| &n.blocks[i]);
            Ok(BlockView {
                q: ops.linear(&format!("{p}.attn.q"), &format!("{p}.attn.q_bias"), s, none)?,
                k: ops.linear(&format!("{p}.attn.k"), &format!("{p}.attn.k_bias"), s, none)?,
                v: ops.linear(&format!("{p}.attn.v"), &format!("{p}.attn.v_bias"), s, none)?,
                o: ops.linear(&format!("{p}.attn.o"), &format!("{p}.attn.o_bias"), none, s)?,
                norm1: clear_norm(nb.map(|b| &b.norm1)),
                ffn1: ops.linear(&format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"), s, f)?,
                ffn2: ops.linear(&format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"), f, s)?,
                norm2: clear_norm(nb.map(|b| &b.norm2)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let head = match cfg.arch {
        Arch::Encoder => HeadView::Classifier {
            pool: ops.linear("head.pool", "head.pool_bias", s, s)?,
            cls: ops.linear("head.cls", "head.cls_bias", s, none)?,
        },
        Arch::Decoder => HeadView::LanguageModel {
            norm: norms.and_then(|n| match &n.head {
                crate::model::HeadParams::LanguageModel { norm, .. } => Some(norm.clone()),
                _ => None,
            }),
            lm: ops.linear("head.lm", "head.lm_bias", s, none)?,
        },
    };
    Ok(PartyModel {
        embed: ops.take("embed.token")?,
        position: ops.take("embed.position")?,
        embed_norm: norms.map(|n| n.embed_norm.clone()),
        blocks,
        head,
        carries: Carries {
            stream: s,
            ffn: f,
            scores: a,
        },
        pi1,
    })
}

fn is_norm(name: &str) -> bool {
    name.ends_with(".gamma") || name.ends_with(".beta")
}

/// Attention projections carry no bias in the parameter set; a zero bias keeps
/// every linear layer uniform.
fn with_zero_qkv_bias(
    cfg: &ModelConfig,
    map: &mut HashMap<String, Operand>,
    shared_index: Option<u8>,
    ring: RingConfig,
) {
    for i in 0..cfg.blocks {
        for w in ["q", "k", "v"] {
            let z = RingTensor::zeros(vec![cfg.d_model], ring);
            let op = match shared_index {
                None => Operand::Public(z),
                Some(idx) => Operand::Shared(SharedTensor::new(z, idx).expect("index 0 or 1")),
            };
            map.insert(format!("blocks.{i}.attn.{w}_bias"), op);
        }
    }
}

fn public_operands(params: &ModelParams, ring: RingConfig) -> Result<Operands> {
    let mut map = HashMap::new();
    for (name, t) in params.named_tensors() {
        if !is_norm(&name) {
            map.insert(name, Operand::Public(encode(t, ring)?));
        }
    }
    with_zero_qkv_bias(&params.config, &mut map, None, ring);
    Ok(Operands { map })
}

/// Rebuilds real parameters from residues in container order.
fn params_from_residues(cfg: &ModelConfig, residues: &[u64], ring: RingConfig) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(cfg)?;
    let mut at = 0;
    for slot in p.tensors_mut() {
        let shape = slot.shape().to_vec();
        let len = slot.len();
        let chunk = residues
            .get(at..at + len)
            .ok_or_else(|| Error::Format("parameter payload too short".into()))?;
        *slot = decode(&RingTensor::new(shape, chunk.to_vec(), ring)?);
        at += len;
    }
    if at != residues.len() {
        return Err(Error::Format("parameter payload too long".into()));
    }
    Ok(p)
}

fn residues_of(params: &ModelParams, ring: RingConfig, keep: impl Fn(&str) -> bool) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (name, t) in params.named_tensors() {
        if keep(&name) {
            out.extend_from_slice(encode(t, ring)?.data());
        }
    }
    Ok(out)
}

/// Runs three party programs under the chosen scheduler.
fn run3<A: Send, B: Send, C: Send>(
    scheduler: Scheduler,
    f0: impl Future<Output = Result<A>> + Send,
    f1: impl Future<Output = Result<B>> + Send,
    f2: impl Future<Output = Result<C>> + Send,
) -> Result<(A, B, C)> {
    let (r0, r1, r2) = match scheduler {
        Scheduler::Lockstep => block_on(join3(f0, f1, f2)),
        Scheduler::Threaded => std::thread::scope(|s| {
            let h0 = s.spawn(|| block_on(f0));
            let h1 = s.spawn(|| block_on(f1));
            let h2 = s.spawn(|| block_on(f2));
            (
                h0.join().expect("P0 thread panicked"),
                h1.join().expect("P1 thread panicked"),
                h2.join().expect("P2 thread panicked"),
            )
        }),
    };
    // A hang-up seen by one party is a symptom; report the cause if there is one.
    let errors: Vec<&Error> = [r0.as_ref().err(), r1.as_ref().err(), r2.as_ref().err()]
        .into_iter()
        .flatten()
        .collect();
    if let Some(root) = errors
        .iter()
        .find(|e| !matches!(e, Error::TransportFailure { .. }))
        .or(errors.first())
    {
        return Err(clone_error(root));
    }
    Ok((r0?, r1?, r2?))
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::MagnitudeOverflow { value, limit_log2 } => Error::MagnitudeOverflow {
            value: *value,
            limit_log2: *limit_log2,
        },
        Error::NonFinite { value, index } => Error::NonFinite {
            value: *value,
            index: *index,
        },
        Error::ShapeMismatch(s) => Error::ShapeMismatch(s.clone()),
        Error::DimMismatch { expected, got } => Error::DimMismatch {
            expected: *expected,
            got: *got,
        },
        Error::InvalidPermutation(s) => Error::InvalidPermutation(s.clone()),
        Error::InvalidRing(s) => Error::InvalidRing(s.clone()),
        Error::ShareIndexMismatch(a, b) => Error::ShareIndexMismatch(*a, *b),
        Error::TripleShapeMismatch { triple, needed } => Error::TripleShapeMismatch {
            triple: *triple,
            needed: *needed,
        },
        Error::TripleExhausted(s) => Error::TripleExhausted(*s),
        Error::TripleReused(id) => Error::TripleReused(*id),
        Error::TransportFailure { from, to, reason } => Error::TransportFailure {
            from: *from,
            to: *to,
            reason: reason.clone(),
        },
        Error::PermLedger { site, expected, found } => Error::PermLedger {
            site,
            expected: *expected,
            found: *found,
        },
        Error::TokenOutOfRange { id, vocab } => Error::TokenOutOfRange { id: *id, vocab: *vocab },
        Error::ConfigMismatch(s) => Error::ConfigMismatch(s.clone()),
        Error::DegenerateVariance(s) => Error::DegenerateVariance(s.clone()),
        Error::InvalidArgument(s) => Error::InvalidArgument(s.clone()),
        Error::Format(s) => Error::Format(s.clone()),
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), io.to_string())),
    }
}

fn check_options(options: &EngineOptions) -> Result<()> {
    options.ring.validate()?;
    if options.transport == TransportKind::LocalSocket && options.scheduler == Scheduler::Lockstep {
        return Err(Error::ConfigMismatch(
            "socket transport blocks; use the threaded scheduler".into(),
        ));
    }
    Ok(())
}

fn check_params(theta: &ModelParams) -> Result<()> {
    theta.config.validate()?;
    let want = ModelParams::zeros(&theta.config)?;
    for ((name, got), (_, exp)) in theta.named_tensors().iter().zip(want.named_tensors()) {
        if got.shape() != exp.shape() {
            return Err(Error::ConfigMismatch(format!(
                "{name} has shape {:?}, config implies {:?}",
                got.shape(),
                exp.shape()
            )));
        }
    }
    if theta.named_tensors().len() != want.named_tensors().len() {
        return Err(Error::ConfigMismatch(
            "parameter set does not match its head type".into(),
        ));
    }
    Ok(())
}

/// The three parties' long-lived state after initialization.
pub struct Engine {
    config: ModelConfig,
    mode: Mode,
    options: EngineOptions,
    seeds: Seeds,
    session: u64,
    /// P0: Π (Centaur only) and its view.
    perms: Option<PermSet>,
    developer: PartyModel,
    /// P1: Θ′ as received (Centaur only) and its view.
    cloud_params: Option<ModelParams>,
    cloud: PartyModel,
    /// P2: π as received (Centaur only).
    client_pi: Option<PermSpec>,
    setup: Transcript,
}

/// Result of one secure forward pass as the client sees it.
#[derive(Clone, Debug)]
pub struct Inference {
    pub logits: RealTensor,
    pub transcript: Transcript,
    /// What the cloud reconstructed at each reveal, if recording was enabled.
    pub reveals: Vec<RevealRecord>,
}

/// Centaur initialization: P0 samples Π, permutes Θ and ships Θ′ to P1, π to
/// P2, and shares of π₁ to P1.
pub fn initialize(theta: &ModelParams, seeds: Seeds, options: EngineOptions) -> Result<Engine> {
    check_options(&options)?;
    check_params(theta)?;
    let cfg = theta.config.clone();
    let ring = options.ring;
    let perms = if options.force_identity_perms {
        PermSet::identity(&cfg)
    } else {
        PermSet::random(&cfg, seeds.perms)
    };
    let theta_p = permute_params(theta, &perms)?.0;
    let payload = residues_of(&theta_p, ring, |_| true)?;
    let mut rng = stream_rng(seeds.shares, Stream::SetupShares, 0);
    let (pi1_0, pi1_1) = as_shared_matrix(&perms.pi1, ring, &mut rng);
    let pi_residues: Vec<u64> = perms.pi.indices().iter().map(|&i| i as u64).collect();
    let (n, d) = (cfg.seq_len, cfg.d_model);

    let [l0, l1, l2] = mesh(options.transport)?;
    let p0 = async {
        let mut io = Io::new(PartyId::P0, l0, ring, true);
        io.set_phase(Phase::Setup);
        let op = io.begin("theta", LayerKind::Setup, ProtocolKind::Setup, payload.len());
        io.send(PartyId::P1, OpTag::Setup, &op, 1, &payload).await?;
        let op = io.begin("pi1", LayerKind::Setup, ProtocolKind::Setup, n * n);
        io.send(PartyId::P1, OpTag::Setup, &op, 1, pi1_1.share.data()).await?;
        let op = io.begin("pi", LayerKind::Setup, ProtocolKind::Setup, d);
        io.send(PartyId::P2, OpTag::Setup, &op, 1, &pi_residues).await?;
        Ok(io.into_log())
    };
    let p1 = async {
        let mut io = Io::new(PartyId::P1, l1, ring, false);
        let count = theta.parameter_count();
        let theta_r = io.recv(PartyId::P0, OpTag::Setup, count).await?;
        let params = params_from_residues(&cfg, &theta_r, ring)?;
        let pi1 = io.recv(PartyId::P0, OpTag::Setup, n * n).await?;
        let pi1 = SharedTensor::new(RingTensor::new(vec![n, n], pi1, ring)?, 1)?;
        Ok((io.into_log(), params, pi1))
    };
    let p2 = async {
        let mut io = Io::new(PartyId::P2, l2, ring, true);
        let r = io.recv(PartyId::P0, OpTag::Setup, d).await?;
        let pi = PermSpec::new(r.into_iter().map(|v| v as usize).collect())?;
        Ok((io.into_log(), pi))
    };
    let (log0, (log1, cloud_params, pi1_share), (log2, client_pi)) = run3(options.scheduler, p0, p1, p2)?;
    let setup = Transcript::merge(ring.residue_bytes(), [log0, log1, log2]);

    let developer = build_view(&cfg, Mode::Centaur, public_operands(&theta_p, ring)?, None, Some(pi1_0))?;
    let cloud = build_view(
        &cfg,
        Mode::Centaur,
        public_operands(&cloud_params, ring)?,
        Some(&cloud_params),
        Some(pi1_share),
    )?;
    Ok(Engine {
        config: cfg,
        mode: Mode::Centaur,
        options,
        seeds,
        session: 0,
        perms: Some(perms),
        developer,
        cloud_params: Some(cloud_params),
        cloud,
        client_pi: Some(client_pi),
        setup,
    })
}

/// All-shares baseline initialization: P0 secret-shares every weight with
/// P1 and hands P1 the norm parameters in the clear.
pub fn initialize_baseline(theta: &ModelParams, seeds: Seeds, options: EngineOptions) -> Result<Engine> {
    check_options(&options)?;
    check_params(theta)?;
    let cfg = theta.config.clone();
    let ring = options.ring;
    let mut rng = stream_rng(seeds.shares, Stream::SetupShares, 0);
    let mut own = HashMap::new();
    let mut sent = Vec::new();
    let mut shapes = Vec::new();
    for (name, t) in theta.named_tensors() {
        if is_norm(&name) {
            continue;
        }
        let (s0, s1) = share(&encode(t, ring)?, &mut rng);
        sent.extend_from_slice(s1.share.data());
        shapes.push((name.clone(), t.shape().to_vec()));
        own.insert(name, Operand::Shared(s0));
    }
    with_zero_qkv_bias(&cfg, &mut own, Some(0), ring);
    let norms = residues_of(theta, ring, is_norm)?;

    let [l0, l1, l2] = mesh(options.transport)?;
    let p0 = async {
        let mut io = Io::new(PartyId::P0, l0, ring, true);
        io.set_phase(Phase::Setup);
        let op = io.begin("theta.shares", LayerKind::Setup, ProtocolKind::Setup, sent.len());
        io.send(PartyId::P1, OpTag::Setup, &op, 1, &sent).await?;
        let op = io.begin("norms", LayerKind::Setup, ProtocolKind::Setup, norms.len());
        io.send(PartyId::P1, OpTag::Setup, &op, 1, &norms).await?;
        Ok(io.into_log())
    };
    let p1 = async {
        let mut io = Io::new(PartyId::P1, l1, ring, false);
        let r = io.recv(PartyId::P0, OpTag::Setup, sent.len()).await?;
        let mut map = HashMap::new();
        let mut at = 0;
        for (name, shape) in &shapes {
            let len: usize = shape.iter().product();
            let t = RingTensor::new(shape.clone(), r[at..at + len].to_vec(), ring)?;
            map.insert(name.clone(), Operand::Shared(SharedTensor::new(t, 1)?));
            at += len;
        }
        let nr = io.recv(PartyId::P0, OpTag::Setup, norms.len()).await?;
        // Norm parameters arrive in clear; everything else is a share.
        let mut clear = ModelParams::zeros(&cfg)?;
        let mut at = 0;
        let names: Vec<String> = clear.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(clear.tensors_mut()) {
            if is_norm(name) {
                let len = slot.len();
                *slot = decode(&RingTensor::new(
                    slot.shape().to_vec(),
                    nr[at..at + len].to_vec(),
                    ring,
                )?);
                at += len;
            }
        }
        Ok((io.into_log(), map, clear))
    };
    let p2 = async {
        drop(l2);
        Ok(())
    };
    let (log0, (log1, mut cloud_map, clear), ()) = run3(options.scheduler, p0, p1, p2)?;
    let setup = Transcript::merge(ring.residue_bytes(), [log0, log1]);
    with_zero_qkv_bias(&cfg, &mut cloud_map, Some(1), ring);
    let developer = build_view(&cfg, Mode::Baseline, Operands { map: own }, None, None)?;
    let cloud = build_view(&cfg, Mode::Baseline, Operands { map: cloud_map }, Some(&clear), None)?;
    Ok(Engine {
        config: cfg,
        mode: Mode::Baseline,
        options,
        seeds,
        session: 0,
        perms: None,
        developer,
        cloud_params: None,
        cloud,
        client_pi: None,
        setup,
    })
}

/// Beaver-triple shapes one forward pass consumes, in program order.
pub fn triple_plan(cfg: &ModelConfig, mode: Mode) -> Vec<TripleShape> {
    let (n, d, k, v, dh) = (cfg.seq_len, cfg.d_model, cfg.d_ff, cfg.vocab, cfg.head_dim());
    let mut plan = Vec::new();
    match mode {
        Mode::Centaur => {
            for _ in 0..cfg.blocks {
                plan.push((n, n, d));
                for _ in 0..cfg.heads {
                    plan.extend([(n, dh, n), (n, n, n), (n, n, dh)]);
                }
            }
        }
        Mode::Baseline => {
            plan.push((n, v, d));
            for _ in 0..cfg.blocks {
                plan.extend([(n, d, d); 3]);
                for _ in 0..cfg.heads {
                    plan.extend([(n, dh, n), (n, n, dh)]);
                }
                plan.extend([(n, d, d), (n, d, k), (n, k, d)]);
            }
            match cfg.arch {
                Arch::Encoder => plan.extend([(1, d, d), (1, d, cfg.classes)]),
                Arch::Decoder => plan.push((n, d, v)),
            }
        }
    }
    plan
}

fn output_shape(cfg: &ModelConfig) -> (usize, usize) {
    match cfg.arch {
        Arch::Encoder => (1, cfg.classes),
        Arch::Decoder => (cfg.seq_len, cfg.vocab),
    }
}

async fn linear(
    p: &mut ComputeParty,
    x: &Value,
    l: &Linear,
    site: &'static str,
    label: &str,
    kind: LayerKind,
) -> Result<Value> {
    p.expect(site, x.carry, l.carry_in)?;
    let y = match &l.w {
        Operand::Public(w) => p.scalmul(
            w,
            x,
            Orientation::RightTransposed,
            Rescale::Truncate,
            l.carry_out,
            label,
            kind,
        )?,
        Operand::Shared(wt) => {
            let w = Value::new(wt.clone(), l.carry_out);
            p.matmul(x, &w, l.carry_out, label, kind).await?
        }
    };
    let bias = format!("{label}.bias");
    match &l.b {
        Operand::Public(b) => p.add_public_row(&y, b, &bias, kind),
        Operand::Shared(b) => p.add_shared_row(&y, b, &bias, kind),
    }
}

/// The block program both computing parties run on their shares.
async fn forward_shares(
    p: &mut ComputeParty,
    m: &PartyModel,
    cfg: &ModelConfig,
    input: Value,
    mask: &RingTensor,
) -> Result<Value> {
    let c = m.carries;
    let ring = p.ring();
    let emb = LayerKind::Embedding;

    let x = match &m.embed {
        Operand::Public(w) => p.scalmul(
            w,
            &input,
            Orientation::Right,
            Rescale::Truncate,
            c.stream,
            "embed.token",
            emb,
        )?,
        Operand::Shared(w) => {
            let w = Value::new(w.clone(), c.stream);
            p.matmul(&input, &w, c.stream, "embed.token", emb).await?
        }
    };
    let x = match &m.position {
        Operand::Public(pe) => p.add_public(&x, pe, "embed.position", emb)?,
        Operand::Shared(pe) => p.add("embed.position", &x, &Value::new(pe.clone(), c.stream), emb)?,
    };
    p.expect("embed.norm", x.carry, c.stream)?;
    let mut x = p
        .reveal(&x, Nonlinear::Norm(m.embed_norm.as_ref()), "embed.norm", emb)
        .await?;

    let dh = cfg.head_dim();
    let inv_sqrt = ring.encode_scalar(1.0 / (dh as f64).sqrt())?;
    for (bi, b) in m.blocks.iter().enumerate() {
        let pre = format!("blocks.{bi}");
        let q = linear(p, &x, &b.q, "attn.q", &format!("{pre}.attn.q"), LayerKind::Linear).await?;
        let k = linear(p, &x, &b.k, "attn.k", &format!("{pre}.attn.k"), LayerKind::Linear).await?;
        let v = linear(p, &x, &b.v, "attn.v", &format!("{pre}.attn.v"), LayerKind::Linear).await?;
        let v = match &m.pi1 {
            Some(pi1) => {
                p.permute(&v, pi1, Side::Left, Carry::Pi1, &format!("{pre}.ppp.v"))
                    .await?
            }
            None => v,
        };
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let hp = format!("{pre}.head{h}");
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = Value::new(q.share.slice_cols(lo, hi)?, q.carry);
            let kt = Value::new(k.share.slice_cols(lo, hi)?.transpose()?, k.carry);
            let vh = Value::new(v.share.slice_cols(lo, hi)?, v.carry);
            p.expect("attn.scores", qh.carry, Carry::None)?;
            let s = p
                .matmul(&qh, &kt, Carry::None, &format!("{hp}.qk"), LayerKind::Matmul)
                .await?;
            let s = p.scale(&s, inv_sqrt, &format!("{hp}.scale"), LayerKind::Matmul);
            let s = p.add_public(&s, mask, &format!("{hp}.mask"), LayerKind::Matmul)?;
            let s = match &m.pi1 {
                Some(pi1) => {
                    p.permute(&s, pi1, Side::Right, Carry::Pi1, &format!("{hp}.ppp.scores"))
                        .await?
                }
                None => s,
            };
            p.expect("softmax", s.carry, c.scores)?;
            let o2 = p
                .reveal(&s, Nonlinear::Softmax, &format!("{hp}.softmax"), LayerKind::Softmax)
                .await?;
            p.expect("attn.values", vh.carry, o2.carry)?;
            heads.push(
                p.matmul(&o2, &vh, Carry::None, &format!("{hp}.av"), LayerKind::Matmul)
                    .await?,
            );
        }
        let o3 = Value::new(
            SharedTensor::hcat(&heads.iter().map(|h| h.share.clone()).collect::<Vec<_>>())?,
            Carry::None,
        );
        let o4 = linear(p, &o3, &b.o, "attn.o", &format!("{pre}.attn.o"), LayerKind::Linear).await?;
        let r1 = p.add("residual1", &x, &o4, LayerKind::Linear)?;
        p.expect("norm1", r1.carry, c.stream)?;
        let l1 = p
            .reveal(
                &r1,
                Nonlinear::Norm(b.norm1.as_ref()),
                &format!("{pre}.norm1"),
                LayerKind::Layernorm,
            )
            .await?;
        let o5 = linear(p, &l1, &b.ffn1, "ffn.w1", &format!("{pre}.ffn.w1"), LayerKind::Linear).await?;
        p.expect("activation", o5.carry, c.ffn)?;
        let g = p
            .reveal(
                &o5,
                Nonlinear::Activation(cfg.activation),
                &format!("{pre}.act"),
                LayerKind::Gelu,
            )
            .await?;
        let o6 = linear(p, &g, &b.ffn2, "ffn.w2", &format!("{pre}.ffn.w2"), LayerKind::Linear).await?;
        let r2 = p.add("residual2", &l1, &o6, LayerKind::Linear)?;
        p.expect("norm2", r2.carry, c.stream)?;
        x = p
            .reveal(
                &r2,
                Nonlinear::Norm(b.norm2.as_ref()),
                &format!("{pre}.norm2"),
                LayerKind::Layernorm,
            )
            .await?;
    }

    let ad = LayerKind::Adaptation;
    let y = match &m.head {
        HeadView::Classifier { pool, cls } => {
            let first = Value::new(x.share.slice_rows(0, 1)?, x.carry);
            let t = linear(p, &first, pool, "head.pool", "head.pool", ad).await?;
            p.expect("head.tanh", t.carry, c.stream)?;
            let t = p.reveal(&t, Nonlinear::Tanh, "head.tanh", ad).await?;
            linear(p, &t, cls, "head.cls", "head.cls", ad).await?
        }
        HeadView::LanguageModel { norm, lm } => {
            p.expect("head.norm", x.carry, c.stream)?;
            let h = p.reveal(&x, Nonlinear::Norm(norm.as_ref()), "head.norm", ad).await?;
            linear(p, &h, lm, "head.lm", "head.lm", ad).await?
        }
    };
    p.expect("output", y.carry, Carry::None)?;
    Ok(y)
}

async fn compute_session(
    mut p: ComputeParty,
    m: &PartyModel,
    cfg: &ModelConfig,
    plan: &[TripleShape],
    mask: &RingTensor,
) -> Result<(
    (Vec<crate::protocol::OpRecord>, Vec<crate::protocol::Message>),
    Vec<RevealRecord>,
)> {
    let ring = p.ring();
    let idx = p.index();
    let total: usize = plan.iter().map(|&s| TripleShare::residues(s)).sum();
    let r = p.io.recv(PartyId::P2, OpTag::Triples, total).await?;
    let mut at = 0;
    for (id, &shape) in plan.iter().enumerate() {
        let len = TripleShare::residues(shape);
        let t = TripleShare::from_residues(id as u64, shape, idx, &r[at..at + len], ring)?;
        p.supply_mut().push(t);
        at += len;
    }
    let (n, v) = (cfg.seq_len, cfg.vocab);
    let x = p.io.recv(PartyId::P2, OpTag::Input, n * v).await?;
    let input = Value::new(
        SharedTensor::new(RingTensor::new(vec![n, v], x, ring)?, idx)?,
        Carry::None,
    );

    let y = forward_shares(&mut p, m, cfg, input, mask).await?;

    let op =
        p.io.begin("output", LayerKind::Io, ProtocolKind::Reconstruct, y.share.share.len());
    p.io.send(PartyId::P2, OpTag::Output, &op, 1, y.share.share.data())
        .await?;
    let reveals = p.take_reveals();
    Ok((p.io.into_log(), reveals))
}

impl Engine {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    pub fn seeds(&self) -> Seeds {
        self.seeds
    }

    /// P0's secret permutations.
    pub fn perms(&self) -> Option<&PermSet> {
        self.perms.as_ref()
    }

    /// The parameter set P1 holds in the clear (Θ′ in Centaur mode).
    pub fn cloud_params(&self) -> Option<&ModelParams> {
        self.cloud_params.as_ref()
    }

    /// π as delivered to P2.
    pub fn client_pi(&self) -> Option<&PermSpec> {
        self.client_pi.as_ref()
    }

    pub fn setup_transcript(&self) -> &Transcript {
        &self.setup
    }

    /// One secure forward pass. P2 shares the one-hot input, deals triples,
    /// and reconstructs the logits; P0 and P1 run the block program.
    pub fn secure_infer(&mut self, tokens: &[usize], mask: &AttentionMask) -> Result<Inference> {
        let cfg = self.config.clone();
        let ring = self.options.ring;
        let padded = pad_tokens(&cfg, tokens)?;
        let (n, v) = (cfg.seq_len, cfg.vocab);
        if mask.values.shape() != [n, n] {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} for sequence length {n}",
                mask.values.shape()
            )));
        }
        let mask_r = encode(&mask.values, ring)?;
        let plan = triple_plan(&cfg, self.mode);
        let session = self.session;
        self.session += 1;
        let seeds = self.seeds;
        let (rows, cols) = output_shape(&cfg);

        let [l0, l1, l2] = mesh(self.options.transport)?;
        let p0 = ComputeParty::new(
            Io::new(PartyId::P0, l0, ring, true),
            TripleSupply::default(),
            stream_rng(seeds.shares, Stream::Developer, session),
            self.options.check_ledger,
            false,
        );
        let p1 = ComputeParty::new(
            Io::new(PartyId::P1, l1, ring, false),
            TripleSupply::default(),
            stream_rng(seeds.shares, Stream::Reshare, session),
            self.options.check_ledger,
            self.options.record_reveals,
        );
        let client = async {
            let mut io = Io::new(PartyId::P2, l2, ring, true);
            let mut trng = stream_rng(seeds.triples, Stream::Triples, session);
            let mut bufs = [Vec::new(), Vec::new()];
            for (id, &shape) in plan.iter().enumerate() {
                let [t0, t1] = BeaverTriple::generate(id as u64, shape, ring, &mut trng).split();
                t0.to_residues(&mut bufs[0]);
                t1.to_residues(&mut bufs[1]);
            }
            io.set_phase(Phase::Offline);
            let per_party: usize = bufs[0].len();
            let op = io.begin_with_id(0, "triples", LayerKind::Dealer, ProtocolKind::Provision, per_party);
            io.send(PartyId::P0, OpTag::Triples, &op, 1, &bufs[0]).await?;
            io.send(PartyId::P1, OpTag::Triples, &op, 1, &bufs[1]).await?;

            io.set_phase(Phase::Online);
            let mut onehot = vec![0.0; n * v];
            for (i, &t) in padded.iter().enumerate() {
                onehot[i * v + t] = 1.0;
            }
            let x = encode(&RealTensor::new(vec![n, v], onehot)?, ring)?;
            let (s0, s1) = share(&x, &mut stream_rng(seeds.shares, Stream::Input, session));
            let op = io.begin_with_id(0, "input", LayerKind::Io, ProtocolKind::Share, n * v);
            io.send(PartyId::P0, OpTag::Input, &op, 1, s0.share.data()).await?;
            io.send(PartyId::P1, OpTag::Input, &op, 1, s1.share.data()).await?;

            let y0 = io.recv(PartyId::P0, OpTag::Output, rows * cols).await?;
            let y1 = io.recv(PartyId::P1, OpTag::Output, rows * cols).await?;
            let y0 = SharedTensor::new(RingTensor::new(vec![rows, cols], y0, ring)?, 0)?;
            let y1 = SharedTensor::new(RingTensor::new(vec![rows, cols], y1, ring)?, 1)?;
            let y = decode(&reconstruct(&y0, &y1)?);
            Ok((io.into_log(), y))
        };
        let (dev, cloud) = (&self.developer, &self.cloud);
        let ((log0, _), (log1, reveals), (log2, y)) = run3(
            self.options.scheduler,
            compute_session(p0, dev, &cfg, &plan, &mask_r),
            compute_session(p1, cloud, &cfg, &plan, &mask_r),
            client,
        )?;
        // Both heads end in an input-permuted projection, so the logits
        // arrive unpermuted and the client has nothing to undo.
        let transcript = Transcript::merge(ring.residue_bytes(), [log0, log1, log2]);
        debug_assert_eq!(transcript.audit(), Ok(()));
        Ok(Inference {
            logits: y,
            transcript,
            reveals,
        })
    }
}

/// Initializes the all-shares baseline and runs one pass. Returns the
/// inference and the setup transcript.
pub fn run_baseline_all_shares(
    theta: &ModelParams,
    tokens: &[usize],
    mask: &AttentionMask,
    seeds: Seeds,
    options: EngineOptions,
) -> Result<(Inference, Transcript)> {
    let mut e = initialize_baseline(theta, seeds, options)?;
    let inf = e.secure_infer(tokens, mask)?;
    Ok((inf, e.setup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;

    fn toy() -> (ModelParams, Vec<usize>, AttentionMask) {
        let cfg = ModelConfig::toy_encoder();
        let theta = ModelParams::random(&cfg, 5).unwrap();
        let tokens = vec![3, 14, 15, 9, 26];
        let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());
        (theta, tokens, mask)
    }

    #[test]
    fn centaur_matches_oracle() {
        let (theta, tokens, mask) = toy();
        let mut e = initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap();
        let out = e.secure_infer(&tokens, &mask).unwrap();
        let want = forward(&theta, &tokens, &mask).unwrap();
        let err = out.logits.max_abs_diff(&want).unwrap();
        assert!(err <= 1e-2, "max error {err}");
        assert_eq!(out.transcript.audit(), Ok(()));
    }

    #[test]
    fn baseline_matches_oracle() {
        let (theta, tokens, mask) = toy();
        let (out, setup) =
            run_baseline_all_shares(&theta, &tokens, &mask, Seeds::default(), EngineOptions::default()).unwrap();
        let want = forward(&theta, &tokens, &mask).unwrap();
        assert!(out.logits.max_abs_diff(&want).unwrap() <= 1e-2);
        assert_eq!(out.transcript.audit(), Ok(()));
        assert!(setup.total_bytes() > 0);
    }

    #[test]
    fn decoder_matches_oracle() {
        let cfg = ModelConfig::toy_decoder();
        let theta = ModelParams::random(&cfg, 8).unwrap();
        let tokens = vec![1, 2, 3];
        let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());
        let mut e = initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap();
        let out = e.secure_infer(&tokens, &mask).unwrap();
        let want = forward(&theta, &tokens, &mask).unwrap();
        assert!(out.logits.max_abs_diff(&want).unwrap() <= 1e-2);
    }

    #[test]
    fn schedulers_and_transports_agree() {
        let (theta, tokens, mask) = toy();
        let run = |scheduler, transport| {
            let opts = EngineOptions {
                scheduler,
                transport,
                ..EngineOptions::default()
            };
            let mut e = initialize(&theta, Seeds::default(), opts).unwrap();
            let out = e.secure_infer(&tokens, &mask).unwrap();
            (out.logits, out.transcript, e.setup_transcript().clone())
        };
        let a = run(Scheduler::Lockstep, TransportKind::InProcess);
        let b = run(Scheduler::Threaded, TransportKind::InProcess);
        let c = run(Scheduler::Threaded, TransportKind::LocalSocket);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn socket_transport_needs_threads() {
        let (theta, _, _) = toy();
        let opts = EngineOptions {
            transport: TransportKind::LocalSocket,
            ..EngineOptions::default()
        };
        assert!(matches!(
            initialize(&theta, Seeds::default(), opts),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn triple_plan_is_consumed_exactly() {
        let (theta, tokens, mask) = toy();
        for mode in [Mode::Centaur, Mode::Baseline] {
            let mut e = match mode {
                Mode::Centaur => initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap(),
                Mode::Baseline => initialize_baseline(&theta, Seeds::default(), EngineOptions::default()).unwrap(),
            };
            let out = e.secure_infer(&tokens, &mask).unwrap();
            let products = out
                .transcript
                .ops
                .iter()
                .filter(|o| matches!(o.protocol, ProtocolKind::MatMul | ProtocolKind::Permute))
                .count();
            assert_eq!(products, triple_plan(&theta.config, mode).len());
        }
    }

    #[test]
    fn identity_hook_ships_theta_unchanged() {
        let (theta, _, _) = toy();
        let opts = EngineOptions {
            force_identity_perms: true,
            ..EngineOptions::default()
        };
        let e = initialize(&theta, Seeds::default(), opts).unwrap();
        let cloud = e.cloud_params().unwrap();
        let ring = RingConfig::default();
        for ((_, a), (_, b)) in cloud.named_tensors().iter().zip(theta.named_tensors()) {
            assert_eq!(**a, decode(&encode(b, ring).unwrap()));
        }
    }
}
