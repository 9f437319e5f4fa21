//! Exact record of every protocol operation and every message it sent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PartyId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// One-time shipment of parameters and shared permutations.
    Setup,
    /// Dealer randomness, independent of the input.
    Offline,
    Online,
}

/// Aggregation key for cost breakdowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Embedding,
    Linear,
    Matmul,
    Softmax,
    Gelu,
    Layernorm,
    Ppp,
    Adaptation,
    /// Client input sharing and output reconstruction.
    Io,
    /// Triple provisioning.
    Dealer,
    Setup,
}

impl LayerKind {
    /// Kinds counted as linear layers in the breakdown.
    pub fn is_linear(self) -> bool {
        matches!(self, LayerKind::Linear | LayerKind::Matmul | LayerKind::Ppp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    ScalMul,
    Add,
    MatMul,
    Permute,
    Reveal,
    Share,
    Provision,
    Reconstruct,
    Setup,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub phase: Phase,
    pub op_id: u64,
    pub label: String,
    pub kind: LayerKind,
    pub protocol: ProtocolKind,
    /// Residues each message of the op should carry: `pq + qr` for Beaver
    /// products, the tensor size for reveals, 0 for local ops.
    pub elements: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub phase: Phase,
    pub op_id: u64,
    pub label: String,
    pub kind: LayerKind,
    pub from: PartyId,
    pub to: PartyId,
    pub bytes: u64,
    /// 1-based round within the op.
    pub round: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub bytes: u64,
    pub messages: u64,
    pub rounds: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    /// Bytes per residue on the wire.
    pub word_bytes: usize,
    pub ops: Vec<OpRecord>,
    pub messages: Vec<Message>,
}

impl Transcript {
    /// Merges per-party logs into one canonical, scheduler-independent order.
    pub fn merge(word_bytes: usize, parts: impl IntoIterator<Item = (Vec<OpRecord>, Vec<Message>)>) -> Self {
        let mut ops = Vec::new();
        let mut messages = Vec::new();
        for (o, m) in parts {
            ops.extend(o);
            messages.extend(m);
        }
        ops.sort_by_key(|o| (o.phase, o.op_id));
        messages.sort_by_key(|m| (m.phase, m.op_id, m.round, m.from, m.to));
        Self {
            word_bytes,
            ops,
            messages,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    pub fn bytes_in(&self, phase: Phase) -> u64 {
        self.messages.iter().filter(|m| m.phase == phase).map(|m| m.bytes).sum()
    }

    /// Online bytes spent in linear layers.
    pub fn linear_bytes(&self) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.phase == Phase::Online && m.kind.is_linear())
            .map(|m| m.bytes)
            .sum()
    }

    fn messages_of<'a>(&'a self, op: &'a OpRecord) -> impl Iterator<Item = &'a Message> + 'a {
        self.messages
            .iter()
            .filter(move |m| m.phase == op.phase && m.op_id == op.op_id)
    }

    /// Bytes, messages and rounds of one op.
    pub fn tally(&self, op: &OpRecord) -> Tally {
        let mut t = Tally::default();
        for m in self.messages_of(op) {
            t.bytes += m.bytes;
            t.messages += 1;
            t.rounds = t.rounds.max(m.round as u64);
        }
        t
    }

    /// Per op, in order.
    pub fn tallies(&self) -> Vec<(&OpRecord, Tally)> {
        let mut by_op: BTreeMap<(Phase, u64), Tally> = BTreeMap::new();
        for m in &self.messages {
            let t = by_op.entry((m.phase, m.op_id)).or_default();
            t.bytes += m.bytes;
            t.messages += 1;
            t.rounds = t.rounds.max(m.round as u64);
        }
        self.ops
            .iter()
            .map(|o| (o, by_op.get(&(o.phase, o.op_id)).copied().unwrap_or_default()))
            .collect()
    }

    /// Totals keyed by (phase, layer kind).
    pub fn by_kind(&self) -> BTreeMap<(Phase, LayerKind), Tally> {
        let mut out: BTreeMap<(Phase, LayerKind), Tally> = BTreeMap::new();
        for (op, t) in self.tallies() {
            let e = out.entry((op.phase, op.kind)).or_default();
            e.bytes += t.bytes;
            e.messages += t.messages;
            e.rounds += t.rounds;
        }
        out
    }

    /// Checks the per-protocol communication contract on every op:
    ///
    /// * plaintext-share products and additions send nothing;
    /// * Beaver products and permutations send `elements` residues each way in one round;
    /// * reveals send `elements` residues P0 → P1, then back, in two rounds;
    /// * the dealer speaks only outside the block loop.
    ///
    /// Returns a description of the first violation.
    pub fn audit(&self) -> Result<(), String> {
        let w = self.word_bytes as u64;
        for op in &self.ops {
            let msgs: Vec<&Message> = self.messages_of(op).collect();
            let want_bytes = op.elements * w;
            let fail = |why: &str| Err(format!("op {} ({}): {why}", op.op_id, op.label));
            match op.protocol {
                ProtocolKind::ScalMul | ProtocolKind::Add => {
                    if !msgs.is_empty() {
                        return fail("local op touched the transport");
                    }
                }
                ProtocolKind::MatMul | ProtocolKind::Permute => {
                    let ok = msgs.len() == 2
                        && msgs.iter().all(|m| m.round == 1 && m.bytes == want_bytes)
                        && msgs.iter().any(|m| m.from == PartyId::P0 && m.to == PartyId::P1)
                        && msgs.iter().any(|m| m.from == PartyId::P1 && m.to == PartyId::P0);
                    if !ok {
                        return fail("Beaver opening is not one exchange of (pq+qr) residues");
                    }
                }
                ProtocolKind::Reveal => {
                    let ok = msgs.len() == 2
                        && msgs.iter().all(|m| m.bytes == want_bytes)
                        && msgs
                            .iter()
                            .any(|m| m.round == 1 && m.from == PartyId::P0 && m.to == PartyId::P1)
                        && msgs
                            .iter()
                            .any(|m| m.round == 2 && m.from == PartyId::P1 && m.to == PartyId::P0);
                    if !ok {
                        return fail("reveal is not two messages over two rounds");
                    }
                }
                ProtocolKind::Share | ProtocolKind::Provision | ProtocolKind::Reconstruct | ProtocolKind::Setup => {}
            }
        }
        for m in &self.messages {
            let dealer = m.from == PartyId::P2 || m.to == PartyId::P2;
            if dealer && m.phase == Phase::Online && m.kind != LayerKind::Io {
                return Err(format!("P2 exchanged {} inside the block loop", m.label));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(phase: Phase, op_id: u64, from: PartyId, to: PartyId, bytes: u64, round: u32) -> Message {
        Message {
            phase,
            op_id,
            label: format!("op{op_id}"),
            kind: LayerKind::Matmul,
            from,
            to,
            bytes,
            round,
        }
    }

    fn op(op_id: u64, protocol: ProtocolKind, elements: u64) -> OpRecord {
        OpRecord {
            phase: Phase::Online,
            op_id,
            label: format!("op{op_id}"),
            kind: LayerKind::Matmul,
            protocol,
            elements,
        }
    }

    #[test]
    fn merge_is_order_independent() {
        let a = vec![msg(Phase::Online, 2, PartyId::P1, PartyId::P0, 8, 1)];
        let b = vec![
            msg(Phase::Online, 2, PartyId::P0, PartyId::P1, 8, 1),
            msg(Phase::Offline, 0, PartyId::P2, PartyId::P0, 80, 1),
        ];
        let t1 = Transcript::merge(8, [(vec![], a.clone()), (vec![], b.clone())]);
        let t2 = Transcript::merge(8, [(vec![], b), (vec![], a)]);
        assert_eq!(t1, t2);
        assert_eq!(t1.messages[0].phase, Phase::Offline);
        assert_eq!(t1.total_bytes(), 96);
        assert_eq!(t1.bytes_in(Phase::Online), 16);
    }

    #[test]
    fn audit_flags_chatty_local_ops() {
        let t = Transcript::merge(
            8,
            [(
                vec![op(1, ProtocolKind::ScalMul, 0)],
                vec![msg(Phase::Online, 1, PartyId::P0, PartyId::P1, 8, 1)],
            )],
        );
        assert!(t.audit().is_err());
    }

    #[test]
    fn audit_accepts_well_formed_ops() {
        let t = Transcript::merge(
            8,
            [(
                vec![
                    op(1, ProtocolKind::MatMul, 3),
                    op(2, ProtocolKind::Reveal, 2),
                    op(3, ProtocolKind::Add, 0),
                ],
                vec![
                    msg(Phase::Online, 1, PartyId::P0, PartyId::P1, 24, 1),
                    msg(Phase::Online, 1, PartyId::P1, PartyId::P0, 24, 1),
                    msg(Phase::Online, 2, PartyId::P0, PartyId::P1, 16, 1),
                    msg(Phase::Online, 2, PartyId::P1, PartyId::P0, 16, 2),
                ],
            )],
        );
        assert_eq!(t.audit(), Ok(()));
        let tallies = t.tallies();
        assert_eq!(
            tallies[1].1,
            Tally {
                bytes: 32,
                messages: 2,
                rounds: 2
            }
        );
        assert_eq!(tallies[2].1, Tally::default());
    }

    #[test]
    fn dealer_must_stay_out_of_the_loop() {
        let t = Transcript::merge(
            8,
            [(vec![], vec![msg(Phase::Online, 5, PartyId::P2, PartyId::P1, 8, 1)])],
        );
        assert!(t.audit().unwrap_err().contains("P2"));
    }
}
