//! Ordered duplex channels between party pairs.
//!
//! Every message travels as a frame: a 4-byte big-endian payload length, a
//! 1-byte op tag, then the payload (residues as little-endian `ℓ/8`-byte
//! words). The in-process backend moves the encoded bytes over unbounded
//! queues; the socket backend writes them to loopback TCP streams.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};

use futures::channel::mpsc::{unbounded, UnboundedReceiver, UnboundedSender};
use futures::StreamExt;
use serde::{Deserialize, Serialize};

use super::PartyId;
use crate::error::{Error, Result};
use crate::ring::RingConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    InProcess,
    LocalSocket,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum OpTag {
    Setup = 1,
    Triples = 2,
    Input = 3,
    Beaver = 4,
    Reveal = 5,
    Output = 6,
}

impl OpTag {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::Setup,
            2 => Self::Triples,
            3 => Self::Input,
            4 => Self::Beaver,
            5 => Self::Reveal,
            6 => Self::Output,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub tag: OpTag,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn from_residues(tag: OpTag, residues: &[u64], cfg: RingConfig) -> Self {
        let w = cfg.residue_bytes();
        let mut payload = Vec::with_capacity(residues.len() * w);
        for r in residues {
            payload.extend_from_slice(&r.to_le_bytes()[..w]);
        }
        Self { tag, payload }
    }

    pub fn residues(&self, cfg: RingConfig) -> Result<Vec<u64>> {
        let w = cfg.residue_bytes();
        if !self.payload.len().is_multiple_of(w) {
            return Err(Error::Format(format!(
                "payload of {} bytes is not a whole number of {w}-byte residues",
                self.payload.len()
            )));
        }
        Ok(self
            .payload
            .chunks_exact(w)
            .map(|c| {
                let mut b = [0u8; 8];
                b[..w].copy_from_slice(c);
                u64::from_le_bytes(b)
            })
            .collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one complete encoded frame.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Format("frame shorter than its header".into()));
        }
        let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
        let tag = OpTag::from_byte(bytes[4]).ok_or_else(|| Error::Format(format!("unknown op tag {}", bytes[4])))?;
        if bytes.len() != 5 + len {
            return Err(Error::Format(format!(
                "frame declares {len} payload bytes, carries {}",
                bytes.len() - 5
            )));
        }
        Ok(Self {
            tag,
            payload: bytes[5..].to_vec(),
        })
    }
}

enum Inner {
    Mem {
        tx: UnboundedSender<Vec<u8>>,
        rx: UnboundedReceiver<Vec<u8>>,
    },
    Tcp(TcpStream),
}

/// One end of a duplex channel to `peer`.
pub struct Link {
    me: PartyId,
    peer: PartyId,
    inner: Inner,
}

impl Link {
    pub fn peer(&self) -> PartyId {
        self.peer
    }

    fn fail(&self, from: PartyId, to: PartyId, reason: impl Into<String>) -> Error {
        Error::TransportFailure {
            from,
            to,
            reason: reason.into(),
        }
    }

    pub async fn send(&mut self, frame: &Frame) -> Result<()> {
        let bytes = frame.encode();
        let (me, peer) = (self.me, self.peer);
        match &mut self.inner {
            Inner::Mem { tx, .. } => tx.unbounded_send(bytes).map_err(|_| Error::TransportFailure {
                from: me,
                to: peer,
                reason: "peer hung up".into(),
            }),
            Inner::Tcp(s) => s.write_all(&bytes).map_err(|e| Error::TransportFailure {
                from: me,
                to: peer,
                reason: e.to_string(),
            }),
        }
    }

    /// Receives the next frame and checks it carries `expect`.
    pub async fn recv(&mut self, expect: OpTag) -> Result<Frame> {
        let (me, peer) = (self.me, self.peer);
        let frame = match &mut self.inner {
            Inner::Mem { rx, .. } => {
                let bytes = rx.next().await.ok_or_else(|| self.fail(peer, me, "channel closed"))?;
                Frame::decode(&bytes).map_err(|e| self.fail(peer, me, e.to_string()))?
            }
            Inner::Tcp(s) => {
                let mut head = [0u8; 5];
                let res = s.read_exact(&mut head).and_then(|_| {
                    let len = u32::from_be_bytes([head[0], head[1], head[2], head[3]]) as usize;
                    let mut buf = head.to_vec();
                    buf.resize(5 + len, 0);
                    s.read_exact(&mut buf[5..]).map(|_| buf)
                });
                let bytes = res.map_err(|e| self.fail(peer, me, e.to_string()))?;
                Frame::decode(&bytes).map_err(|e| self.fail(peer, me, e.to_string()))?
            }
        };
        if frame.tag != expect {
            return Err(self.fail(peer, me, format!("expected {expect:?} frame, got {:?}", frame.tag)));
        }
        Ok(frame)
    }
}

/// A party's links to the other two.
pub struct Links {
    links: Vec<Link>,
}

impl Links {
    pub fn get(&mut self, peer: PartyId) -> &mut Link {
        self.links
            .iter_mut()
            .find(|l| l.peer == peer)
            .expect("fully connected mesh")
    }
}

fn mem_pair(a: PartyId, b: PartyId) -> (Link, Link) {
    let (tx_ab, rx_ab) = unbounded();
    let (tx_ba, rx_ba) = unbounded();
    (
        Link {
            me: a,
            peer: b,
            inner: Inner::Mem { tx: tx_ab, rx: rx_ba },
        },
        Link {
            me: b,
            peer: a,
            inner: Inner::Mem { tx: tx_ba, rx: rx_ab },
        },
    )
}

fn tcp_pair(a: PartyId, b: PartyId) -> Result<(Link, Link)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let client = TcpStream::connect(listener.local_addr()?)?;
    let (server, _) = listener.accept()?;
    client.set_nodelay(true)?;
    server.set_nodelay(true)?;
    Ok((
        Link {
            me: a,
            peer: b,
            inner: Inner::Tcp(client),
        },
        Link {
            me: b,
            peer: a,
            inner: Inner::Tcp(server),
        },
    ))
}

/// Fully connects the three parties; returned in `PartyId` order.
pub fn mesh(kind: TransportKind) -> Result<[Links; 3]> {
    let mut out: [Vec<Link>; 3] = Default::default();
    for (a, b) in [
        (PartyId::P0, PartyId::P1),
        (PartyId::P0, PartyId::P2),
        (PartyId::P1, PartyId::P2),
    ] {
        let (la, lb) = match kind {
            TransportKind::InProcess => mem_pair(a, b),
            TransportKind::LocalSocket => tcp_pair(a, b)?,
        };
        out[a.index()].push(la);
        out[b.index()].push(lb);
    }
    Ok(out.map(|links| Links { links }))
}
