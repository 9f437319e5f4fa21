//! Network cost model over a transcript: each op costs its round count times
//! the one-way latency plus its bytes over the bandwidth.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::transcript::{LayerKind, Phase, Transcript};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    pub name: String,
    /// Bits per second.
    pub bandwidth_bps: f64,
    /// One-way latency in seconds.
    pub latency_s: f64,
}

impl NetProfile {
    pub fn new(name: impl Into<String>, bandwidth_bps: f64, latency_s: f64) -> Result<Self> {
        if !(bandwidth_bps > 0.0 && bandwidth_bps.is_finite()) || !(latency_s >= 0.0 && latency_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "network profile needs positive bandwidth and non-negative latency, got {bandwidth_bps} b/s, {latency_s} s"
            )));
        }
        Ok(Self {
            name: name.into(),
            bandwidth_bps,
            latency_s,
        })
    }

    /// 3 Gbps, 0.8 ms round trip.
    pub fn lan() -> Self {
        Self::new("lan", 3e9, 0.4e-3).expect("valid preset")
    }

    /// 100 Mbps, 80 ms round trip.
    pub fn wan() -> Self {
        Self::new("wan", 100e6, 40e-3).expect("valid preset")
    }

    pub fn seconds(&self, bytes: u64, rounds: u64) -> f64 {
        rounds as f64 * self.latency_s + bytes as f64 * 8.0 / self.bandwidth_bps
    }
}

/// `lan`, `wan`, or `custom:<Mbps>:<one-way ms>`.
impl FromStr for NetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lan" => return Ok(Self::lan()),
            "wan" => return Ok(Self::wan()),
            _ => {}
        }
        let bad = || Error::InvalidArgument(format!("unknown network profile {s:?}; use lan, wan or custom:MBPS:MS"));
        let rest = s.strip_prefix("custom:").ok_or_else(bad)?;
        let (bw, lat) = rest.split_once(':').ok_or_else(bad)?;
        let bw: f64 = bw.parse().map_err(|_| bad())?;
        let lat: f64 = lat.parse().map_err(|_| bad())?;
        Self::new(s, bw * 1e6, lat * 1e-3)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub bytes: u64,
    pub rounds: u64,
    pub seconds: f64,
}

impl Totals {
    fn add(&mut self, bytes: u64, rounds: u64, seconds: f64) {
        self.bytes += bytes;
        self.rounds += rounds;
        self.seconds += seconds;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindCost {
    pub phase: Phase,
    pub kind: LayerKind,
    #[serde(flatten)]
    pub totals: Totals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub profile: NetProfile,
    pub setup: Totals,
    pub offline: Totals,
    pub online: Totals,
    /// Online linear layers (`linear`, `matmul`, `ppp`).
    pub online_linear: Totals,
    pub by_kind: Vec<KindCost>,
}

impl CostReport {
    pub fn phase(&self, phase: Phase) -> &Totals {
        match phase {
            Phase::Setup => &self.setup,
            Phase::Offline => &self.offline,
            Phase::Online => &self.online,
        }
    }

    pub fn kind(&self, phase: Phase, kind: LayerKind) -> Totals {
        self.by_kind
            .iter()
            .find(|k| k.phase == phase && k.kind == kind)
            .map(|k| k.totals)
            .unwrap_or_default()
    }
}

pub fn simulate_cost(transcript: &Transcript, profile: &NetProfile) -> CostReport {
    let mut report = CostReport {
        profile: profile.clone(),
        setup: Totals::default(),
        offline: Totals::default(),
        online: Totals::default(),
        online_linear: Totals::default(),
        by_kind: Vec::new(),
    };
    for (op, t) in transcript.tallies() {
        let secs = profile.seconds(t.bytes, t.rounds);
        let phase = match op.phase {
            Phase::Setup => &mut report.setup,
            Phase::Offline => &mut report.offline,
            Phase::Online => &mut report.online,
        };
        phase.add(t.bytes, t.rounds, secs);
        if op.phase == Phase::Online && op.kind.is_linear() {
            report.online_linear.add(t.bytes, t.rounds, secs);
        }
        match report
            .by_kind
            .iter_mut()
            .find(|k| k.phase == op.phase && k.kind == op.kind)
        {
            Some(k) => k.totals.add(t.bytes, t.rounds, secs),
            None => report.by_kind.push(KindCost {
                phase: op.phase,
                kind: op.kind,
                totals: Totals {
                    bytes: t.bytes,
                    rounds: t.rounds,
                    seconds: secs,
                },
            }),
        }
    }
    report.by_kind.sort_by_key(|k| (k.phase, k.kind));
    report
}

/// Baseline over Centaur, for the online phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub centaur: CostReport,
    pub baseline: CostReport,
    pub bytes_ratio: f64,
    pub seconds_ratio: f64,
    pub linear_bytes_ratio: f64,
}

pub fn compare(centaur: &Transcript, baseline: &Transcript, profile: &NetProfile) -> Comparison {
    let c = simulate_cost(centaur, profile);
    let b = simulate_cost(baseline, profile);
    let ratio = |x: f64, y: f64| if y == 0.0 { f64::INFINITY } else { x / y };
    Comparison {
        bytes_ratio: ratio(b.online.bytes as f64, c.online.bytes as f64),
        seconds_ratio: ratio(b.online.seconds, c.online.seconds),
        linear_bytes_ratio: ratio(b.online_linear.bytes as f64, c.online_linear.bytes as f64),
        centaur: c,
        baseline: b,
    }
}
