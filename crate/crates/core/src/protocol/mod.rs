//! Three-party orchestration: the model developer P0, the cloud P1 and the
//! client/dealer P2, exchanging framed messages over a [`transport`] while
//! every send lands in a [`transcript`].

pub mod cost;
pub mod engine;
pub mod party;
pub mod transcript;
pub mod transport;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cost::{compare, simulate_cost, Comparison, CostReport, NetProfile};
pub use engine::{
    initialize, initialize_baseline, run_baseline_all_shares, triple_plan, Engine, EngineOptions, Inference, Mode,
    Scheduler, Seeds,
};
pub use party::{run_pair, ComputeParty, Nonlinear, RevealRecord, Side, Value};
pub use transcript::{LayerKind, Message, OpRecord, Phase, ProtocolKind, Transcript};
pub use transport::{Frame, OpTag, TransportKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartyId {
    P0,
    P1,
    P2,
}

impl PartyId {
    pub const ALL: [PartyId; 3] = [PartyId::P0, PartyId::P1, PartyId::P2];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index())
    }
}

/// Which secret permutation a shared intermediate currently carries.
///
/// `Pi1` covers both `O·π₁` (columns) and `π₁ᵀ·V` (rows): the only place
/// they meet is the product that cancels them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carry {
    None,
    Pi,
    Pi1,
    Pi2,
}
