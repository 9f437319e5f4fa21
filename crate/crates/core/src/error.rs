use thiserror::Error;

use crate::protocol::{Carry, PartyId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} exceeds the representable fixed-point range (|x| < 2^{limit_log2})")]
    MagnitudeOverflow { value: f64, limit_log2: u32 },

    #[error("non-finite entry {value} at flat index {index}")]
    NonFinite { value: f64, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("permutation dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid ring configuration: {0}")]
    InvalidRing(String),

    #[error("share index mismatch: got shares {0} and {1}, need one of each of 0 and 1")]
    ShareIndexMismatch(u8, u8),

    #[error("triple shape mismatch: triple is {triple:?}, operands need {needed:?}")]
    TripleShapeMismatch {
        triple: (usize, usize, usize),
        needed: (usize, usize, usize),
    },

    #[error("no Beaver triple left for shape {0:?}")]
    TripleExhausted((usize, usize, usize)),

    #[error("Beaver triple {0} was already consumed")]
    TripleReused(u64),

    #[error("transport failure between {from} and {to}: {reason}")]
    TransportFailure { from: PartyId, to: PartyId, reason: String },

    #[error("permutation ledger violation at {site}: expected {expected:?}, found {found:?}")]
    PermLedger {
        site: &'static str,
        expected: Carry,
        found: Carry,
    },

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weight container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether this error came out of the protocol itself rather than configuration or IO.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            Error::TripleShapeMismatch { .. }
                | Error::TripleExhausted(_)
                | Error::TripleReused(_)
                | Error::TransportFailure { .. }
                | Error::PermLedger { .. }
                | Error::ShareIndexMismatch(..)
        )
    }
}
