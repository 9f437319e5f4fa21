//! Three-party privacy-preserving transformer inference.
//!
//! A model developer (P0) permutes its parameters and hands them to a cloud
//! (P1); a client (P2) secret-shares its input. Linear layers run on the
//! permuted public weights against additive shares at zero communication,
//! and nonlinear layers are revealed to the cloud only under a secret
//! permutation. A plaintext transformer serves as the oracle, transcripts
//! count every byte, and a cost model turns them into modeled LAN/WAN time.

pub mod analysis;
pub mod error;
pub mod model;
pub mod perm;
pub mod protocol;
pub mod ring;
pub mod run;
pub mod sharing;

pub use error::{Error, Result};
pub use model::{forward, AttentionMask, ModelConfig, ModelParams};
pub use perm::{permute_params, PermSet, PermSpec, Permutable};
pub use protocol::{initialize, initialize_baseline, Engine, EngineOptions, Mode, NetProfile, Seeds};
pub use ring::{decode, encode, RealTensor, RingConfig, RingTensor};
pub use sharing::{reconstruct, share, SharedTensor};
