//! Empirical-security toolkit: distance correlation, per-feature
//! distribution divergence, partial shuffling with a nearest-neighbor
//! inversion attacker, and a genetic permutation search.

pub mod discorr;
pub mod genetic;
pub mod js;
pub mod shuffle;

pub use discorr::{distance_correlation, eq6_experiment, DiscorrEstimate, Eq6Report};
pub use genetic::{
    brute_force, genetic_perm_search, ConstantScorer, FrequencyScorer, GaConfig, HammingScorer, Scorer, SearchState,
};
pub use js::{js_divergence, js_divergence_profile, JsOptions, JsProfile};
pub use shuffle::{nearest_neighbor_inversion, shuffle_fraction, ShuffleOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::model::{forward_traced, AttentionMask, ModelParams};
use crate::ring::RealTensor;

/// Stacks the final block's norm outputs (the activations the cloud sees
/// permuted) over `inputs` random full-length token sequences.
pub fn norm_activations(params: &ModelParams, inputs: usize, seed: u64) -> Result<RealTensor> {
    if inputs == 0 {
        return Err(Error::InvalidArgument("need at least one input".into()));
    }
    let cfg = &params.config;
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, cfg.seq_len);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(inputs * cfg.seq_len);
    for _ in 0..inputs {
        let tokens: Vec<usize> = (0..cfg.seq_len).map(|_| rng.random_range(0..cfg.vocab)).collect();
        let (_, trace) = forward_traced(params, &tokens, &mask)?;
        let last = trace.block_outputs.last().expect("at least one block");
        rows.extend((0..last.rows()).map(|i| last.row(i).to_vec()));
    }
    RealTensor::from_rows(&rows)
}
