//! Shuffling a growing fraction of embedding features and watching a
//! nearest-neighbor attacker lose track of the tokens.

use centaur::analysis::{nearest_neighbor_inversion, shuffle_fraction};
use centaur::model::{ModelConfig, ModelParams};
use centaur::ring::RealTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> centaur::Result<()> {
    let cfg = ModelConfig {
        d_model: 64,
        heads: 4,
        vocab: 500,
        ..ModelConfig::toy_encoder()
    };
    let table = ModelParams::random(&cfg, 0)?.token_embedding;
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let truth: Vec<usize> = (0..300).map(|_| rng.random_range(0..cfg.vocab)).collect();
    let observed = RealTensor::from_rows(&truth.iter().map(|&t| table.row(t).to_vec()).collect::<Vec<_>>())?;
    println!("fraction  shuffled  accuracy");
    for step in 0..=10 {
        let f = step as f64 / 10.0;
        let s = shuffle_fraction(&observed, f, &mut rng)?;
        let acc = nearest_neighbor_inversion(&s.data, &table, &truth)?;
        println!("{f:>8.1}  {:>8}  {acc:>8.3}", s.displaced);
    }
    Ok(())
}
