//! Genetic search for a hidden feature permutation: exact with an oracle
//! score at tiny widths, stuck near chance with histogram heuristics.

use centaur::analysis::{brute_force, genetic_perm_search, norm_activations, FrequencyScorer, GaConfig, HammingScorer};
use centaur::model::ModelParams;
use centaur::perm::{PermSpec, Permutable};
use centaur::run::crack_config;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> centaur::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let truth = PermSpec::random(6, &mut rng);
    let oracle = HammingScorer(truth.clone());
    let (best, _) = brute_force(6, &oracle)?;
    let s = genetic_perm_search(6, &oracle, &GaConfig::default(), Some(&truth), &mut rng)?;
    println!(
        "d=6 oracle: GA {:?}, exhaustive {:?}, truth {:?}",
        s.best.indices(),
        best.indices(),
        truth.indices()
    );

    let d = 64;
    let params = ModelParams::random(&crack_config(d), 0)?;
    let truth = PermSpec::random(d, &mut rng);
    let reference = norm_activations(&params, 32, 1)?;
    let observed = norm_activations(&params, 32, 2)?.apply_cols(&truth)?;
    let scorer = FrequencyScorer::new(&observed, &reference, 64)?;
    let ga = GaConfig {
        generations: 500,
        ..GaConfig::default()
    };
    let s = genetic_perm_search(d, &scorer, &ga, Some(&truth), &mut rng)?;
    println!(
        "d={d} histogram heuristic: score {:.4} -> {:.4} over {} generations; truth scores {:.4}",
        s.trace[0],
        s.best_score,
        s.generations,
        centaur::analysis::Scorer::score(&scorer, &truth)
    );
    println!(
        "fraction of features placed correctly: {:.3}",
        s.fraction_correct.unwrap_or_default()
    );
    Ok(())
}
