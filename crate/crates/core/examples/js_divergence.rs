//! How alike the features of a norm output look: low divergence means a
//! permuted column gives little away about which feature it is.

use centaur::analysis::{js_divergence_profile, norm_activations, JsOptions};
use centaur::model::{ModelConfig, ModelParams};
use centaur::ring::RealTensor;

fn main() -> centaur::Result<()> {
    let mut total = 0.0;
    for seed in 0..5 {
        let params = ModelParams::random(&ModelConfig::toy_encoder(), seed)?;
        let acts = norm_activations(&params, 128, seed)?;
        let p = js_divergence_profile(&acts, &JsOptions::default())?;
        println!(
            "model {seed}: mean JS {:.4}, max {:.4} over {} pairs",
            p.mean, p.max, p.pairs
        );
        total += p.mean;
    }
    println!("average over models: {:.4}", total / 5.0);
    let apart = RealTensor::from_rows(
        &(0..200)
            .map(|i| vec![i as f64 / 200.0, 10.0 + i as f64 / 200.0])
            .collect::<Vec<_>>(),
    )?;
    println!(
        "disjoint columns: {:.4}",
        js_divergence_profile(&apart, &JsOptions::default())?.mean
    );
    Ok(())
}
