//! Permuting weights so a linear layer commutes with a hidden feature
//! permutation, and the key space that hides it.

use centaur::model::ops::{gelu, layernorm, softmax_rows};
use centaur::perm::{key_space, PermSpec, Permutable};
use centaur::ring::{encode, RealTensor, RingConfig};
use centaur::ModelConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> centaur::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let pi = PermSpec::random(6, &mut rng);
    println!("π = {:?}, π⁻¹ = {:?}", pi.indices(), pi.inverse().indices());

    let x = RealTensor::from_rows(&[
        vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.5],
        vec![1.0, 0.25, -0.75, 2.5, -2.0, 0.1],
    ])?;
    let w = RealTensor::from_rows(
        &(0..4)
            .map(|i| (0..6).map(|j| (i * 6 + j) as f64 / 10.0 - 1.0).collect())
            .collect::<Vec<_>>(),
    )?;

    // Xπ (Wπ)ᵀ = X Wᵀ, exactly, in the ring.
    let cfg = RingConfig::default();
    let (ex, ew) = (encode(&x, cfg)?, encode(&w, cfg)?);
    let plain = ex.matmul(&ew.transpose()?)?;
    let permuted = ex.apply_cols(&pi)?.matmul(&ew.apply_cols(&pi)?.transpose()?)?;
    println!("linear layer unchanged by π: {}", plain == permuted);

    // Row-wise nonlinearities commute with column permutations.
    let gamma = RealTensor::new(vec![6], vec![1.0, 0.9, 1.1, 1.0, 0.8, 1.2])?;
    let beta = RealTensor::new(vec![6], vec![0.0, 0.1, -0.1, 0.2, 0.0, 0.3])?;
    let ln = layernorm(&x, &gamma, &beta, 1e-5)?.apply_cols(&pi)?;
    let ln_p = layernorm(
        &x.apply_cols(&pi)?,
        &gamma.apply_cols(&pi)?,
        &beta.apply_cols(&pi)?,
        1e-5,
    )?;
    println!(
        "softmax(Xπ) = softmax(X)π: {}",
        softmax_rows(&x.apply_cols(&pi)?)? == softmax_rows(&x)?.apply_cols(&pi)?
    );
    println!(
        "gelu(Xπ) = gelu(X)π: {}",
        gelu(&x.apply_cols(&pi)?)? == gelu(&x)?.apply_cols(&pi)?
    );
    println!("layernorm(Xπ; γπ, βπ) = layernorm(X)π: {}", ln == ln_p);

    for (name, cfg) in [
        ("toy", ModelConfig::toy_encoder()),
        (
            "d=1280, k=5120",
            ModelConfig {
                d_model: 1280,
                d_ff: 5120,
                ..ModelConfig::toy_encoder()
            },
        ),
    ] {
        let ks = key_space(&cfg);
        println!(
            "{name}: embeddings 2^{:.0}, FFN weights 2^{:.0}, FFN bias 2^{:.0}",
            ks.feature_log2, ks.ffn_weights_log2, ks.ffn_bias_log2
        );
    }
    Ok(())
}
