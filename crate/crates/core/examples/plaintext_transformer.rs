//! The plaintext reference model: encoder classification and decoder
//! next-token logits, plus the permuted model giving the same answer.

use centaur::model::{forward, pad_tokens, AttentionMask, ModelConfig, ModelParams};
use centaur::perm::{permute_params, PermSet};

fn main() -> centaur::Result<()> {
    let tokens = [4, 8, 15, 16, 23];
    for cfg in [ModelConfig::toy_encoder(), ModelConfig::toy_decoder()] {
        let params = ModelParams::random(&cfg, 42)?;
        let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());
        let logits = forward(&params, &tokens, &mask)?;
        println!(
            "{:?}: {} parameters, padded input {:?}, logits {:?}",
            cfg.arch,
            params.parameter_count(),
            pad_tokens(&cfg, &tokens)?,
            logits.shape()
        );

        let perms = PermSet::random(&cfg, 9);
        let theta_prime = permute_params(&params, &perms)?;
        let permuted_logits = forward(&theta_prime.0, &tokens, &mask)?;
        println!(
            "  Θ′ = permuted parameters give the same logits to {:.2e}",
            permuted_logits.max_abs_diff(&logits)?
        );
        let first = logits.row(0).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>();
        println!("  first logits row: [{}]", first[..first.len().min(6)].join(", "));
    }
    Ok(())
}
