//! End-to-end three-party inference: the developer permutes and publishes
//! the model, the client shares its tokens, and the result matches the
//! plaintext forward pass.

use centaur::model::{forward, AttentionMask, ModelConfig, ModelParams};
use centaur::protocol::{initialize, simulate_cost, EngineOptions, NetProfile, Phase, Seeds};

fn main() -> centaur::Result<()> {
    let cfg = ModelConfig::toy_encoder();
    let theta = ModelParams::random(&cfg, 5)?;
    let tokens = [12, 7, 33, 2, 41, 9];
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());

    let mut engine = initialize(&theta, Seeds::default(), EngineOptions::default())?;
    println!(
        "setup: {} bytes to distribute Θ′ and the permutation shares",
        engine.setup_transcript().total_bytes()
    );

    let out = engine.secure_infer(&tokens, &mask)?;
    let plain = forward(&theta, &tokens, &mask)?;
    println!("secure logits {:?}", out.logits.data());
    println!("plain logits  {:?}", plain.data());
    println!("max difference {:.2e}", out.logits.max_abs_diff(&plain)?);
    println!("transcript audit: {:?}", out.transcript.audit());

    for profile in [NetProfile::lan(), NetProfile::wan()] {
        let r = simulate_cost(&out.transcript, &profile);
        println!(
            "{}: offline {} B, online {} B in {} rounds, {:.3} s modeled",
            profile.name,
            r.phase(Phase::Offline).bytes,
            r.online.bytes,
            r.online.rounds,
            r.online.seconds
        );
        for k in r.by_kind.iter().filter(|k| k.phase == Phase::Online) {
            println!(
                "    {:<12} {:>8} B {:>8.4} s",
                format!("{:?}", k.kind),
                k.totals.bytes,
                k.totals.seconds
            );
        }
    }
    Ok(())
}
