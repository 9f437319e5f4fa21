//! Centaur against an all-shares baseline that pays a Beaver product for
//! every linear layer, under LAN and WAN cost models.

use centaur::model::{AttentionMask, ModelConfig, ModelParams};
use centaur::protocol::{compare, initialize, initialize_baseline, EngineOptions, NetProfile, Seeds};

fn main() -> centaur::Result<()> {
    let cfg = ModelConfig::toy_encoder();
    let theta = ModelParams::random(&cfg, 1)?;
    let tokens = [3, 1, 4, 1, 5, 9, 2, 6];
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());

    let centaur = initialize(&theta, Seeds::default(), EngineOptions::default())?.secure_infer(&tokens, &mask)?;
    let baseline =
        initialize_baseline(&theta, Seeds::default(), EngineOptions::default())?.secure_infer(&tokens, &mask)?;
    println!(
        "logit difference between modes: {:.2e}",
        centaur.logits.max_abs_diff(&baseline.logits)?
    );

    for profile in [NetProfile::lan(), NetProfile::wan()] {
        let c = compare(&centaur.transcript, &baseline.transcript, &profile);
        println!("{}:", profile.name);
        println!(
            "  online bytes    centaur {:>8}  baseline {:>8}  ratio {:.2}",
            c.centaur.online.bytes, c.baseline.online.bytes, c.bytes_ratio
        );
        println!(
            "  linear bytes    centaur {:>8}  baseline {:>8}  ratio {:.2}",
            c.centaur.online_linear.bytes, c.baseline.online_linear.bytes, c.linear_bytes_ratio
        );
        println!(
            "  modeled seconds centaur {:>8.4}  baseline {:>8.4}  ratio {:.2}",
            c.centaur.online.seconds, c.baseline.online.seconds, c.seconds_ratio
        );
    }
    Ok(())
}
