//! The same inference under the lockstep scheduler, one thread per party,
//! and loopback TCP sockets; all three produce identical bits.

use centaur::model::{AttentionMask, ModelConfig, ModelParams};
use centaur::protocol::{initialize, EngineOptions, Scheduler, Seeds, TransportKind};

fn main() -> centaur::Result<()> {
    let cfg = ModelConfig::toy_decoder();
    let theta = ModelParams::random(&cfg, 8)?;
    let tokens = [10, 20, 30];
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());

    let mut runs = Vec::new();
    for (scheduler, transport) in [
        (Scheduler::Lockstep, TransportKind::InProcess),
        (Scheduler::Threaded, TransportKind::InProcess),
        (Scheduler::Threaded, TransportKind::LocalSocket),
    ] {
        let options = EngineOptions {
            scheduler,
            transport,
            ..EngineOptions::default()
        };
        let out = initialize(&theta, Seeds::default(), options)?.secure_infer(&tokens, &mask)?;
        println!(
            "{scheduler:?} over {transport:?}: {} messages, {} bytes",
            out.transcript.messages.len(),
            out.transcript.total_bytes()
        );
        runs.push(out);
    }
    let same = runs
        .windows(2)
        .all(|w| w[0].logits == w[1].logits && w[0].transcript == w[1].transcript);
    println!("bit-identical logits and transcripts: {same}");
    Ok(())
}
