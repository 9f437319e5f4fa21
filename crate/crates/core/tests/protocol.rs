//! Three-party protocol behavior checked against the plaintext oracle and
//! the permuted parameters.

use centaur::model::{forward, forward_traced, AttentionMask, ModelConfig, ModelParams};
use centaur::perm::{permute_params, Permutable};
use centaur::protocol::{
    initialize, initialize_baseline, EngineOptions, LayerKind, PartyId, Phase, Seeds, TransportKind,
};
use centaur::ring::{decode, encode, RealTensor, RingConfig};
use centaur::{Error, PermSpec};

fn toy(seed: u64) -> (ModelParams, Vec<usize>, AttentionMask) {
    let cfg = ModelConfig::toy_encoder();
    let theta = ModelParams::random(&cfg, seed).unwrap();
    let tokens = vec![2, 7, 1, 8, 28, 18];
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());
    (theta, tokens, mask)
}

fn close(a: &RealTensor, b: &RealTensor, tol: f64) -> bool {
    a.max_abs_diff(b).unwrap() <= tol
}

#[test]
fn cloud_sees_only_permuted_activations() {
    let (theta, tokens, mask) = toy(11);
    let opts = EngineOptions {
        record_reveals: true,
        ..EngineOptions::default()
    };
    let mut engine = initialize(&theta, Seeds::default(), opts).unwrap();
    let perms = engine.perms().unwrap().clone();
    let out = engine.secure_infer(&tokens, &mask).unwrap();
    let (_, trace) = forward_traced(&theta, &tokens, &mask).unwrap();
    let seen = |label: &str| &out.reveals.iter().find(|r| r.label == label).unwrap().value;

    let cases: [(&str, &RealTensor, &PermSpec); 3] = [
        ("embed.norm", trace.embedding_pre_norm.as_ref().unwrap(), &perms.pi),
        ("blocks.0.head1.softmax", &trace.attention_scores[0][1], &perms.pi1),
        ("blocks.1.act", &trace.ffn_pre_activation[1], &perms.pi2),
    ];
    for (label, plain, perm) in cases {
        let permuted = plain.apply_cols(perm).unwrap();
        assert!(
            close(seen(label), &permuted, 1e-2),
            "{label} is not the permuted activation"
        );
        assert!(!close(seen(label), plain, 1e-2), "{label} was revealed unpermuted");
    }
    let norms = out
        .reveals
        .iter()
        .filter(|r| r.label.ends_with(".norm1") || r.label.ends_with(".norm2"));
    assert_eq!(norms.count(), 2 * theta.config.blocks);
}

#[test]
fn cloud_holds_no_original_tensor() {
    let (theta, _, _) = toy(12);
    let engine = initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap();
    let cloud = engine.cloud_params().unwrap();
    let expected = permute_params(&theta, engine.perms().unwrap()).unwrap();
    let ring = RingConfig::default();
    for (((name, held), (_, want)), (_, original)) in cloud
        .named_tensors()
        .iter()
        .zip(expected.0.named_tensors())
        .zip(theta.named_tensors())
    {
        assert_eq!(**held, decode(&encode(want, ring).unwrap()), "{name} is not Θ′");
        assert!(!close(held, original, 1e-9), "{name} reached the cloud unpermuted");
    }
}

#[test]
fn setup_ships_one_residue_per_parameter() {
    let (theta, _, _) = toy(13);
    for ring in [RingConfig::default(), RingConfig::new(32, 12).unwrap()] {
        let opts = EngineOptions {
            ring,
            ..EngineOptions::default()
        };
        let engine = initialize(&theta, Seeds::default(), opts).unwrap();
        let setup = engine.setup_transcript();
        let theta_msg = setup.messages.iter().find(|m| m.label == "theta").unwrap();
        assert_eq!((theta_msg.from, theta_msg.to), (PartyId::P0, PartyId::P1));
        assert_eq!(theta_msg.bytes, (theta.parameter_count() * ring.residue_bytes()) as u64);
        assert!(setup.messages.iter().all(|m| m.phase == Phase::Setup));
    }
}

#[test]
fn dealer_is_silent_inside_the_model() {
    let (theta, tokens, mask) = toy(14);
    let out = initialize(&theta, Seeds::default(), EngineOptions::default())
        .unwrap()
        .secure_infer(&tokens, &mask)
        .unwrap();
    let dealer: Vec<_> = out
        .transcript
        .messages
        .iter()
        .filter(|m| m.from == PartyId::P2 || m.to == PartyId::P2)
        .collect();
    assert!(dealer
        .iter()
        .all(|m| m.phase == Phase::Offline || m.kind == LayerKind::Io));
    let labels: Vec<&str> = dealer.iter().map(|m| m.label.as_str()).collect();
    assert_eq!(labels, ["triples", "triples", "input", "input", "output", "output"]);
}

#[test]
fn repeated_sessions_use_fresh_randomness() {
    let (theta, tokens, mask) = toy(15);
    let mut engine = initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap();
    let a = engine.secure_infer(&tokens, &mask).unwrap();
    let b = engine.secure_infer(&tokens, &mask).unwrap();
    let want = forward(&theta, &tokens, &mask).unwrap();
    assert!(close(&a.logits, &want, 1e-2) && close(&b.logits, &want, 1e-2));
    assert_eq!(a.transcript.total_bytes(), b.transcript.total_bytes());
    let mut fresh = initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap();
    assert_eq!(fresh.secure_infer(&tokens, &mask).unwrap().logits, a.logits);
}

// Local truncation fails with probability about |x|·2^f / 2^ℓ per entry, so
// a 32-bit ring needs a short fraction.
#[test]
fn narrow_ring_still_tracks_the_oracle() {
    let (theta, tokens, mask) = toy(16);
    let opts = EngineOptions {
        ring: RingConfig::new(32, 8).unwrap(),
        ..EngineOptions::default()
    };
    let out = initialize(&theta, Seeds::default(), opts)
        .unwrap()
        .secure_infer(&tokens, &mask)
        .unwrap();
    let want = forward(&theta, &tokens, &mask).unwrap();
    assert!(
        close(&out.logits, &want, 5e-2),
        "{}",
        out.logits.max_abs_diff(&want).unwrap()
    );
}

#[test]
fn rms_swiglu_decoder_matches_oracle() {
    let cfg = ModelConfig {
        norm: centaur::model::NormKind::RmsNorm,
        activation: centaur::model::Activation::SiluGate,
        ..ModelConfig::toy_decoder()
    };
    let theta = ModelParams::random(&cfg, 17).unwrap();
    let tokens = vec![4, 9, 16, 25];
    let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());
    let want = forward(&theta, &tokens, &mask).unwrap();
    for baseline in [false, true] {
        let mut e = if baseline {
            initialize_baseline(&theta, Seeds::default(), EngineOptions::default()).unwrap()
        } else {
            initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap()
        };
        let out = e.secure_infer(&tokens, &mask).unwrap();
        assert!(close(&out.logits, &want, 1e-2), "baseline={baseline}");
    }
}

#[test]
fn bad_inputs_are_rejected_before_any_traffic() {
    let (theta, _, mask) = toy(18);
    let mut e = initialize(&theta, Seeds::default(), EngineOptions::default()).unwrap();
    assert!(matches!(
        e.secure_infer(&[3, 999], &mask),
        Err(Error::TokenOutOfRange { id: 999, .. })
    ));
    assert!(e.secure_infer(&[], &mask).is_err());
    let wrong = AttentionMask::padding(4, 2);
    assert!(matches!(e.secure_infer(&[1, 2], &wrong), Err(Error::ShapeMismatch(_))));
    let opts = EngineOptions {
        transport: TransportKind::LocalSocket,
        ..EngineOptions::default()
    };
    assert!(matches!(
        initialize(&theta, Seeds::default(), opts),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn permutation_seed_changes_what_the_cloud_holds_not_the_answer() {
    let (theta, tokens, mask) = toy(19);
    let run = |perms| {
        let seeds = Seeds {
            perms,
            ..Seeds::default()
        };
        let mut e = initialize(&theta, seeds, EngineOptions::default()).unwrap();
        let logits = e.secure_infer(&tokens, &mask).unwrap().logits;
        (e.cloud_params().unwrap().token_embedding.clone(), logits)
    };
    let (w1, y1) = run(1);
    let (w2, y2) = run(2);
    assert_ne!(w1, w2);
    assert!(close(&y1, &y2, 2e-2));
}
