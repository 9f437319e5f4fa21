//! Property tests over the numeric, sharing and permutation layers.

use centaur::model::{forward, AttentionMask, ModelConfig, ModelParams};
use centaur::perm::{permute_params, PermSet, PermSpec, Permutable};
use centaur::protocol::{Frame, OpTag};
use centaur::ring::{decode, encode, RealTensor, RingConfig, RingTensor};
use centaur::sharing::{reconstruct, share, truncate_share};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn ring() -> impl Strategy<Value = RingConfig> {
    prop_oneof![Just(RingConfig::default()), Just(RingConfig::new(32, 12).unwrap())]
}

fn perm(max: usize) -> impl Strategy<Value = PermSpec> {
    (1..=max)
        .prop_flat_map(|m| Just((0..m).collect::<Vec<usize>>()).prop_shuffle())
        .prop_map(|v| PermSpec::new(v).unwrap())
}

fn matrix(rows: usize, cols: usize, bound: f64) -> impl Strategy<Value = RealTensor> {
    proptest::collection::vec(-bound..bound, rows * cols)
        .prop_map(move |v| RealTensor::new(vec![rows, cols], v).unwrap())
}

proptest! {
    #[test]
    fn encoding_round_trips_within_half_an_ulp(cfg in ring(), xs in proptest::collection::vec(-1000.0f64..1000.0, 1..64)) {
        let n = xs.len();
        let x = RealTensor::new(vec![n], xs).unwrap();
        let back = decode(&encode(&x, cfg).unwrap());
        prop_assert!(back.max_abs_diff(&x).unwrap() <= 0.5 / cfg.scale() + 1e-12);
    }

    #[test]
    fn residues_survive_decode_encode(cfg in ring(), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let limit = 1i64 << (cfg.ring_bits - cfg.frac_bits - 2);
        let vals: Vec<i64> = (0..32).map(|_| rng.random_range(-limit..limit) << cfg.frac_bits >> 4).collect();
        let r = RingTensor::from_signed(vec![32], &vals, cfg).unwrap();
        prop_assert_eq!(encode(&decode(&r), cfg).unwrap(), r);
    }

    #[test]
    fn shares_reconstruct_any_residues(cfg in ring(), seed in any::<u64>(), len in 1usize..40) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..len).map(|_| rng.random::<u64>() & cfg.mask()).collect();
        let x = RingTensor::new(vec![len], data, cfg).unwrap();
        let (a, b) = share(&x, &mut rng);
        prop_assert_eq!(reconstruct(&a, &b).unwrap(), x);
    }

    #[test]
    fn local_truncation_is_off_by_at_most_one(seed in any::<u64>(), xs in proptest::collection::vec(-1e3f64..1e3, 1..32)) {
        let cfg = RingConfig::default();
        let n = xs.len();
        let x = encode(&RealTensor::new(vec![n], xs).unwrap(), cfg).unwrap();
        let wide = x.scalar_mul(1 << cfg.frac_bits);
        let (a, b) = share(&wide, &mut ChaCha20Rng::seed_from_u64(seed));
        let t = reconstruct(&truncate_share(&a, cfg.frac_bits), &truncate_share(&b, cfg.frac_bits)).unwrap();
        for (got, want) in t.to_signed().iter().zip(x.to_signed()) {
            prop_assert!((got - want).abs() <= 1);
        }
    }

    #[test]
    fn fixed_point_products_stay_within_the_inner_dimension_bound(
        a in matrix(3, 5, 8.0),
        b in matrix(5, 4, 8.0),
    ) {
        let cfg = RingConfig::default();
        let got = decode(&encode(&a, cfg).unwrap().matmul(&encode(&b, cfg).unwrap()).unwrap().truncate(cfg.frac_bits));
        let bound = 5.0 * 8.0 * 2.0 / cfg.scale() + 1.0 / cfg.scale();
        prop_assert!(got.max_abs_diff(&a.matmul(&b).unwrap()).unwrap() <= bound);
    }

    #[test]
    fn permutation_group_laws(p in perm(12), seed in any::<u64>()) {
        let m = p.len();
        let q = PermSpec::random(m, &mut ChaCha20Rng::seed_from_u64(seed));
        prop_assert!(p.compose(&p.inverse()).unwrap().is_identity());
        prop_assert!(p.inverse().compose(&p).unwrap().is_identity());
        prop_assert_eq!(p.inverse().inverse(), p.clone());
        let x = RealTensor::new(vec![2, m], (0..2 * m).map(|i| i as f64).collect()).unwrap();
        prop_assert_eq!(x.apply_cols(&p).unwrap().apply_cols(&q).unwrap(), x.apply_cols(&p.compose(&q).unwrap()).unwrap());
        prop_assert_eq!(x.apply_cols(&p).unwrap().unapply_cols(&p).unwrap(), x.clone());
        prop_assert_eq!(x.matmul(&p.to_matrix()).unwrap(), x.apply_cols(&p).unwrap());
        let xt = x.transpose().unwrap();
        prop_assert_eq!(p.to_matrix().transpose().unwrap().matmul(&xt).unwrap(), xt.apply_rows(&p).unwrap());
    }

    #[test]
    fn permuted_linear_layers_are_exact_in_the_ring(p in perm(24), x in matrix(4, 24, 10.0), w in matrix(6, 24, 1.0)) {
        let cfg = RingConfig::default();
        let d = p.len();
        let (x, w) = (x.slice_cols(0, d).unwrap(), w.slice_cols(0, d).unwrap());
        let (ex, ew) = (encode(&x, cfg).unwrap(), encode(&w, cfg).unwrap());
        let plain = ex.matmul(&ew.transpose().unwrap()).unwrap();
        let permuted = ex.apply_cols(&p).unwrap().matmul(&ew.apply_cols(&p).unwrap().transpose().unwrap()).unwrap();
        prop_assert_eq!(plain, permuted);
    }

    #[test]
    fn frames_round_trip(cfg in ring(), data in proptest::collection::vec(any::<u64>(), 0..50)) {
        let data: Vec<u64> = data.into_iter().map(|r| r & cfg.mask()).collect();
        let f = Frame::from_residues(OpTag::Beaver, &data, cfg);
        let bytes = f.encode();
        prop_assert_eq!(bytes.len(), 5 + data.len() * cfg.residue_bytes());
        prop_assert_eq!(Frame::decode(&bytes).unwrap().residues(cfg).unwrap(), data);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn permuted_models_compute_the_same_function(model_seed in 0u64..1000, perm_seed in any::<u64>(), decoder in any::<bool>()) {
        let cfg = if decoder { ModelConfig::toy_decoder() } else { ModelConfig::toy_encoder() };
        let theta = ModelParams::random(&cfg, model_seed).unwrap();
        let theta_prime = permute_params(&theta, &PermSet::random(&cfg, perm_seed)).unwrap();
        let tokens = [1, 3, 5, 7];
        let mask = AttentionMask::for_arch(cfg.arch, cfg.seq_len, tokens.len());
        let a = forward(&theta, &tokens, &mask).unwrap();
        let b = forward(&theta_prime.0, &tokens, &mask).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-9);
    }
}

#[test]
fn thousand_random_tensors_encode_and_decode() {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for cfg in [RingConfig::default(), RingConfig::new(32, 12).unwrap()] {
        let limit = cfg.magnitude_limit();
        for _ in 0..500 {
            let n = rng.random_range(1..20);
            let x = RealTensor::new(
                vec![n],
                (0..n).map(|_| rng.random_range(-limit..limit) * 0.999).collect(),
            )
            .unwrap();
            let back = decode(&encode(&x, cfg).unwrap());
            assert!(back.max_abs_diff(&x).unwrap() <= 0.5 / cfg.scale());
        }
    }
}
