//! Encoding reals into the ring, multiplying, and truncating back.

use centaur::ring::{decode, encode, RealTensor, RingConfig};

fn main() -> centaur::Result<()> {
    let cfg = RingConfig::default();
    let x = RealTensor::from_rows(&[vec![1.5, -2.25], vec![0.1, 3.0]])?;
    let w = RealTensor::from_rows(&[vec![0.5, 1.0], vec![-1.0, 0.25]])?;
    let (ex, ew) = (encode(&x, cfg)?, encode(&w, cfg)?);
    println!("ℓ={} f={} scale={}", cfg.ring_bits, cfg.frac_bits, cfg.scale());
    println!("encoded x residues: {:?}", ex.data());

    // A product carries scale 2^(2f); one truncation brings it back.
    let product = ex.matmul(&ew)?.truncate(cfg.frac_bits);
    let exact = x.matmul(&w)?;
    println!("ring product  {:?}", decode(&product).data());
    println!("real product  {:?}", exact.data());
    println!("max error     {:.2e}", decode(&product).max_abs_diff(&exact)?);

    let narrow = RingConfig::new(32, 12)?;
    println!(
        "32-bit ring holds |x| < {}; encoding 1e6 gives {:?}",
        narrow.magnitude_limit(),
        narrow.encode_scalar(1e6).map_err(|e| e.to_string())
    );
    Ok(())
}
