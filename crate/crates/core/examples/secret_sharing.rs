//! Additive sharing, local share arithmetic, and one Beaver product between
//! two parties over in-process links.

use centaur::protocol::{run_pair, Carry, ComputeParty, LayerKind, Value};
use centaur::ring::{decode, encode, RealTensor, RingConfig};
use centaur::sharing::{pi_add, reconstruct, share};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> centaur::Result<()> {
    let cfg = RingConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let x = encode(&RealTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])?, cfg)?;
    let y = encode(&RealTensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.0]])?, cfg)?;
    let (x0, x1) = share(&x, &mut rng);
    let (y0, y1) = share(&y, &mut rng);
    println!("share 0 of x looks random: {:?}", &x0.share.data()[..2]);
    println!("x = {:?}", decode(&reconstruct(&x0, &x1)?).data());

    let sum = reconstruct(&pi_add(&x0, &y0)?, &pi_add(&x1, &y1)?)?;
    println!("x + y (no messages) = {:?}", decode(&sum).data());

    let (z0, z1, transcript) = run_pair(cfg, &[(2, 2, 2)], 11, async |p: &mut ComputeParty| {
        let (a, b) = if p.index() == 0 { (&x0, &y0) } else { (&x1, &y1) };
        let (a, b) = (Value::new(a.clone(), Carry::None), Value::new(b.clone(), Carry::None));
        p.matmul(&a, &b, Carry::None, "xy", LayerKind::Matmul).await
    })?;
    println!(
        "x · y (Beaver) = {:?}",
        decode(&reconstruct(&z0.share, &z1.share)?).data()
    );
    for m in &transcript.messages {
        println!("  {} -> {}: {} bytes, round {}", m.from, m.to, m.bytes, m.round);
    }
    Ok(())
}
