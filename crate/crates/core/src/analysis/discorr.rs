//! Sample distance correlation (Székely, double-centered distance matrices).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::{PermSpec, Permutable};
use crate::ring::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscorrEstimate {
    /// In `[0, 1]`.
    pub value: f64,
    pub samples: usize,
    /// Feature widths of the two sample matrices.
    pub dims: (usize, usize),
}

fn centered_distances(x: &RealTensor) -> Vec<f64> {
    let n = x.rows();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            a[i * n + j] = d;
            a[j * n + i] = d;
        }
    }
    let row_mean: Vec<f64> = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // Symmetric, so column means equal row means.
            a[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
    a
}

fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Rows are samples. Needs at least 4 samples on both sides.
pub fn distance_correlation(a: &RealTensor, b: &RealTensor) -> Result<DiscorrEstimate> {
    let (n, p) = a.dims()?;
    let (m, q) = b.dims()?;
    if n != m {
        return Err(Error::ShapeMismatch(format!("{n} samples against {m}")));
    }
    if n < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 samples, got {n}")));
    }
    let ca = centered_distances(a);
    let cb = centered_distances(b);
    let vab = mean_product(&ca, &cb).max(0.0);
    let va = mean_product(&ca, &ca);
    let vb = mean_product(&cb, &cb);
    let tiny = f64::EPSILON * f64::EPSILON;
    if va <= tiny || vb <= tiny {
        return Err(Error::DegenerateVariance("a sample matrix has constant rows".into()));
    }
    let value = (vab / (va * vb).sqrt()).sqrt().min(1.0);
    Ok(DiscorrEstimate {
        value,
        samples: n,
        dims: (p, q),
    })
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> RealTensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    RealTensor::new(vec![rows, cols], data).expect("finite")
}

/// Integer weights uniform on `-4..=4`.
fn integer_weights(rows: usize, cols: usize, rng: &mut impl Rng) -> RealTensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-4i32..=4) as f64).collect();
    RealTensor::new(vec![rows, cols], data).expect("finite")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eq6Report {
    pub d: usize,
    pub samples: usize,
    pub trials: usize,
    /// `Discorr(o, o·W_A·π)` per trial.
    pub permuted: Vec<f64>,
    /// `Discorr(o, o·W_B)` per trial, `W_B` of width 1.
    pub compressed: Vec<f64>,
    pub mean_permuted: f64,
    pub mean_compressed: f64,
    /// Bootstrap percentile interval for `mean_permuted - mean_compressed`.
    pub diff_ci95: (f64, f64),
    /// One-sided: the upper 95% bound of the difference is at most 0.
    pub holds: bool,
}

/// Monte-Carlo comparison of a square linear layer plus permutation against a
/// rank-one compression, each over fresh integer weights and Gaussian `o`.
pub fn eq6_experiment(d: usize, samples: usize, trials: usize, seed: u64) -> Result<Eq6Report> {
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least 2 trials".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut permuted = Vec::with_capacity(trials);
    let mut compressed = Vec::with_capacity(trials);
    for _ in 0..trials {
        let o = gaussian(samples, d, &mut rng);
        let wa = integer_weights(d, d, &mut rng);
        let pi = PermSpec::random(d, &mut rng);
        let wb = integer_weights(d, 1, &mut rng);
        let oa = o.matmul(&wa)?.apply_cols(&pi)?;
        let ob = o.matmul(&wb)?;
        permuted.push(distance_correlation(&o, &oa)?.value);
        compressed.push(match distance_correlation(&o, &ob) {
            Ok(e) => e.value,
            // An all-zero W_B column compresses everything to a constant.
            Err(Error::DegenerateVariance(_)) => 0.0,
            Err(e) => return Err(e),
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let diffs: Vec<f64> = permuted.iter().zip(&compressed).map(|(a, b)| a - b).collect();
    let mut boot: Vec<f64> = (0..2000)
        .map(|_| {
            let s: f64 = (0..trials).map(|_| diffs[rng.random_range(0..trials)]).sum();
            s / trials as f64
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let lo = boot[(0.025 * boot.len() as f64) as usize];
    let hi = boot[(0.975 * boot.len() as f64) as usize];
    let upper_one_sided = boot[(0.95 * boot.len() as f64) as usize];
    Ok(Eq6Report {
        d,
        samples,
        trials,
        mean_permuted: mean(&permuted),
        mean_compressed: mean(&compressed),
        permuted,
        compressed,
        diff_ci95: (lo, hi),
        holds: upper_one_sided <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn identical_samples_are_fully_dependent() {
        let a = gaussian(50, 3, &mut rng(1));
        let e = distance_correlation(&a, &a).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9);
        assert_eq!(e.samples, 50);
    }

    #[test]
    fn independent_samples_are_near_zero() {
        let mut r = rng(2);
        let a = gaussian(500, 2, &mut r);
        let b = gaussian(500, 2, &mut r);
        assert!(distance_correlation(&a, &b).unwrap().value < 0.15);
    }

    #[test]
    fn symmetric_and_rotation_invariant() {
        let mut r = rng(3);
        let a = gaussian(60, 4, &mut r);
        let b = a.map(|v| v * v).unwrap().add(&gaussian(60, 4, &mut r)).unwrap();
        let ab = distance_correlation(&a, &b).unwrap().value;
        let ba = distance_correlation(&b, &a).unwrap().value;
        assert!((ab - ba).abs() < 1e-12);
        // A rotation in the (0, 1) plane plus a coordinate permutation.
        let (c, s) = (0.6, 0.8);
        let mut rot = RealTensor::identity(4).into_data();
        rot[0] = c;
        rot[1] = -s;
        rot[4] = s;
        rot[5] = c;
        let rot = RealTensor::new(vec![4, 4], rot).unwrap();
        let a2 = a
            .matmul(&rot)
            .unwrap()
            .apply_cols(&PermSpec::random(4, &mut r))
            .unwrap();
        assert!((distance_correlation(&a2, &b).unwrap().value - ab).abs() < 1e-6);
    }

    #[test]
    fn joint_row_shuffle_does_not_matter() {
        let mut r = rng(4);
        let a = gaussian(40, 3, &mut r);
        let b = a.map(f64::sin).unwrap();
        let p = PermSpec::random(40, &mut r);
        let v1 = distance_correlation(&a, &b).unwrap().value;
        let v2 = distance_correlation(&a.apply_rows(&p).unwrap(), &b.apply_rows(&p).unwrap())
            .unwrap()
            .value;
        assert!((v1 - v2).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = gaussian(3, 2, &mut rng(5));
        assert!(matches!(distance_correlation(&a, &a), Err(Error::InvalidArgument(_))));
        let c = RealTensor::new(vec![5, 1], vec![2.0; 5]).unwrap();
        let b = gaussian(5, 1, &mut rng(6));
        assert!(matches!(
            distance_correlation(&b, &c),
            Err(Error::DegenerateVariance(_))
        ));
        assert!(matches!(
            distance_correlation(&b, &gaussian(6, 1, &mut rng(7))),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn eq6_report_is_well_formed() {
        let r = eq6_experiment(8, 32, 10, 1).unwrap();
        assert_eq!(r.permuted.len(), 10);
        assert!(r.permuted.iter().chain(&r.compressed).all(|v| (0.0..=1.0).contains(v)));
        assert!(r.diff_ci95.0 <= r.diff_ci95.1);
    }
}
