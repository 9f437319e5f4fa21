//! Jensen–Shannon divergence between per-feature value distributions.
//!
//! Low mean divergence across columns means the features look alike, which
//! is what leaves a column permutation without an obvious signature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsOptions {
    /// Fixed-width histogram bins over the pooled min/max range.
    pub bins: usize,
    /// Sample this many column pairs instead of all of them.
    pub max_pairs: Option<usize>,
    pub seed: u64,
}

impl Default for JsOptions {
    fn default() -> Self {
        Self {
            bins: 64,
            max_pairs: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsProfile {
    /// Mean pairwise divergence, base 2, in `[0, 1]`.
    pub mean: f64,
    pub max: f64,
    pub pairs: usize,
    pub bins: usize,
}

/// JS divergence of two distributions given as (unnormalized) weights.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m).log2();
        }
    }
    js.clamp(0.0, 1.0)
}

/// Histogram each column of `x` (rows are samples) and average the JS
/// divergence over column pairs.
pub fn js_divergence_profile(x: &RealTensor, opts: &JsOptions) -> Result<JsProfile> {
    let (n, d) = x.dims()?;
    if d < 2 || n == 0 || opts.bins == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 columns, 1 row and 1 bin, got {d}, {n}, {}",
            opts.bins
        )));
    }
    let lo = x.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(Error::DegenerateVariance("all activations are equal".into()));
    }
    let width = (hi - lo) / opts.bins as f64;
    let hists: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut h = vec![0.0; opts.bins];
            for i in 0..n {
                let b = (((x.get(i, j) - lo) / width) as usize).min(opts.bins - 1);
                h[b] += 1.0;
            }
            h
        })
        .collect();
    let all = d * (d - 1) / 2;
    let pairs: Vec<(usize, usize)> = match opts.max_pairs {
        Some(k) if k < all => {
            let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
            (0..k)
                .map(|_| {
                    let a = rng.random_range(0..d);
                    let mut b = rng.random_range(0..d - 1);
                    if b >= a {
                        b += 1;
                    }
                    (a, b)
                })
                .collect()
        }
        _ => (0..d).flat_map(|a| ((a + 1)..d).map(move |b| (a, b))).collect(),
    };
    let values: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| js_divergence(&hists[a], &hists[b]))
        .collect();
    Ok(JsProfile {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        max: values.iter().copied().fold(0.0, f64::max),
        pairs: values.len(),
        bins: opts.bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_columns_have_zero_divergence() {
        let col: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let data: Vec<f64> = col.iter().flat_map(|&v| [v, v]).collect();
        let x = RealTensor::new(vec![100, 2], data).unwrap();
        assert_eq!(js_divergence_profile(&x, &JsOptions::default()).unwrap().mean, 0.0);
    }

    #[test]
    fn disjoint_normals_approach_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(10.0, 1.0).unwrap();
        let data: Vec<f64> = (0..2000)
            .flat_map(|_| [a.sample(&mut rng), b.sample(&mut rng)])
            .collect();
        let x = RealTensor::new(vec![2000, 2], data).unwrap();
        let p = js_divergence_profile(&x, &JsOptions::default()).unwrap();
        assert!((p.mean - 1.0).abs() < 0.05, "{}", p.mean);
    }

    #[test]
    fn pair_sampling_and_errors() {
        let x = RealTensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap();
        let p = js_divergence_profile(
            &x,
            &JsOptions {
                max_pairs: Some(2),
                ..JsOptions::default()
            },
        )
        .unwrap();
        assert_eq!(p.pairs, 2);
        let flat = RealTensor::new(vec![3, 2], vec![1.0; 6]).unwrap();
        assert!(matches!(
            js_divergence_profile(&flat, &JsOptions::default()),
            Err(Error::DegenerateVariance(_))
        ));
        let one = RealTensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(js_divergence_profile(&one, &JsOptions::default()).is_err());
    }

    #[test]
    fn divergence_is_symmetric_and_bounded() {
        let p = [1.0, 2.0, 0.0, 5.0];
        let q = [0.0, 1.0, 4.0, 1.0];
        assert!((js_divergence(&p, &q) - js_divergence(&q, &p)).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&js_divergence(&p, &q)));
        assert_eq!(js_divergence(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn toy_norm_outputs_look_alike() {
        use crate::analysis::norm_activations;
        use crate::model::{ModelConfig, ModelParams};
        let mean = (0..5)
            .map(|seed| {
                let params = ModelParams::random(&ModelConfig::toy_encoder(), seed).unwrap();
                let acts = norm_activations(&params, 128, seed).unwrap();
                js_divergence_profile(&acts, &JsOptions::default()).unwrap().mean
            })
            .sum::<f64>()
            / 5.0;
        assert!(mean < 0.2, "{mean}");
    }
}
