//! Partial column shuffles and a nearest-neighbor embedding matcher used as a
//! (weak) stand-in inversion attacker.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::{PermSpec, Permutable};
use crate::ring::RealTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleOutcome {
    pub data: RealTensor,
    /// Full-width permutation applied to the columns.
    pub perm: PermSpec,
    /// Columns selected for shuffling, ascending.
    pub chosen: Vec<usize>,
    /// Columns that actually moved.
    pub displaced: usize,
    /// Selected columns the random permutation left in place.
    pub fixed_points: usize,
}

const DERANGEMENT_ATTEMPTS: usize = 64;

/// Permutes `⌈fraction·d⌉` randomly chosen columns among themselves, trying
/// a few times for a permutation with no fixed points.
pub fn shuffle_fraction(x: &RealTensor, fraction: f64, rng: &mut impl Rng) -> Result<ShuffleOutcome> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let d = x.cols();
    let k = ((fraction * d as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut chosen = sample(rng, d, k.min(d)).into_vec();
    chosen.sort_unstable();
    let mut inner = PermSpec::random(chosen.len(), rng);
    for _ in 1..DERANGEMENT_ATTEMPTS {
        if inner.fixed_points() == 0 {
            break;
        }
        inner = PermSpec::random(chosen.len(), rng);
    }
    let mut full: Vec<usize> = (0..d).collect();
    for (slot, &src) in inner.indices().iter().enumerate() {
        full[chosen[slot]] = chosen[src];
    }
    let perm = PermSpec::new(full)?;
    let fixed_points = inner.fixed_points();
    Ok(ShuffleOutcome {
        data: x.apply_cols(&perm)?,
        displaced: chosen.len() - fixed_points,
        chosen,
        perm,
        fixed_points,
    })
}

/// Maps each observed row to the token whose embedding row is nearest
/// (Euclidean), and returns the fraction matching `truth`.
pub fn nearest_neighbor_inversion(observed: &RealTensor, table: &RealTensor, truth: &[usize]) -> Result<f64> {
    if observed.cols() != table.cols() || observed.rows() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} observed rows against a {:?} table and {} labels",
            observed.shape(),
            table.shape(),
            truth.len()
        )));
    }
    let hits = (0..observed.rows())
        .filter(|&i| {
            let o = observed.row(i);
            let best = (0..table.rows())
                .map(|t| {
                    let dist: f64 = table.row(t).iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum();
                    (dist, t)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, t)| t);
            best == Some(truth[i])
        })
        .count();
    Ok(hits as f64 / truth.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn x(rows: usize, d: usize) -> RealTensor {
        RealTensor::new(vec![rows, d], (0..rows * d).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let m = x(3, 10);
        let s = shuffle_fraction(&m, 0.0, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.data, m);
        assert!(s.perm.is_identity());
    }

    #[test]
    fn full_fraction_is_a_column_permutation() {
        let m = x(2, 12);
        let s = shuffle_fraction(&m, 1.0, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.chosen.len(), 12);
        assert_eq!(s.data.unapply_cols(&s.perm).unwrap(), m);
    }

    #[test]
    fn twenty_percent_of_one_hundred() {
        let m = x(1, 100);
        let s = shuffle_fraction(&m, 0.2, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(s.chosen.len(), 20);
        let moved = s.perm.indices().iter().enumerate().filter(|(i, &v)| *i != v).count();
        assert_eq!(moved, s.displaced);
        assert_eq!(s.displaced + s.fixed_points, 20);
        assert_eq!(s.displaced, 20);
    }

    #[test]
    fn rejects_out_of_range_fraction() {
        assert!(shuffle_fraction(&x(1, 4), 1.5, &mut ChaCha20Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn nearest_neighbor_recovers_clean_rows() {
        let table = RealTensor::from_rows(&[vec![0.0, 0.0], vec![5.0, 5.0], vec![-5.0, 5.0]]).unwrap();
        let obs = RealTensor::from_rows(&[vec![4.9, 5.1], vec![-5.0, 4.0]]).unwrap();
        assert_eq!(nearest_neighbor_inversion(&obs, &table, &[1, 2]).unwrap(), 1.0);
        assert_eq!(nearest_neighbor_inversion(&obs, &table, &[0, 2]).unwrap(), 0.5);
    }
}
