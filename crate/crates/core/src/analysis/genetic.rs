//! Heuristic permutation recovery: a genetic search over column permutations
//! driven by a pluggable score, plus exhaustive search for tiny widths.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::PermSpec;
use crate::ring::RealTensor;

/// Higher is better. Evaluated concurrently across the population.
pub trait Scorer: Sync {
    fn score(&self, candidate: &PermSpec) -> f64;
}

/// Noiseless oracle: negative Hamming distance to the true permutation.
pub struct HammingScorer(pub PermSpec);

impl Scorer for HammingScorer {
    fn score(&self, candidate: &PermSpec) -> f64 {
        let wrong = candidate
            .indices()
            .iter()
            .zip(self.0.indices())
            .filter(|(a, b)| a != b)
            .count();
        -(wrong as f64)
    }
}

/// Carries no signal at all.
pub struct ConstantScorer;

impl Scorer for ConstantScorer {
    fn score(&self, _: &PermSpec) -> f64 {
        0.0
    }
}

/// Matches each observed (permuted) column to a reference column by the
/// cosine similarity of their value histograms. A candidate `p` claims that
/// observed column `j` is reference column `p[j]`.
pub struct FrequencyScorer {
    width: usize,
    similarity: Vec<f64>,
}

impl FrequencyScorer {
    pub fn new(observed: &RealTensor, reference: &RealTensor, bins: usize) -> Result<Self> {
        let (_, d) = observed.dims()?;
        let (_, e) = reference.dims()?;
        if d != e || bins == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{d} observed columns against {e} reference columns with {bins} bins"
            )));
        }
        let lo = observed
            .data()
            .iter()
            .chain(reference.data())
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = observed
            .data()
            .iter()
            .chain(reference.data())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let hist = |x: &RealTensor, j: usize| {
            let mut h = vec![0.0; bins];
            for i in 0..x.rows() {
                h[(((x.get(i, j) - lo) / width) as usize).min(bins - 1)] += 1.0;
            }
            let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            h.iter_mut().for_each(|v| *v /= norm.max(f64::MIN_POSITIVE));
            h
        };
        let obs: Vec<Vec<f64>> = (0..d).map(|j| hist(observed, j)).collect();
        let reference: Vec<Vec<f64>> = (0..d).map(|j| hist(reference, j)).collect();
        let similarity = obs
            .iter()
            .flat_map(|o| {
                reference
                    .iter()
                    .map(move |r| o.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect();
        Ok(Self { width: d, similarity })
    }
}

impl Scorer for FrequencyScorer {
    fn score(&self, candidate: &PermSpec) -> f64 {
        let d = self.width;
        candidate
            .indices()
            .iter()
            .enumerate()
            .map(|(j, &k)| self.similarity[j * d + k])
            .sum::<f64>()
            / d as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub tournament: usize,
    /// Per-child probability of one random swap.
    pub mutation: f64,
    /// Best members copied unchanged into the next generation.
    pub elitism: usize,
    pub generations: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 64,
            tournament: 4,
            mutation: 0.1,
            elitism: 2,
            generations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub population: Vec<PermSpec>,
    pub best: PermSpec,
    pub best_score: f64,
    /// Best score after initialization and after each generation.
    pub trace: Vec<f64>,
    pub generations: usize,
    /// Share of indices placed correctly, when the truth is known.
    pub fraction_correct: Option<f64>,
}

/// Partially mapped crossover: keeps `a[lo..hi]` in place and fills the
/// rest from `b`, following the segment mapping on collisions.
fn pmx(a: &PermSpec, b: &PermSpec, lo: usize, hi: usize) -> PermSpec {
    let (a, b) = (a.indices(), b.indices());
    let d = a.len();
    let mut child = vec![usize::MAX; d];
    let mut pos_in_b = vec![0; d];
    for (i, &v) in b.iter().enumerate() {
        pos_in_b[v] = i;
    }
    let mut used = vec![false; d];
    for i in lo..hi {
        child[i] = a[i];
        used[a[i]] = true;
    }
    for (i, &v) in b.iter().enumerate().take(hi).skip(lo) {
        if used[v] {
            continue;
        }
        let mut pos = i;
        while (lo..hi).contains(&pos) {
            pos = pos_in_b[a[pos]];
        }
        child[pos] = v;
        used[v] = true;
    }
    for (c, &v) in child.iter_mut().zip(b) {
        if *c == usize::MAX {
            *c = v;
        }
    }
    PermSpec::new(child).expect("crossover of permutations is a permutation")
}

fn tournament<'a>(scored: &'a [(PermSpec, f64)], k: usize, rng: &mut impl Rng) -> &'a PermSpec {
    let mut best = scored.choose(rng).expect("non-empty population");
    for _ in 1..k {
        let c = scored.choose(rng).expect("non-empty population");
        if c.1 > best.1 {
            best = c;
        }
    }
    &best.0
}

fn score_all(pop: Vec<PermSpec>, scorer: &dyn Scorer) -> Vec<(PermSpec, f64)> {
    let mut scored: Vec<(PermSpec, f64)> = pop
        .into_par_iter()
        .map(|p| {
            let s = scorer.score(&p);
            (p, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored
}

/// Searches permutations of width `d` for the highest score. Tournament
/// selection, PMX crossover, swap mutation and elitism, so the best score
/// never decreases.
pub fn genetic_perm_search(
    d: usize,
    scorer: &dyn Scorer,
    config: &GaConfig,
    truth: Option<&PermSpec>,
    rng: &mut impl Rng,
) -> Result<SearchState> {
    if d == 0 || config.generations == 0 || config.population < 2 || config.tournament == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d ≥ 1, a budget ≥ 1, population ≥ 2 and tournament ≥ 1, got {d}, {config:?}"
        )));
    }
    if !(0.0..=1.0).contains(&config.mutation) {
        return Err(Error::InvalidArgument(format!(
            "mutation rate {} outside [0, 1]",
            config.mutation
        )));
    }
    if let Some(t) = truth {
        if t.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "truth has width {}, search has {d}",
                t.len()
            )));
        }
    }
    let initial = (0..config.population).map(|_| PermSpec::random(d, rng)).collect();
    let mut scored = score_all(initial, scorer);
    let mut best = scored[0].clone();
    let mut trace = vec![best.1];
    for _ in 0..config.generations {
        let mut next: Vec<PermSpec> = scored
            .iter()
            .take(config.elitism.min(config.population))
            .map(|(p, _)| p.clone())
            .collect();
        while next.len() < config.population {
            let a = tournament(&scored, config.tournament, rng);
            let b = tournament(&scored, config.tournament, rng);
            let (mut lo, mut hi) = (rng.random_range(0..=d), rng.random_range(0..=d));
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            let mut child = pmx(a, b, lo, hi);
            if d > 1 && rng.random_bool(config.mutation) {
                let mut v = child.indices().to_vec();
                let (i, j) = (rng.random_range(0..d), rng.random_range(0..d));
                v.swap(i, j);
                child = PermSpec::new(v)?;
            }
            next.push(child);
        }
        scored = score_all(next, scorer);
        if scored[0].1 > best.1 {
            best = scored[0].clone();
        }
        trace.push(best.1);
    }
    Ok(SearchState {
        fraction_correct: truth.map(|t| best.0.agreement(t)),
        population: scored.into_iter().map(|(p, _)| p).collect(),
        best: best.0,
        best_score: best.1,
        trace,
        generations: config.generations,
    })
}

/// Exhaustive search over all `d!` permutations (Heap's algorithm). The
/// first maximum in enumeration order wins.
pub fn brute_force(d: usize, scorer: &dyn Scorer) -> Result<(PermSpec, f64)> {
    if d == 0 || d > 10 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search needs 1 ≤ d ≤ 10, got {d}"
        )));
    }
    let mut a: Vec<usize> = (0..d).collect();
    let mut best = (PermSpec::identity(d), scorer.score(&PermSpec::identity(d)));
    let mut c = vec![0; d];
    let mut i = 1;
    while i < d {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            let p = PermSpec::new(a.clone())?;
            let s = scorer.score(&p);
            if s > best.1 {
                best = (p, s);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}
