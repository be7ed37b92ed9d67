//! Sampled average precision.
//!
//! For a category with `P` positives, every trial draws `P` negatives without
//! replacement from the negative pool and computes AP on the balanced set.
//! SAP is the mean over trials; mSAP averages SAP over eligible categories.
//! Each trial owns an RNG stream derived from `(seed, trial)`, so trials run
//! in parallel and still reproduce bit for bit.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::detection::{rank_order, CategoryId, EvalPool, Origin, ScoredExample};
use crate::error::{Error, Result};
use crate::metrics::ap_from_ranked_hits;
use crate::{par, rng};

/// Trial count at which the estimate is already stable.
pub const DEFAULT_TRIALS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SapConfig {
    pub n_trials: usize,
    pub seed: u64,
    /// Whether detections overlapping no ground truth may be sampled as
    /// negatives.
    pub include_background: bool,
}

impl Default for SapConfig {
    fn default() -> Self {
        SapConfig { n_trials: DEFAULT_TRIALS, seed: 0, include_background: true }
    }
}

impl SapConfig {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        SapConfig { n_trials, seed, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::config("n_trials must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapResult {
    pub category: CategoryId,
    pub trial_aps: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the trial APs.
    pub std: f64,
    pub n_pos: usize,
    /// The negative pool was smaller than the positive set, so every trial
    /// used all negatives.
    pub degenerate: bool,
}

/// Mean and population std, accumulated relative to the first value so that
/// identical inputs reproduce themselves exactly.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// AP of `positives ∪ negatives` where both slices are already in rank order.
fn merged_ap(positives: &[ScoredExample], negatives: impl Iterator<Item = ScoredExample>) -> f64 {
    let mut negatives = negatives.peekable();
    let mut hits = Vec::with_capacity(positives.len() * 2);
    let mut p = positives.iter().peekable();
    loop {
        match (p.peek(), negatives.peek()) {
            (Some(a), Some(b)) => {
                if rank_order(a, b).is_le() {
                    hits.push(true);
                    p.next();
                } else {
                    hits.push(false);
                    negatives.next();
                }
            }
            (Some(_), None) => {
                hits.push(true);
                p.next();
            }
            (None, _) => break,
        }
    }
    ap_from_ranked_hits(hits, positives.len())
}

fn sorted(v: impl IntoIterator<Item = ScoredExample>) -> Vec<ScoredExample> {
    let mut v: Vec<ScoredExample> = v.into_iter().collect();
    v.sort_unstable_by(rank_order);
    v
}

pub fn sampled_ap(pool: &EvalPool, config: &SapConfig) -> Result<SapResult> {
    config.validate()?;
    let n_pos = pool.n_pos();
    if n_pos == 0 {
        return Err(Error::NoPositives(pool.category));
    }
    let positives = sorted(pool.positives.iter().copied());
    let negatives = sorted(
        pool.negatives.iter().filter(|e| config.include_background || e.origin != Origin::BackgroundDetection).copied(),
    );

    let degenerate = negatives.len() < n_pos;
    let trial_aps = if negatives.len() <= n_pos {
        let ap = merged_ap(&positives, negatives.iter().copied());
        vec![ap; config.n_trials]
    } else {
        par::map_range(config.n_trials, |trial| {
            let mut r = rng::derived(config.seed, trial as u64);
            let mut picked = index::sample(&mut r, negatives.len(), n_pos).into_vec();
            picked.sort_unstable();
            merged_ap(&positives, picked.iter().map(|&i| negatives[i]))
        })
    };
    let (mean, std) = mean_std(&trial_aps);
    Ok(SapResult { category: pool.category, trial_aps, mean, std, n_pos, degenerate })
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Exact expected SAP: mean AP over every negative subset of size `P`.
pub fn sap_exact_small(pool: &EvalPool, max_subsets: u128) -> Result<f64> {
    let n_pos = pool.n_pos();
    if n_pos == 0 {
        return Err(Error::NoPositives(pool.category));
    }
    let positives = sorted(pool.positives.iter().copied());
    let negatives = sorted(pool.negatives.iter().copied());
    let n = negatives.len();
    if n <= n_pos {
        return Ok(merged_ap(&positives, negatives.into_iter()));
    }
    let needed = binomial(n, n_pos).unwrap_or(u128::MAX);
    if needed > max_subsets {
        return Err(Error::TooManySubsets { needed, limit: max_subsets });
    }

    // lexicographic walk over n_pos-combinations of 0..n
    let k = n_pos;
    let mut combo: Vec<usize> = (0..k).collect();
    let mut total = 0.0;
    let mut count = 0u128;
    loop {
        total += merged_ap(&positives, combo.iter().map(|&i| negatives[i]));
        count += 1;
        let Some(i) = (0..k).rev().find(|&i| combo[i] < n - k + i) else { break };
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
    Ok(total / count as f64)
}

/// Unweighted mean of SAP over categories with at least `min_examples`
/// positives.
pub fn msap(results: &[SapResult], min_examples: usize) -> Result<f64> {
    let eligible: Vec<f64> = results.iter().filter(|r| r.n_pos >= min_examples).map(|r| r.mean).collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleCategories { min_examples });
    }
    Ok(eligible.iter().sum::<f64>() / eligible.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub n_trials: usize,
    /// Mean of the SAP estimates across repeats.
    pub mean: f64,
    /// Population std of the SAP estimates across repeats.
    pub std: f64,
}

/// Dispersion of the SAP estimate as a function of the trial count.
///
/// For each entry of `trial_counts`, SAP is recomputed `repeats` times with
/// independent derived seeds.
pub fn stability_profile(
    pool: &EvalPool,
    trial_counts: &[usize],
    repeats: usize,
    seed: u64,
    include_background: bool,
) -> Result<Vec<StabilityRow>> {
    if trial_counts.is_empty() {
        return Err(Error::config("trial_counts is empty"));
    }
    if repeats == 0 {
        return Err(Error::config("repeats must be at least 1"));
    }
    trial_counts
        .iter()
        .enumerate()
        .map(|(j, &n_trials)| {
            let level_seed = rng::derive_seed(seed, j as u64);
            let means = par::try_map_range(repeats, |r| {
                let config = SapConfig { n_trials, seed: rng::derive_seed(level_seed, r as u64), include_background };
                sampled_ap(pool, &config).map(|res| res.mean)
            })?;
            let (mean, std) = mean_std(&means);
            Ok(StabilityRow { n_trials, mean, std })
        })
        .collect()
}
