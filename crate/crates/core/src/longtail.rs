//! Synthetic long-tail data, oversampling, and the head/tail split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detection::CategoryId;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    pub n_categories: usize,
    pub exponent: f64,
    pub max_count: usize,
    pub min_count: usize,
    pub feature_dim: usize,
    /// Per-coordinate standard deviation around a category's mean.
    pub cluster_spread: f64,
    /// Probability that an example carries one extra co-occurring label.
    pub multilabel_rate: f64,
    pub seed: u64,
}

impl Default for ZipfSpec {
    fn default() -> Self {
        ZipfSpec {
            n_categories: 20,
            exponent: 1.2,
            max_count: 2000,
            min_count: 2,
            feature_dim: 32,
            cluster_spread: 0.8,
            multilabel_rate: 0.0,
            seed: 0,
        }
    }
}

impl ZipfSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_categories == 0 {
            return Err(Error::config("n_categories must be positive"));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(Error::config("exponent must be finite and non-negative"));
        }
        if self.min_count == 0 || self.max_count < self.min_count {
            return Err(Error::config("require max_count >= min_count >= 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::config("cluster_spread must be positive"));
        }
        if !(0.0..1.0).contains(&self.multilabel_rate) {
            return Err(Error::config("multilabel_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// `round(max · (k+1)^-s)` clamped to `[min, max]`, most frequent first.
pub fn zipf_counts(spec: &ZipfSpec) -> Vec<usize> {
    (0..spec.n_categories)
        .map(|k| {
            let raw = (spec.max_count as f64 * ((k + 1) as f64).powf(-spec.exponent)).round();
            (raw as usize).clamp(spec.min_count, spec.max_count)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    /// Primary label first, then any co-occurring label.
    pub labels: Vec<CategoryId>,
}

impl Example {
    pub fn has(&self, c: CategoryId) -> bool {
        self.labels.contains(&c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub split: Split,
    pub n_categories: usize,
    pub feature_dim: usize,
    pub examples: Vec<Example>,
}

impl FeatureDataset {
    pub fn new(split: Split, n_categories: usize, feature_dim: usize, examples: Vec<Example>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for e in &examples {
            if e.features.len() != feature_dim {
                return Err(Error::DimMismatch { expected: feature_dim, got: e.features.len() });
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("example {} has non-finite features", e.id)));
            }
            if e.labels.is_empty() {
                return Err(Error::config(format!("example {} has no labels", e.id)));
            }
            if let Some(c) = e.labels.iter().find(|c| c.0 as usize >= n_categories) {
                return Err(Error::UnknownCategory(*c));
            }
            if !ids.insert(e.id) {
                return Err(Error::config(format!("duplicate example id {}", e.id)));
            }
        }
        Ok(FeatureDataset { split, n_categories, feature_dim, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn categories(&self) -> impl Iterator<Item = CategoryId> {
        (0..self.n_categories as u32).map(CategoryId)
    }

    /// Number of examples carrying each label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_categories];
        for e in &self.examples {
            for c in &e.labels {
                counts[c.0 as usize] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.5, val: 0.25, test: 0.25 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions {}/{}/{} must be in [0, 1] and sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

/// A category whose count could not cover every split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptySplit {
    pub category: CategoryId,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: FeatureDataset,
    pub val: FeatureDataset,
    pub test: FeatureDataset,
    /// Primary-label counts before splitting.
    pub counts: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub warnings: Vec<EmptySplit>,
}

impl SyntheticData {
    pub fn split(&self, s: Split) -> &FeatureDataset {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

const MAX_MEAN_COSINE: f64 = 0.5;
const MEAN_ATTEMPTS: usize = 2000;

fn unit_vector(dim: usize, r: &mut rng::Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit-norm cluster means, rejecting candidates whose cosine with an
/// accepted mean exceeds [`MAX_MEAN_COSINE`]. When rejection keeps failing
/// (low dimension, many categories) the least-correlated candidate is taken.
fn cluster_means(k: usize, dim: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let max_cos = |v: &[f64], means: &[Vec<f64>]| {
        means.iter().map(|m| m.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()).fold(f64::NEG_INFINITY, f64::max)
    };
    while means.len() < k {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..MEAN_ATTEMPTS {
            let v = unit_vector(dim, r);
            let c = max_cos(&v, &means);
            if c <= MAX_MEAN_COSINE {
                best = Some((c, v));
                break;
            }
            if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                best = Some((c, v));
            }
        }
        means.push(best.expect("at least one attempt").1);
    }
    means
}

/// Per-split allocation of `count` examples; every split receives one when
/// `count` allows it.
fn allocate(count: usize, f: &SplitFractions) -> [usize; 3] {
    if count < 3 {
        let mut out = [0; 3];
        for slot in out.iter_mut().take(count) {
            *slot = 1;
        }
        return out;
    }
    let val = ((count as f64 * f.val).round() as usize).max(usize::from(f.val > 0.0));
    let test = ((count as f64 * f.test).round() as usize).max(usize::from(f.test > 0.0));
    let (val, test) = if val + test >= count { (1, 1) } else { (val, test) };
    [count - val - test, val, test]
}

/// Draws a Zipf-imbalanced dataset of Gaussian clusters and splits it
/// per category.
///
/// Category `k` gets `zipf_counts(spec)[k]` examples with primary label `k`.
/// An example picks up a second label with probability `multilabel_rate`,
/// chosen in proportion to category frequency; its features then sit around
/// the sum of both means. Generation uses one RNG stream seeded by `spec.seed`.
pub fn synthesize_dataset(spec: &ZipfSpec, fractions: &SplitFractions) -> Result<SyntheticData> {
    spec.validate()?;
    fractions.validate()?;
    let mut r = rng::seeded(spec.seed);
    let counts = zipf_counts(spec);
    let means = cluster_means(spec.n_categories, spec.feature_dim, &mut r);
    let co_label = WeightedIndex::new(&counts).expect("counts are positive");

    let mut splits: [Vec<Example>; 3] = Default::default();
    let mut warnings = Vec::new();
    let mut next_id = 0u64;
    for (k, &count) in counts.iter().enumerate() {
        let mut drawn = Vec::with_capacity(count);
        for _ in 0..count {
            let mut labels = vec![CategoryId(k as u32)];
            if spec.n_categories > 1 && r.random::<f64>() < spec.multilabel_rate {
                let extra = loop {
                    let j = co_label.sample(&mut r);
                    if j != k {
                        break j;
                    }
                };
                labels.push(CategoryId(extra as u32));
            }
            let features = (0..spec.feature_dim)
                .map(|d| {
                    let centre: f64 = labels.iter().map(|c| means[c.0 as usize][d]).sum();
                    let noise: f64 = StandardNormal.sample(&mut r);
                    centre + spec.cluster_spread * noise
                })
                .collect();
            drawn.push(Example { id: next_id, features, labels });
            next_id += 1;
        }
        if count < 3 {
            warnings.push(EmptySplit { category: CategoryId(k as u32), count });
        }
        drawn.shuffle(&mut r);
        let [n_train, n_val, _] = allocate(count, fractions);
        let mut rest = drawn.into_iter();
        splits[0].extend(rest.by_ref().take(n_train));
        splits[1].extend(rest.by_ref().take(n_val));
        splits[2].extend(rest);
    }

    let [train, val, test] = splits;
    let make = |s, ex| FeatureDataset::new(s, spec.n_categories, spec.feature_dim, ex);
    Ok(SyntheticData {
        train: make(Split::Train, train)?,
        val: make(Split::Val, val)?,
        test: make(Split::Test, test)?,
        counts,
        means,
        warnings,
    })
}

/// Oversamples the dataset so every category reaches the size of the largest
/// one.
///
/// Each example is assigned to its rarest label (ties to the lower id).
/// A group of `n` examples with target `T` is repeated `ceil(T/n)` times and
/// the last round trimmed at random to exactly `T`, so every index appears at
/// least once. The returned indices are shuffled.
pub fn oversample_balance(dataset: &FeatureDataset, seed: u64) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = dataset.label_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyCategory(CategoryId(c as u32)));
    }
    let mut groups: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.examples.iter().enumerate() {
        let rarest = *e.labels.iter().min_by_key(|c| (counts[c.0 as usize], **c)).expect("labels non-empty");
        groups.entry(rarest).or_default().push(i);
    }
    let target = groups.values().map(Vec::len).max().unwrap_or(0);

    let mut r = rng::seeded(seed);
    let mut out = Vec::with_capacity(target * groups.len());
    for members in groups.values() {
        let full_rounds = target / members.len();
        for _ in 0..full_rounds {
            out.extend_from_slice(members);
        }
        let remainder = target - full_rounds * members.len();
        if remainder > 0 {
            let mut picked = index::sample(&mut r, members.len(), remainder).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|p| members[p]));
        }
    }
    out.shuffle(&mut r);
    Ok(out)
}

/// Default AP-gap threshold for the head/tail split.
pub const DEFAULT_TAU: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTailSplit {
    pub head: BTreeSet<CategoryId>,
    pub tail: BTreeSet<CategoryId>,
    pub tau: f64,
}

impl HeadTailSplit {
    pub fn all_head(categories: impl IntoIterator<Item = CategoryId>) -> Self {
        HeadTailSplit { head: categories.into_iter().collect(), tail: BTreeSet::new(), tau: DEFAULT_TAU }
    }

    pub fn is_head(&self, c: CategoryId) -> bool {
        self.head.contains(&c)
    }

    pub fn categories(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.head.union(&self.tail).copied()
    }
}

/// A category is tail when its train-minus-validation AP gap is at most
/// `tau`: the baseline could not fit it better than it generalises.
pub fn split_head_tail(
    train_ap: &BTreeMap<CategoryId, f64>,
    val_ap: &BTreeMap<CategoryId, f64>,
    tau: f64,
) -> Result<HeadTailSplit> {
    if !train_ap.keys().eq(val_ap.keys()) {
        return Err(Error::CategoryMismatch);
    }
    let (mut head, mut tail) = (BTreeSet::new(), BTreeSet::new());
    for (c, train) in train_ap {
        if train - val_ap[c] <= tau {
            tail.insert(*c);
        } else {
            head.insert(*c);
        }
    }
    Ok(HeadTailSplit { head, tail, tau })
}
