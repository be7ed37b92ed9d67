use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{forward_into, Activations, ModelParams};
use crate::detection::{CategoryId, EvalPool};
use crate::error::{Error, Result};
use crate::longtail::{split_head_tail, FeatureDataset, HeadTailSplit};
use crate::metrics::average_precision;
use crate::sampled_ap::{sampled_ap, SapConfig};
use crate::{par, rng};

/// Per-category probabilities for every example, in dataset order.
pub fn predict(params: &ModelParams, dataset: &FeatureDataset) -> Result<Vec<Vec<f64>>> {
    let d = params.dims();
    if dataset.feature_dim != d.input {
        return Err(Error::DimMismatch { expected: d.input, got: dataset.feature_dim });
    }
    if dataset.n_categories != d.categories {
        return Err(Error::DimMismatch { expected: d.categories, got: dataset.n_categories });
    }
    Ok(par::map_slice(&dataset.examples, |e| {
        let mut act = Activations::new(d);
        forward_into(params, &e.features, &mut act);
        act.probs
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEval {
    pub category: CategoryId,
    pub n_pos: usize,
    pub n_neg: usize,
    pub head: bool,
    pub ap: Option<f64>,
    pub sap_mean: Option<f64>,
    pub sap_std: Option<f64>,
}

/// Unweighted means over the eligible members of a category group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub categories: usize,
    pub eligible: usize,
    pub map: Option<f64>,
    pub msap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub min_examples: usize,
    pub per_category: Vec<CategoryEval>,
    pub all: GroupSummary,
    pub head: GroupSummary,
    pub tail: GroupSummary,
}

impl EvalReport {
    pub fn ap_map(&self) -> BTreeMap<CategoryId, f64> {
        self.per_category.iter().filter_map(|c| c.ap.map(|ap| (c.category, ap))).collect()
    }
}

fn summarize<'a>(members: impl Iterator<Item = &'a CategoryEval>, min_examples: usize) -> GroupSummary {
    let members: Vec<&CategoryEval> = members.collect();
    let eligible: Vec<&&CategoryEval> =
        members.iter().filter(|c| c.n_pos >= min_examples.max(1) && c.ap.is_some()).collect();
    let mean = |f: fn(&CategoryEval) -> Option<f64>| {
        let v: Vec<f64> = eligible.iter().filter_map(|c| f(c)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    GroupSummary {
        categories: members.len(),
        eligible: eligible.len(),
        map: mean(|c| c.ap),
        msap: mean(|c| c.sap_mean),
    }
}

/// Scores classification-mode pools built from `predictions`: an example is
/// positive for its labels and negative for every other category. Categories
/// without positives are reported with empty scores.
pub fn evaluate_predictions(
    dataset: &FeatureDataset,
    predictions: &[Vec<f64>],
    sap: &SapConfig,
    split: &HeadTailSplit,
    min_examples: usize,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != dataset.len() {
        return Err(Error::DimMismatch { expected: dataset.len(), got: predictions.len() });
    }
    let categories: Vec<CategoryId> = dataset.categories().collect();
    let per_category = par::try_map_range(categories.len(), |k| {
        let c = categories[k];
        let pool =
            EvalPool::from_scores(c, dataset.examples.iter().zip(predictions).map(|(e, p)| (e.id, p[k], e.has(c))))?;
        let (ap, sap_res) = if pool.n_pos() == 0 {
            (None, None)
        } else {
            let config = SapConfig { seed: rng::derive_seed(sap.seed, k as u64), ..*sap };
            (Some(average_precision(&pool)?), Some(sampled_ap(&pool, &config)?))
        };
        Ok::<_, Error>(CategoryEval {
            category: c,
            n_pos: pool.n_pos(),
            n_neg: pool.n_neg(),
            head: split.is_head(c),
            ap,
            sap_mean: sap_res.as_ref().map(|r| r.mean),
            sap_std: sap_res.as_ref().map(|r| r.std),
        })
    })?;
    let all = summarize(per_category.iter(), min_examples);
    let head = summarize(per_category.iter().filter(|c| split.is_head(c.category)), min_examples);
    let tail = summarize(per_category.iter().filter(|c| split.tail.contains(&c.category)), min_examples);
    Ok(EvalReport { min_examples, per_category, all, head, tail })
}

/// AP and SAP of a model on one split, grouped by head/tail membership.
pub fn evaluate_model(
    params: &ModelParams,
    dataset: &FeatureDataset,
    sap: &SapConfig,
    split: &HeadTailSplit,
    min_examples: usize,
) -> Result<EvalReport> {
    let predictions = predict(params, dataset)?;
    evaluate_predictions(dataset, &predictions, sap, split, min_examples)
}

/// Head/tail split from a baseline's AP on its own training data versus a
/// held-out split.
pub fn reference_split(
    baseline: &ModelParams,
    train: &FeatureDataset,
    val: &FeatureDataset,
    tau: f64,
) -> Result<HeadTailSplit> {
    let everything = HeadTailSplit::all_head(train.categories());
    let sap = SapConfig::new(1, 0);
    let on_train = evaluate_model(baseline, train, &sap, &everything, 1)?.ap_map();
    let on_val = evaluate_model(baseline, val, &sap, &everything, 1)?.ap_map();
    let common: Vec<CategoryId> = on_train.keys().filter(|c| on_val.contains_key(c)).copied().collect();
    let pick = |m: &BTreeMap<CategoryId, f64>| common.iter().map(|c| (*c, m[c])).collect::<BTreeMap<_, _>>();
    let mut split = split_head_tail(&pick(&on_train), &pick(&on_val), tau)?;
    // categories absent from either split cannot be judged; treat as tail
    split.tail.extend(train.categories().filter(|c| !common.contains(c)));
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::longtail::{Example, Split};
    use crate::trainer::model::ModelDims;

    fn dataset() -> FeatureDataset {
        let examples = (0..60)
            .map(|i| Example {
                id: i,
                features: vec![(i % 3) as f64, ((i * 7) % 5) as f64 * 0.1],
                labels: vec![CategoryId((i % 3) as u32)],
            })
            .collect();
        FeatureDataset::new(Split::Test, 3, 2, examples).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let ds = dataset();
        let preds: Vec<Vec<f64>> = ds
            .examples
            .iter()
            .map(|e| (0..3).map(|c| if e.has(CategoryId(c)) { 0.9 } else { 0.1 }).collect())
            .collect();
        let split =
            HeadTailSplit { head: [CategoryId(0)].into(), tail: [CategoryId(1), CategoryId(2)].into(), tau: 0.0 };
        let r = evaluate_predictions(&ds, &preds, &SapConfig::new(5, 1), &split, 1).unwrap();
        assert!(r.per_category.iter().all(|c| c.sap_mean == Some(1.0) && c.ap == Some(1.0)));
        assert_eq!(r.head.categories, 1);
        assert_eq!(r.tail.categories, 2);
        assert_eq!(r.all.msap, Some(1.0));
    }

    #[test]
    fn group_means_are_unweighted() {
        let ds = dataset();
        // category scores: 0 perfect, 1 reversed, 2 constant
        let preds: Vec<Vec<f64>> = ds
            .examples
            .iter()
            .map(|e| {
                let c = e.labels[0].0;
                vec![f64::from(c == 0), f64::from(c != 1), 0.5]
            })
            .collect();
        let split =
            HeadTailSplit { head: [CategoryId(0)].into(), tail: [CategoryId(1), CategoryId(2)].into(), tau: 0.0 };
        let r = evaluate_predictions(&ds, &preds, &SapConfig::new(5, 1), &split, 1).unwrap();
        let ap = |k: usize| r.per_category[k].ap.unwrap();
        assert!((r.tail.map.unwrap() - (ap(1) + ap(2)) / 2.0).abs() < 1e-15);
        assert!((r.all.map.unwrap() - (ap(0) + ap(1) + ap(2)) / 3.0).abs() < 1e-15);
        assert_eq!(r.head.map, Some(ap(0)));
    }

    #[test]
    fn untrained_model_ranks_at_chance() {
        let ds = dataset();
        let dims = ModelDims { input: 2, hidden: 4, embedding: 3, categories: 3 };
        let r = evaluate_model(
            &ModelParams::zeros(dims),
            &ds,
            &SapConfig::default(),
            &HeadTailSplit::all_head(ds.categories()),
            1,
        )
        .unwrap();
        assert_eq!(r.per_category.len(), 3);
        assert!(r.per_category.iter().all(|c| c.n_pos == 20 && c.n_neg == 40));
    }
}
