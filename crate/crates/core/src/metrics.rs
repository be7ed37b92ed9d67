//! Precision/recall, average precision, mAP, ROC-AUC and the random-scorer
//! AP baseline.
//!
//! AP is the non-interpolated area under the stepwise PR curve: the mean of
//! the precision values at the rank of each positive, with positives that are
//! never retrieved contributing zero. Ties in score are broken by ascending
//! example id so results are reproducible.

use serde::{Deserialize, Serialize};

use crate::detection::{detections_by_frame, match_detections, CategoryId, Detection, EvalPool, GroundTruth};
use crate::error::{Error, Result};

/// Default minimum positive count for a category to enter mAP/mSAP.
pub const DEFAULT_MIN_EXAMPLES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: CategoryId,
    pub value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// AP over a ranked hit list where `n_pos` counts every positive, retrieved
/// or not.
pub fn ap_from_ranked_hits<I>(hits: I, n_pos: usize) -> f64
where
    I: IntoIterator<Item = bool>,
{
    if n_pos == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, hit) in hits.into_iter().enumerate() {
        if hit {
            tp += 1;
            sum += tp as f64 / (rank + 1) as f64;
        }
    }
    sum / n_pos as f64
}

pub fn average_precision(pool: &EvalPool) -> Result<f64> {
    if pool.n_pos() == 0 {
        return Err(Error::NoPositives(pool.category));
    }
    Ok(ap_from_ranked_hits(pool.ranked().iter().map(|e| e.is_positive), pool.n_pos()))
}

/// PR point after each rank of the pool's ranking.
pub fn pr_curve(pool: &EvalPool) -> Vec<PrPoint> {
    let n_pos = pool.n_pos();
    let (mut tp, mut fp) = (0usize, 0usize);
    pool.ranked()
        .iter()
        .map(|e| {
            if e.is_positive {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                tp,
                fp,
                fn_: n_pos - tp,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if n_pos > 0 { tp as f64 / n_pos as f64 } else { 0.0 },
            }
        })
        .collect()
}

/// Frame-level detection AP: every detection of `category` is ranked by score
/// and flagged TP or FP by per-frame greedy matching.
pub fn frame_ap(gt: &GroundTruth, dets: &[Detection], category: CategoryId, iou_threshold: f64) -> Result<f64> {
    if !gt.label_space().contains(&category) {
        return Err(Error::UnknownCategory(category));
    }
    let n_pos = gt.positive_count(category);
    if n_pos == 0 {
        return Err(Error::NoPositives(category));
    }

    let mut positives_by_frame: std::collections::BTreeMap<_, Vec<_>> = Default::default();
    for g in gt.instances().iter().filter(|g| g.has(category)) {
        positives_by_frame.entry(&g.frame).or_insert_with(Vec::new).push(g.bbox);
    }

    // (score, global detection index, is_tp)
    let mut flagged: Vec<(f64, usize, bool)> = Vec::new();
    for (frame, frame_dets) in detections_by_frame(dets, category) {
        let boxes = positives_by_frame.get(frame).map(Vec::as_slice).unwrap_or(&[]);
        let refs: Vec<&Detection> = frame_dets.iter().map(|(_, d)| *d).collect();
        let m = match_detections(&refs, boxes, iou_threshold);
        flagged.extend(frame_dets.iter().zip(m.is_tp).map(|((i, d), tp)| (d.score, *i, tp)));
    }
    flagged.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ap_from_ranked_hits(flagged.iter().map(|f| f.2), n_pos))
}

/// Unweighted mean over categories with at least `min_examples` positives.
pub fn mean_ap(scores: &[CategoryScore], min_examples: usize) -> Result<f64> {
    let eligible: Vec<f64> = scores.iter().filter(|s| s.n_pos >= min_examples).map(|s| s.value).collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleCategories { min_examples });
    }
    Ok(eligible.iter().sum::<f64>() / eligible.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney U with mid-ranks).
pub fn roc_auc(pool: &EvalPool) -> Result<f64> {
    let (n_pos, n_neg) = (pool.n_pos(), pool.n_neg());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegeneratePool(pool.category));
    }
    let mut all: Vec<(f64, bool)> =
        pool.positives.iter().chain(&pool.negatives).map(|e| (e.score, e.is_positive)).collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their average
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = all[i..j].iter().filter(|e| e.1).count();
        pos_rank_sum += mid * pos_in_block as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n)).clamp(0.0, 1.0))
}

/// Expected AP of a uniformly random scorer in the large-sample limit: the
/// fraction of positives in the pool.
pub fn random_baseline_ap(n_pos: usize, n_total: usize) -> Result<f64> {
    if n_pos == 0 || n_pos > n_total {
        return Err(Error::InvalidCounts { n_pos, n_total });
    }
    Ok(n_pos as f64 / n_total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::fixtures::*;
    use crate::detection::{build_eval_pool, Origin, ScoredExample};
    use proptest::prelude::*;

    fn pool(entries: &[(f64, bool)]) -> EvalPool {
        EvalPool::from_scores(CategoryId(0), entries.iter().enumerate().map(|(i, &(s, p))| (i as u64, s, p))).unwrap()
    }

    /// Exhaustive PR accumulation: precision at every recall step.
    fn ap_oracle(entries: &[(f64, bool)]) -> f64 {
        let mut sorted: Vec<(usize, f64, bool)> = entries.iter().enumerate().map(|(i, &(s, p))| (i, s, p)).collect();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let n_pos = entries.iter().filter(|e| e.1).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for k in 1..=sorted.len() {
            let tp = sorted[..k].iter().filter(|e| e.2).count() as f64;
            let recall = tp / n_pos;
            area += (recall - prev_recall) * tp / k as f64;
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn perfect_ranking_is_one() {
        let p = pool(&[(0.9, true), (0.8, true), (0.1, false), (0.0, false)]);
        assert_eq!(average_precision(&p).unwrap(), 1.0);
    }

    #[test]
    fn hand_enumerated_ranking() {
        let e = [(0.9, true), (0.8, false), (0.7, true)];
        let ap = average_precision(&pool(&e)).unwrap();
        assert!((ap - (0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-15);
        assert!((ap - ap_oracle(&e)).abs() < 1e-15);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn no_positives_error() {
        assert!(matches!(average_precision(&pool(&[(0.5, false)])), Err(Error::NoPositives(_))));
    }

    #[test]
    fn ties_break_by_id() {
        // equal scores: the lower id ranks first
        let a = pool(&[(0.5, true), (0.5, false)]);
        let b = pool(&[(0.5, false), (0.5, true)]);
        assert_eq!(average_precision(&a).unwrap(), 1.0);
        assert_eq!(average_precision(&b).unwrap(), 0.5);
    }

    #[test]
    fn pr_curve_counts() {
        let pts = pr_curve(&pool(&[(0.9, true), (0.8, false), (0.7, true)]));
        assert_eq!(pts.len(), 3);
        assert_eq!((pts[1].tp, pts[1].fp, pts[1].fn_), (1, 1, 1));
        assert_eq!(pts[2].recall, 1.0);
        assert!((pts[2].precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn frame_ap_fixtures() {
        let gt = micro_gt();
        let perfect = perfect_dets(&gt);
        assert_eq!(frame_ap(&gt, &perfect, CategoryId(0), 0.5).unwrap(), 1.0);

        // only the frame-1 positive detected
        let one = vec![det("v", 1, bx(0.1, 0.1, 0.4, 0.4), 0, 0.9)];
        assert_eq!(frame_ap(&gt, &one, CategoryId(0), 0.5).unwrap(), 0.5);

        // stray box ranked above both true positives
        let mut stray = vec![det("v", 3, bx(0.6, 0.6, 0.8, 0.8), 0, 0.95)];
        stray.push(det("v", 1, bx(0.1, 0.1, 0.4, 0.4), 0, 0.9));
        stray.push(det("v", 2, bx(0.2, 0.2, 0.5, 0.5), 0, 0.8));
        let ap = frame_ap(&gt, &stray, CategoryId(0), 0.5).unwrap();
        assert!((ap - (0.5 * 0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-15);
        assert!((ap - 0.5833).abs() < 1e-4);

        assert_eq!(frame_ap(&gt, &[], CategoryId(1), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mean_ap_eligibility() {
        let s = |v, n| CategoryScore { category: CategoryId(0), value: v, n_pos: n, n_neg: 0 };
        assert_eq!(mean_ap(&[s(0.3, 40)], 25).unwrap(), 0.3);
        assert_eq!(mean_ap(&[s(0.2, 30), s(0.8, 30)], 25).unwrap(), 0.5);
        assert_eq!(mean_ap(&[s(0.2, 30), s(0.9, 3)], 25).unwrap(), 0.2);
        assert!(matches!(mean_ap(&[s(0.9, 3)], 25), Err(Error::NoEligibleCategories { .. })));
    }

    #[test]
    fn roc_auc_fixtures() {
        assert_eq!(roc_auc(&pool(&[(0.9, true), (0.1, false)])).unwrap(), 1.0);
        // concordant pairs: (0.9>0.8), (0.9>0.1), (0.7>0.1); discordant (0.7<0.8)
        let p = pool(&[(0.9, true), (0.8, false), (0.7, true), (0.1, false)]);
        assert_eq!(roc_auc(&p).unwrap(), 0.75);
        assert_eq!(roc_auc(&pool(&[(0.5, true), (0.5, false)])).unwrap(), 0.5);
        assert!(matches!(roc_auc(&pool(&[(0.5, true)])), Err(Error::DegeneratePool(_))));
    }

    #[test]
    fn random_baseline_values() {
        assert!((random_baseline_ap(44449, 93994).unwrap() - 0.4729).abs() < 1e-4);
        assert!((random_baseline_ap(32, 93994).unwrap() - 0.00034).abs() < 1e-5);
        assert_eq!(random_baseline_ap(7, 7).unwrap(), 1.0);
        assert!(random_baseline_ap(0, 7).is_err());
        assert!(random_baseline_ap(8, 7).is_err());
    }

    #[test]
    fn empty_detections_pool_auc_is_half() {
        let gt = micro_gt();
        let p = build_eval_pool(&gt, &[], CategoryId(0), 0.5).unwrap();
        assert_eq!(roc_auc(&p).unwrap(), 0.5);
        assert!(p.positives.iter().all(|e| e.origin == Origin::UnmatchedGt));
    }

    fn arb_entries() -> impl Strategy<Value = Vec<(f64, bool)>> {
        proptest::collection::vec((0.0..1.0f64, any::<bool>()), 2..40)
            .prop_filter("needs a positive", |v| v.iter().any(|e| e.1))
    }

    proptest! {
        #[test]
        fn ap_matches_pr_oracle_and_bounds(e in arb_entries()) {
            let p = pool(&e);
            let ap = average_precision(&p).unwrap();
            prop_assert!((ap - ap_oracle(&e)).abs() < 1e-12);
            prop_assert!(ap <= 1.0 && ap > 0.0);
        }

        #[test]
        fn ap_invariant_under_monotone_transform(e in arb_entries()) {
            let p = pool(&e);
            let t = p.map_scores(|s| (3.0 * s).exp() - 0.5);
            prop_assert_eq!(average_precision(&p).unwrap(), average_precision(&t).unwrap());
            prop_assert_eq!(roc_auc(&p).ok(), roc_auc(&t).ok());
        }

        #[test]
        fn appended_negatives(e in arb_entries()) {
            let p = pool(&e);
            let base = average_precision(&p).unwrap();
            let mut last = p.clone();
            last.negatives.push(ScoredExample { example_id: 10_000, score: -1.0, is_positive: false, origin: Origin::Scored });
            prop_assert_eq!(average_precision(&last).unwrap(), base);
            let mut first = p.clone();
            first.negatives.push(ScoredExample { example_id: 10_001, score: 2.0, is_positive: false, origin: Origin::Scored });
            prop_assert!(average_precision(&first).unwrap() < base);
        }

        #[test]
        fn auc_flip_symmetry(e in arb_entries().prop_filter("needs a negative", |v| v.iter().any(|x| !x.1))) {
            let p = pool(&e);
            let flipped: Vec<(f64, bool)> = e.iter().map(|&(s, l)| (1.0 - s, !l)).collect();
            let f = pool(&flipped);
            prop_assert!((roc_auc(&p).unwrap() - roc_auc(&f).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn reversed_perfect_ranking_is_minimal(e in arb_entries()) {
            // every negative ahead of every positive
            let worst: Vec<(f64, bool)> = e.iter().map(|&(_, l)| (if l { 0.0 } else { 1.0 }, l)).collect();
            let worst_ap = average_precision(&pool(&worst)).unwrap();
            prop_assert!(average_precision(&pool(&e)).unwrap() >= worst_ap - 1e-15);
            let n_pos = e.iter().filter(|x| x.1).count();
            prop_assert!(worst_ap <= n_pos as f64 / e.len() as f64 + 1e-12);
        }

        #[test]
        fn mean_of_identical_values(v in 0.0..1.0f64, k in 1usize..20) {
            let scores: Vec<CategoryScore> = (0..k)
                .map(|i| CategoryScore { category: CategoryId(i as u32), value: v, n_pos: 30, n_neg: 0 })
                .collect();
            prop_assert!((mean_ap(&scores, 25).unwrap() - v).abs() < 1e-12);
        }
    }
}
