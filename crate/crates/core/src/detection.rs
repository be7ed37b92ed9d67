//! Boxes, annotations and detections, IoU matching, and the conversion of
//! detector output into per-category evaluation pools.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default IoU threshold for a detection to count as a match.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Score given to ground-truth boxes that no detection matched. It ranks
/// below every real detection score.
pub const UNMATCHED_SCORE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for CategoryId {
    fn from(v: u32) -> Self {
        CategoryId(v)
    }
}

/// Axis-aligned box in normalised image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if [x1, y1, x2, y2].iter().all(|&v| in_unit(v)) && x1 < x2 && y1 < y2 {
            Ok(BoundingBox { x1, y1, x2, y2 })
        } else {
            Err(Error::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A key frame: one video at one timestamp (seconds).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub video_id: String,
    pub timestamp: i64,
}

impl FrameKey {
    pub fn new(video_id: impl Into<String>, timestamp: i64) -> Self {
        FrameKey { video_id: video_id.into(), timestamp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub frame: FrameKey,
    pub bbox: BoundingBox,
    pub categories: BTreeSet<CategoryId>,
    pub instance_id: u64,
}

impl GroundTruthInstance {
    pub fn has(&self, category: CategoryId) -> bool {
        self.categories.contains(&category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: FrameKey,
    pub bbox: BoundingBox,
    pub category: CategoryId,
    pub score: f64,
}

impl Detection {
    pub fn new(frame: FrameKey, bbox: BoundingBox, category: CategoryId, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Detection { frame, bbox, category, score })
    }
}

/// Annotated ground truth plus the label space it is evaluated over.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    instances: Vec<GroundTruthInstance>,
    label_space: BTreeSet<CategoryId>,
}

impl GroundTruth {
    /// Builds a ground-truth set whose label space is the union of the
    /// instance labels.
    pub fn new(instances: Vec<GroundTruthInstance>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(instances.len());
        let mut label_space = BTreeSet::new();
        for inst in &instances {
            if inst.categories.is_empty() {
                return Err(Error::config(format!("ground-truth instance {} has no categories", inst.instance_id)));
            }
            if !ids.insert(inst.instance_id) {
                return Err(Error::config(format!("duplicate ground-truth instance id {}", inst.instance_id)));
            }
            label_space.extend(inst.categories.iter().copied());
        }
        Ok(GroundTruth { instances, label_space })
    }

    /// Merges `(frame, box, category)` rows; rows sharing a frame and box
    /// become one multi-label instance. Instance ids follow first appearance.
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (FrameKey, BoundingBox, CategoryId)>,
    {
        let mut instances: Vec<GroundTruthInstance> = Vec::new();
        let mut index: BTreeMap<(FrameKey, [u64; 4]), usize> = BTreeMap::new();
        for (frame, bbox, category) in rows {
            let key = (frame.clone(), bbox.coords().map(f64::to_bits));
            match index.get(&key) {
                Some(&i) => {
                    instances[i].categories.insert(category);
                }
                None => {
                    index.insert(key, instances.len());
                    instances.push(GroundTruthInstance {
                        frame,
                        bbox,
                        categories: BTreeSet::from([category]),
                        instance_id: instances.len() as u64,
                    });
                }
            }
        }
        GroundTruth::new(instances)
    }

    /// Widens the label space, e.g. to categories that only appear in
    /// detections.
    pub fn with_label_space(mut self, extra: impl IntoIterator<Item = CategoryId>) -> Self {
        self.label_space.extend(extra);
        self
    }

    pub fn instances(&self) -> &[GroundTruthInstance] {
        &self.instances
    }

    pub fn label_space(&self) -> &BTreeSet<CategoryId> {
        &self.label_space
    }

    pub fn positive_count(&self, category: CategoryId) -> usize {
        self.instances.iter().filter(|g| g.has(category)).count()
    }

    fn check_category(&self, category: CategoryId) -> Result<()> {
        if self.label_space.contains(&category) {
            Ok(())
        } else {
            Err(Error::UnknownCategory(category))
        }
    }

    fn by_frame(&self) -> BTreeMap<&FrameKey, Vec<usize>> {
        let mut frames: BTreeMap<&FrameKey, Vec<usize>> = BTreeMap::new();
        for (i, g) in self.instances.iter().enumerate() {
            frames.entry(&g.frame).or_default().push(i);
        }
        frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    MatchedGt,
    UnmatchedGt,
    BackgroundDetection,
    /// Classification-mode example scored directly by a model.
    Scored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub example_id: u64,
    pub score: f64,
    pub is_positive: bool,
    pub origin: Origin,
}

/// Ranking order: descending score, ties by ascending id.
pub fn rank_order(a: &ScoredExample, b: &ScoredExample) -> Ordering {
    b.score.total_cmp(&a.score).then(a.example_id.cmp(&b.example_id))
}

/// One category's retrieval problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPool {
    pub category: CategoryId,
    pub positives: Vec<ScoredExample>,
    pub negatives: Vec<ScoredExample>,
}

impl EvalPool {
    pub fn new(category: CategoryId, positives: Vec<ScoredExample>, negatives: Vec<ScoredExample>) -> Result<Self> {
        if positives.iter().any(|e| !e.is_positive) || negatives.iter().any(|e| e.is_positive) {
            return Err(Error::config("pool example sign does not match its list"));
        }
        if let Some(e) = positives.iter().chain(&negatives).find(|e| e.score.is_nan() || e.score < UNMATCHED_SCORE) {
            return Err(Error::config(format!("example {} has invalid score {}", e.example_id, e.score)));
        }
        let mut ids = HashSet::with_capacity(positives.len() + negatives.len());
        if !positives.iter().chain(&negatives).all(|e| ids.insert(e.example_id)) {
            return Err(Error::config("duplicate example id in pool"));
        }
        Ok(EvalPool { category, positives, negatives })
    }

    /// Classification-mode pool from `(example_id, score, is_positive)`.
    pub fn from_scores<I>(category: CategoryId, scored: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, f64, bool)>,
    {
        let (positives, negatives): (Vec<_>, Vec<_>) = scored
            .into_iter()
            .map(|(example_id, score, is_positive)| ScoredExample {
                example_id,
                score,
                is_positive,
                origin: Origin::Scored,
            })
            .partition(|e| e.is_positive);
        EvalPool::new(category, positives, negatives)
    }

    pub fn n_pos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len()
    }

    pub fn len(&self) -> usize {
        self.n_pos() + self.n_neg()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All examples in rank order.
    pub fn ranked(&self) -> Vec<ScoredExample> {
        let mut all: Vec<ScoredExample> = self.positives.iter().chain(&self.negatives).copied().collect();
        all.sort_unstable_by(rank_order);
        all
    }

    /// Same pool with every score passed through `f`.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> EvalPool {
        let map = |v: &Vec<ScoredExample>| v.iter().map(|e| ScoredExample { score: f(e.score), ..*e }).collect();
        EvalPool { category: self.category, positives: map(&self.positives), negatives: map(&self.negatives) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Per detection, in input order.
    pub is_tp: Vec<bool>,
    /// Per detection, index of the ground truth it matched.
    pub matched_gt: Vec<Option<usize>>,
    /// Per ground truth, score of the detection that claimed it.
    pub gt_score: Vec<Option<f64>>,
}

/// Greedy matching of one category's detections against ground-truth boxes
/// in one frame.
///
/// Detections are visited by descending score (input order breaks ties). Each
/// claims the still-unmatched box with the highest IoU, provided that IoU is
/// at least `iou_threshold`.
pub fn match_detections<D>(dets: &[D], gts: &[BoundingBox], iou_threshold: f64) -> MatchResult
where
    D: AsRef<Detection>,
{
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].as_ref().score.total_cmp(&dets[a].as_ref().score).then(a.cmp(&b)));

    let mut result = MatchResult {
        is_tp: vec![false; dets.len()],
        matched_gt: vec![None; dets.len()],
        gt_score: vec![None; gts.len()],
    };
    for d in order {
        let det = dets[d].as_ref();
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if result.gt_score[g].is_some() {
                continue;
            }
            let overlap = iou(&det.bbox, gt);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            result.is_tp[d] = true;
            result.matched_gt[d] = Some(g);
            result.gt_score[g] = Some(det.score);
        }
    }
    result
}

impl AsRef<Detection> for Detection {
    fn as_ref(&self) -> &Detection {
        self
    }
}

/// Detections of `category`, grouped by frame, with their global indices.
pub(crate) fn detections_by_frame(
    dets: &[Detection],
    category: CategoryId,
) -> BTreeMap<&FrameKey, Vec<(usize, &Detection)>> {
    let mut frames: BTreeMap<&FrameKey, Vec<(usize, &Detection)>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate().filter(|(_, d)| d.category == category) {
        frames.entry(&d.frame).or_default().push((i, d));
    }
    frames
}

/// Builds the evaluation pool of `category` from detector output.
///
/// Positives are the ground-truth instances carrying `category`; negatives are
/// the remaining instances plus one entry per detection of `category` that
/// overlaps no ground-truth box of any category. Instances are scored with the
/// detection that claimed them, or [`UNMATCHED_SCORE`]. A detection first
/// competes for positive boxes, then for negative boxes; a duplicate that
/// loses both contests but still overlaps a box contributes nothing.
pub fn build_eval_pool(
    gt: &GroundTruth,
    dets: &[Detection],
    category: CategoryId,
    iou_threshold: f64,
) -> Result<EvalPool> {
    gt.check_category(category)?;
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::config(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let instances = gt.instances();
    let mut scores: Vec<Option<f64>> = vec![None; instances.len()];
    let mut background: Vec<(usize, f64)> = Vec::new();

    let gt_frames = gt.by_frame();
    for (frame, frame_dets) in detections_by_frame(dets, category) {
        let members: &[usize] = gt_frames.get(frame).map(Vec::as_slice).unwrap_or(&[]);
        let (pos, neg): (Vec<usize>, Vec<usize>) = members.iter().copied().partition(|&i| instances[i].has(category));
        let boxes = |ids: &[usize]| ids.iter().map(|&i| instances[i].bbox).collect::<Vec<_>>();

        let det_refs: Vec<&Detection> = frame_dets.iter().map(|(_, d)| *d).collect();
        let first = match_detections(&det_refs, &boxes(&pos), iou_threshold);
        for (g, s) in first.gt_score.iter().enumerate() {
            scores[pos[g]] = *s;
        }

        let leftover: Vec<usize> = (0..det_refs.len()).filter(|&d| !first.is_tp[d]).collect();
        let leftover_dets: Vec<&Detection> = leftover.iter().map(|&d| det_refs[d]).collect();
        let second = match_detections(&leftover_dets, &boxes(&neg), iou_threshold);
        for (g, s) in second.gt_score.iter().enumerate() {
            scores[neg[g]] = *s;
        }

        for (k, &d) in leftover.iter().enumerate() {
            if second.is_tp[k] {
                continue;
            }
            let det = det_refs[d];
            let overlaps_any = members.iter().any(|&i| iou(&det.bbox, &instances[i].bbox) >= iou_threshold);
            if !overlaps_any {
                background.push((frame_dets[d].0, det.score));
            }
        }
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (inst, score) in instances.iter().zip(&scores) {
        let is_positive = inst.has(category);
        let example = ScoredExample {
            example_id: inst.instance_id,
            score: score.unwrap_or(UNMATCHED_SCORE),
            is_positive,
            origin: if score.is_some() { Origin::MatchedGt } else { Origin::UnmatchedGt },
        };
        if is_positive {
            positives.push(example);
        } else {
            negatives.push(example);
        }
    }
    let id_base = instances.iter().map(|g| g.instance_id + 1).max().unwrap_or(0);
    background.sort_by_key(|&(i, _)| i);
    negatives.extend(background.into_iter().map(|(i, score)| ScoredExample {
        example_id: id_base + i as u64,
        score,
        is_positive: false,
        origin: Origin::BackgroundDetection,
    }));
    Ok(EvalPool { category, positives, negatives })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    pub fn det(video: &str, t: i64, b: BoundingBox, c: u32, score: f64) -> Detection {
        Detection::new(FrameKey::new(video, t), b, CategoryId(c), score).unwrap()
    }

    /// Three frames: category 0 has two positives (frames a and b), three
    /// boxes carry only other categories, and frame c holds a stray detection.
    pub fn micro_gt() -> GroundTruth {
        let rows = vec![
            (FrameKey::new("v", 1), bx(0.1, 0.1, 0.4, 0.4), CategoryId(0)),
            (FrameKey::new("v", 1), bx(0.6, 0.6, 0.9, 0.9), CategoryId(1)),
            (FrameKey::new("v", 2), bx(0.2, 0.2, 0.5, 0.5), CategoryId(0)),
            (FrameKey::new("v", 2), bx(0.2, 0.2, 0.5, 0.5), CategoryId(2)),
            (FrameKey::new("v", 2), bx(0.6, 0.1, 0.9, 0.4), CategoryId(1)),
            (FrameKey::new("v", 3), bx(0.1, 0.5, 0.3, 0.9), CategoryId(2)),
        ];
        GroundTruth::from_rows(rows).unwrap()
    }

    /// Perfect detections for every label of [`micro_gt`].
    pub fn perfect_dets(gt: &GroundTruth) -> Vec<Detection> {
        gt.instances()
            .iter()
            .flat_map(|g| {
                g.categories
                    .iter()
                    .map(|&c| Detection::new(g.frame.clone(), g.bbox, c, 1.0).unwrap())
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}
