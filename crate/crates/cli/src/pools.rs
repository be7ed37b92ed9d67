//! Loading evaluation pools from either input mode.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use ltsap::detection::DEFAULT_IOU_THRESHOLD;
use ltsap::io::{read_detections, read_ground_truth, read_predictions, PredictionRecord};
use ltsap::{build_eval_pool, CategoryId, Detection, EvalPool, GroundTruth};

use crate::Exit;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PoolArgs {
    /// Ground-truth CSV (detection mode).
    #[arg(long, requires = "det", conflicts_with = "predictions")]
    pub gt: Option<PathBuf>,
    /// Detection CSV (detection mode).
    #[arg(long, requires = "gt")]
    pub det: Option<PathBuf>,
    /// Per-example score records, JSON lines (classification mode).
    #[arg(long, required_unless_present = "gt")]
    pub predictions: Option<PathBuf>,
    /// IoU threshold for matching detections to ground truth.
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
}

pub enum Source {
    Detection { gt: GroundTruth, dets: Vec<Detection>, iou: f64 },
    Classification { records: Vec<PredictionRecord> },
}

impl Source {
    pub fn load(args: &PoolArgs) -> anyhow::Result<(Source, Vec<PathBuf>)> {
        match (&args.gt, &args.det, &args.predictions) {
            (Some(gt), Some(det), None) => {
                if !(args.iou > 0.0 && args.iou <= 1.0) {
                    return Err(Exit::config(format!("--iou {} must lie in (0, 1]", args.iou)));
                }
                let dets = read_detections(det)?;
                let gt_data = read_ground_truth(gt)?.with_label_space(dets.iter().map(|d| d.category));
                Ok((Source::Detection { gt: gt_data, dets, iou: args.iou }, vec![gt.clone(), det.clone()]))
            }
            (None, None, Some(p)) => Ok((Source::Classification { records: read_predictions(p)? }, vec![p.clone()])),
            _ => Err(Exit::config("give either --gt and --det, or --predictions")),
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Source::Detection { .. } => "detection",
            Source::Classification { .. } => "classification",
        }
    }

    pub fn categories(&self) -> Vec<CategoryId> {
        match self {
            Source::Detection { gt, .. } => gt.label_space().iter().copied().collect(),
            Source::Classification { records } => {
                let k = records.first().map_or(0, |r| r.scores.len());
                (0..k as u32).map(CategoryId).collect()
            }
        }
    }

    pub fn pool(&self, category: CategoryId) -> ltsap::Result<EvalPool> {
        match self {
            Source::Detection { gt, dets, iou } => build_eval_pool(gt, dets, category, *iou),
            Source::Classification { records } => {
                let k = category.0 as usize;
                EvalPool::from_scores(
                    category,
                    records.iter().map(|r| (r.id, r.scores[k], r.labels.contains(&category))),
                )
            }
        }
    }

    pub fn require_category(&self, category: CategoryId) -> anyhow::Result<()> {
        if self.categories().contains(&category) {
            Ok(())
        } else {
            Err(Exit::config(format!("--category {category} is not in the label space")))
        }
    }
}
