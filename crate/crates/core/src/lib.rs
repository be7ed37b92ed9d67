//! Evaluation and training toolkit for long-tailed detection and recognition.
//!
//! The crate is organised around the retrieval problem of a single category:
//! an [`EvalPool`](detection::EvalPool) of scored positives and negatives. Detection
//! output is converted into pools by [`detection`], scored by [`metrics`] and
//! [`sampled_ap`], while [`longtail`] and [`trainer`] provide the synthetic
//! long-tail benchmark and the training schemata evaluated on it.

pub mod detection;
pub mod error;
pub mod io;
pub mod longtail;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod sampled_ap;
pub mod trainer;

pub use detection::{
    build_eval_pool, iou, match_detections, BoundingBox, CategoryId, Detection, EvalPool, FrameKey, GroundTruth,
    GroundTruthInstance, MatchResult, Origin, ScoredExample,
};
pub use error::{Error, Result};
pub use metrics::{
    average_precision, frame_ap, mean_ap, pr_curve, random_baseline_ap, roc_auc, CategoryScore, PrPoint,
};
pub use sampled_ap::{msap, sampled_ap, sap_exact_small, stability_profile, SapConfig, SapResult};
