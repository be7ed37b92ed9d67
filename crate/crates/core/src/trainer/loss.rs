//! Per-category logistic losses.
//!
//! Both losses are averaged over the active categories of an example. The
//! gradient with respect to the logit is computed in closed form from the
//! unclamped probability; only the logarithm sees the clamped value.

use serde::{Deserialize, Serialize};

/// Activations are kept this far from 0 and 1 before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Focusing parameter used by the focal-loss baseline.
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Focal { gamma: f64 },
}

impl LossKind {
    fn gamma(self) -> f64 {
        match self {
            LossKind::Bce => 0.0,
            LossKind::Focal { gamma } => gamma,
        }
    }
}

/// Loss of one category and its derivative with respect to `p_t`.
fn focal_pt(pt: f64, gamma: f64) -> (f64, f64) {
    let ptc = pt.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let log_pt = ptc.ln();
    let q = 1.0 - ptc;
    if gamma == 0.0 {
        return (-log_pt, -1.0 / ptc);
    }
    let loss = -q.powf(gamma) * log_pt;
    let dpt = gamma * q.powf(gamma - 1.0) * log_pt - q.powf(gamma) / ptc;
    (loss, dpt)
}

/// Loss of one category and its derivative with respect to the logit,
/// given `p = sigmoid(z)`.
pub(crate) fn logit_term(p: f64, y: bool, kind: LossKind) -> (f64, f64) {
    let gamma = kind.gamma();
    let pt = if y { p } else { 1.0 - p };
    let (loss, _) = focal_pt(pt, gamma);
    // dL/dz = s · pt(1-pt) · dL/dpt, written to stay finite as pt -> 1
    let q = 1.0 - pt;
    let log_pt = pt.clamp(PROB_EPS, 1.0).ln();
    let inner = if gamma == 0.0 { -q } else { gamma * pt * q.powf(gamma) * log_pt - q.powf(gamma + 1.0) };
    let dz = if y { inner } else { -inner };
    (loss, dz)
}

/// Scalar loss and its gradient with respect to the probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn prob_loss(probs: &[f64], labels: &[bool], kind: LossKind) -> ProbLoss {
    assert_eq!(probs.len(), labels.len(), "probability and label lengths differ");
    let k = probs.len() as f64;
    let gamma = kind.gamma();
    let mut loss = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let pt = if y { p } else { 1.0 - p };
            let (l, dpt) = focal_pt(pt, gamma);
            loss += l;
            let inside = pt > PROB_EPS && pt < 1.0 - PROB_EPS;
            let dpt = if inside { dpt } else { 0.0 };
            (if y { dpt } else { -dpt }) / k
        })
        .collect();
    ProbLoss { loss: loss / k, grad }
}

/// Mean binary cross-entropy over categories.
pub fn bce_loss(probs: &[f64], labels: &[bool]) -> ProbLoss {
    prob_loss(probs, labels, LossKind::Bce)
}

/// Mean focal loss `-(1-p_t)^gamma log p_t` over categories.
pub fn focal_loss(probs: &[f64], labels: &[bool], gamma: f64) -> ProbLoss {
    prob_loss(probs, labels, LossKind::Focal { gamma })
}
