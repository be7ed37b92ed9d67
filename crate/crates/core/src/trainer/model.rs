//! Two-layer tanh feature extractor with a linear multi-label head.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{logit_term, LossKind};
use crate::error::{Error, Result};
use crate::rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn gaussian(rows: usize, cols: usize, scale: f64, r: &mut rng::Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(r);
                scale * z
            })
            .collect::<Vec<f64>>();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = self · x + bias`
    fn affine(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = bias[i] + self.row(i).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out = selfᵀ · g`
    fn transpose_mul(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(i)) {
                    *o += gi * w;
                }
            }
        }
    }

    /// `self += g ⊗ x`
    fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        let cols = self.cols;
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                for (w, v) in self.data[i * cols..(i + 1) * cols].iter_mut().zip(x) {
                    *w += gi * v;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub embedding: usize,
    pub categories: usize,
}

/// Feature extractor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Backbone plus the per-category linear classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub backbone: Backbone,
    /// `categories × embedding`
    pub head: Matrix,
    pub head_bias: Vec<f64>,
}

impl ModelParams {
    /// Scaled Gaussian backbone weights, zero biases and a zero head.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let w1 = Matrix::gaussian(dims.hidden, dims.input, (1.0 / dims.input as f64).sqrt(), &mut r);
        let w2 = Matrix::gaussian(dims.embedding, dims.hidden, (1.0 / dims.hidden as f64).sqrt(), &mut r);
        ModelParams {
            backbone: Backbone { w1, b1: vec![0.0; dims.hidden], w2, b2: vec![0.0; dims.embedding] },
            head: Matrix::zeros(dims.categories, dims.embedding),
            head_bias: vec![0.0; dims.categories],
        }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            backbone: Backbone {
                w1: Matrix::zeros(dims.hidden, dims.input),
                b1: vec![0.0; dims.hidden],
                w2: Matrix::zeros(dims.embedding, dims.hidden),
                b2: vec![0.0; dims.embedding],
            },
            head: Matrix::zeros(dims.categories, dims.embedding),
            head_bias: vec![0.0; dims.categories],
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.backbone.w1.cols,
            hidden: self.backbone.w1.rows,
            embedding: self.backbone.w2.rows,
            categories: self.head.rows,
        }
    }

    pub fn reset_head(&mut self) {
        self.head.data.iter_mut().for_each(|w| *w = 0.0);
        self.head_bias.iter_mut().for_each(|b| *b = 0.0);
    }

    /// Checks that the parameter shapes agree with each other.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let checks = [
            (self.backbone.w1.data.len(), d.hidden * d.input),
            (self.backbone.b1.len(), d.hidden),
            (self.backbone.w2.cols, d.hidden),
            (self.backbone.w2.data.len(), d.embedding * d.hidden),
            (self.backbone.b2.len(), d.embedding),
            (self.head.cols, d.embedding),
            (self.head.data.len(), d.categories * d.embedding),
            (self.head_bias.len(), d.categories),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::DimMismatch { expected, got });
            }
        }
        if !self.all_finite() {
            return Err(Error::config("model parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameter blocks in a fixed order: backbone first, then head.
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            &self.backbone.w1.data,
            &self.backbone.b1,
            &self.backbone.w2.data,
            &self.backbone.b2,
            &self.head.data,
            &self.head_bias,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.backbone.w1.data,
            &mut self.backbone.b1,
            &mut self.backbone.w2.data,
            &mut self.backbone.b2,
            &mut self.head.data,
            &mut self.head_bias,
        ]
    }

    pub const BACKBONE_BLOCKS: usize = 4;

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Activations {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Activations {
    pub fn new(d: ModelDims) -> Self {
        Activations { h1: vec![0.0; d.hidden], h2: vec![0.0; d.embedding], probs: vec![0.0; d.categories] }
    }
}

pub(crate) fn forward_into(params: &ModelParams, x: &[f64], act: &mut Activations) {
    let bb = &params.backbone;
    bb.w1.affine(x, &bb.b1, &mut act.h1);
    act.h1.iter_mut().for_each(|v| *v = v.tanh());
    bb.w2.affine(&act.h1, &bb.b2, &mut act.h2);
    act.h2.iter_mut().for_each(|v| *v = v.tanh());
    params.head.affine(&act.h2, &params.head_bias, &mut act.probs);
    act.probs.iter_mut().for_each(|v| *v = sigmoid(*v));
}

/// Per-category probabilities for one feature vector.
pub fn forward(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    let d = params.dims();
    if features.len() != d.input {
        return Err(Error::DimMismatch { expected: d.input, got: features.len() });
    }
    let mut act = Activations::new(d);
    forward_into(params, features, &mut act);
    Ok(act.probs)
}

/// Embedding produced by the backbone.
pub fn embed(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    let d = params.dims();
    if features.len() != d.input {
        return Err(Error::DimMismatch { expected: d.input, got: features.len() });
    }
    let mut act = Activations::new(d);
    forward_into(params, features, &mut act);
    Ok(act.h2)
}

/// Loss and its gradient with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: ModelParams,
}

/// Scratch buffers for backpropagation.
pub(crate) struct Workspace {
    act: Activations,
    dz: Vec<f64>,
    dh2: Vec<f64>,
    dh1: Vec<f64>,
}

impl Workspace {
    pub fn new(d: ModelDims) -> Self {
        Workspace {
            act: Activations::new(d),
            dz: vec![0.0; d.categories],
            dh2: vec![0.0; d.embedding],
            dh1: vec![0.0; d.hidden],
        }
    }
}

/// Accumulates `weight · ∂loss/∂params` of one example into `grad` and
/// returns its loss. `mask` selects the categories that contribute.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_example(
    params: &ModelParams,
    x: &[f64],
    labels: &[bool],
    mask: &[bool],
    kind: LossKind,
    with_backbone: bool,
    weight: f64,
    ws: &mut Workspace,
    grad: &mut ModelParams,
) -> f64 {
    forward_into(params, x, &mut ws.act);
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return 0.0;
    }
    let scale = weight / active as f64;
    let mut loss = 0.0;
    for c in 0..labels.len() {
        ws.dz[c] = if mask[c] {
            let (l, dz) = logit_term(ws.act.probs[c], labels[c], kind);
            loss += l;
            dz * scale
        } else {
            0.0
        };
    }
    grad.head.add_outer(&ws.dz, &ws.act.h2);
    for (b, g) in grad.head_bias.iter_mut().zip(&ws.dz) {
        *b += g;
    }
    if with_backbone {
        let bb = &params.backbone;
        params.head.transpose_mul(&ws.dz, &mut ws.dh2);
        for (g, h) in ws.dh2.iter_mut().zip(&ws.act.h2) {
            *g *= 1.0 - h * h;
        }
        grad.backbone.w2.add_outer(&ws.dh2, &ws.act.h1);
        for (b, g) in grad.backbone.b2.iter_mut().zip(&ws.dh2) {
            *b += g;
        }
        bb.w2.transpose_mul(&ws.dh2, &mut ws.dh1);
        for (g, h) in ws.dh1.iter_mut().zip(&ws.act.h1) {
            *g *= 1.0 - h * h;
        }
        grad.backbone.w1.add_outer(&ws.dh1, x);
        for (b, g) in grad.backbone.b1.iter_mut().zip(&ws.dh1) {
            *b += g;
        }
    }
    loss * weight / active as f64
}

/// Mean loss over a batch of `(features, labels)` and its full gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[(&[f64], &[bool])],
    mask: &[bool],
    kind: LossKind,
) -> Result<LossValue> {
    let d = params.dims();
    if mask.len() != d.categories {
        return Err(Error::DimMismatch { expected: d.categories, got: mask.len() });
    }
    let mut grad = ModelParams::zeros(d);
    let mut ws = Workspace::new(d);
    let weight = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, y) in batch {
        if x.len() != d.input {
            return Err(Error::DimMismatch { expected: d.input, got: x.len() });
        }
        if y.len() != d.categories {
            return Err(Error::DimMismatch { expected: d.categories, got: y.len() });
        }
        loss += accumulate_example(params, x, y, mask, kind, true, weight, &mut ws, &mut grad);
    }
    Ok(LossValue { loss, grad })
}
