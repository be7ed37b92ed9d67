//! Desk-scale training: a small feature extractor with a linear multi-label
//! head, SGD, and the head-to-tail transfer schema with its baselines.
//!
//! The two-stage schema trains extractor and classifier on examples of the
//! head categories only (tail logits masked out of the loss), then freezes
//! the extractor and retrains a fresh classifier over every category on the
//! oversampled training set.

mod eval;
mod loss;
mod model;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use eval::{
    evaluate_model, evaluate_predictions, predict, reference_split, CategoryEval, EvalReport, GroupSummary,
};
pub use loss::{bce_loss, focal_loss, LossKind, ProbLoss, DEFAULT_FOCAL_GAMMA, PROB_EPS};
pub use model::{embed, forward, loss_and_grad, sigmoid, Backbone, LossValue, Matrix, ModelDims, ModelParams};

use crate::detection::CategoryId;
use crate::error::{Error, Result};
use crate::longtail::{oversample_balance, FeatureDataset, HeadTailSplit};
use crate::rng;
use model::{accumulate_example, Workspace};

/// Learning rate as a function of training progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `base`, multiplied by `factor` once `drop_at` of the steps are done.
    StepDrop { base: f64, drop_at: f64, factor: f64 },
    /// Linear interpolation from `start` at the first step to `end` at the
    /// last.
    Linear { start: f64, end: f64 },
}

impl LrSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::StepDrop { base, drop_at, factor } => {
                if (step as f64) < drop_at * total as f64 {
                    base
                } else {
                    base * factor
                }
            }
            LrSchedule::Linear { start, end } => {
                if total <= 1 {
                    start
                } else {
                    start + (end - start) * step as f64 / (total - 1) as f64
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::StepDrop { base, drop_at, factor } => {
                base > 0.0 && factor > 0.0 && (0.0..=1.0).contains(&drop_at)
            }
            LrSchedule::Linear { start, end } => start > 0.0 && end > 0.0,
        };
        if ok && self.at(0, 1).is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!("learning rates must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub schedule: LrSchedule,
}

/// How many examples make up one epoch when training on an index multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochSize {
    /// One full pass over the multiset, duplicates included.
    Multiset,
    /// As many draws as there are distinct examples; duplicates stream
    /// through consecutive epochs, so oversampling changes the mix but not the
    /// number of steps.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    /// End-to-end training: baselines and the first stage.
    pub stage1: StageConfig,
    /// Classifier retraining.
    pub stage2: StageConfig,
    pub batch_size: usize,
    pub epoch_size: EpochSize,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Focusing parameter used by the focal-loss variant.
    pub focal_gamma: f64,
    /// Keep the extractor fixed while retraining the classifier.
    pub freeze_backbone: bool,
    /// Retrain the classifier on the oversampled set.
    pub balance_stage2: bool,
    /// Start stage 2 from the stage-1 classifier instead of a zero one.
    pub warm_start_stage2: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 64,
            embedding_dim: 32,
            stage1: StageConfig {
                epochs: 30,
                schedule: LrSchedule::StepDrop { base: 0.05, drop_at: 0.9, factor: 0.1 },
            },
            stage2: StageConfig { epochs: 30, schedule: LrSchedule::Linear { start: 0.2, end: 0.02 } },
            batch_size: 128,
            epoch_size: EpochSize::Distinct,
            momentum: 0.9,
            seed: 0,
            loss: LossKind::Bce,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            freeze_backbone: true,
            balance_stage2: true,
            warm_start_stage2: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.schedule.validate()?;
        self.stage2.schedule.validate()?;
        if self.batch_size == 0 || self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::config("batch size and layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::config("focal gamma must be non-negative"));
        }
        if let LossKind::Focal { gamma } = self.loss {
            if gamma < 0.0 {
                return Err(Error::config("focal gamma must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn dims(&self, dataset: &FeatureDataset) -> ModelDims {
        ModelDims {
            input: dataset.feature_dim,
            hidden: self.hidden_dim,
            embedding: self.embedding_dim,
            categories: dataset.n_categories,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// SGD steps taken so far in this run.
    pub steps: usize,
    pub mean_loss: f64,
    pub last_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub name: String,
    pub examples: usize,
    pub trained_backbone: bool,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub stages: Vec<StageLog>,
}

/// What one call to [`sgd_train`] optimises.
#[derive(Debug, Clone, Copy)]
pub struct SgdRun<'a> {
    pub stage: &'a StageConfig,
    pub loss: LossKind,
    pub mask: &'a [bool],
    pub train_backbone: bool,
    /// Distinguishes the shuffling stream of this run from other runs under
    /// the same seed.
    pub stream: u64,
}

fn label_vector(labels: &[CategoryId], k: usize) -> Vec<bool> {
    let mut y = vec![false; k];
    for c in labels {
        y[c.0 as usize] = true;
    }
    y
}

/// Mini-batch SGD with momentum over `indices` (a multiset of example
/// positions), drawn as a stream that is reshuffled whenever it runs out.
pub fn sgd_train(
    params: ModelParams,
    dataset: &FeatureDataset,
    indices: &[usize],
    config: &TrainConfig,
    run: SgdRun<'_>,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = params.dims();
    if dims.input != dataset.feature_dim {
        return Err(Error::DimMismatch { expected: dims.input, got: dataset.feature_dim });
    }
    if run.mask.len() != dims.categories || dataset.n_categories != dims.categories {
        return Err(Error::DimMismatch { expected: dims.categories, got: run.mask.len() });
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::config(format!("example index {i} out of range")));
    }

    let labels: Vec<Vec<bool>> = dataset.examples.iter().map(|e| label_vector(&e.labels, dims.categories)).collect();
    let mut params = params;
    let mut velocity = ModelParams::zeros(dims);
    let mut grad = ModelParams::zeros(dims);
    let mut ws = Workspace::new(dims);
    let mut order = indices.to_vec();
    let mut r = rng::derived(config.seed, run.stream);

    let batch = config.batch_size;
    let epoch_len = match config.epoch_size {
        EpochSize::Multiset => order.len(),
        EpochSize::Distinct => indices.iter().collect::<BTreeSet<_>>().len(),
    };
    let steps_per_epoch = epoch_len.div_ceil(batch);
    let total_steps = steps_per_epoch * run.stage.epochs;
    let n_blocks = if run.train_backbone { 6 } else { 6 - ModelParams::BACKBONE_BLOCKS };
    let mut step = 0;
    let mut cursor = order.len();
    let mut chunk = Vec::with_capacity(batch);
    let mut log = Vec::with_capacity(run.stage.epochs);

    for epoch in 0..run.stage.epochs {
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        let mut remaining = epoch_len;
        while remaining > 0 {
            chunk.clear();
            while chunk.len() < batch.min(remaining) {
                if cursor == order.len() {
                    order.shuffle(&mut r);
                    cursor = 0;
                }
                let take = (batch.min(remaining) - chunk.len()).min(order.len() - cursor);
                chunk.extend_from_slice(&order[cursor..cursor + take]);
                cursor += take;
            }
            remaining -= chunk.len();
            for block in grad.blocks_mut() {
                block.iter_mut().for_each(|g| *g = 0.0);
            }
            let weight = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in &chunk {
                loss += accumulate_example(
                    &params,
                    &dataset.examples[i].features,
                    &labels[i],
                    run.mask,
                    run.loss,
                    run.train_backbone,
                    weight,
                    &mut ws,
                    &mut grad,
                );
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            epoch_loss += loss * chunk.len() as f64;

            lr = run.stage.schedule.at(step, total_steps);
            let skip = 6 - n_blocks;
            let grads = grad.blocks();
            for ((p, v), g) in params.blocks_mut().into_iter().zip(velocity.blocks_mut()).zip(grads).skip(skip) {
                for ((pw, vw), gw) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vw = config.momentum * *vw - lr * gw;
                    *pw += *vw;
                }
            }
            step += 1;
        }
        log.push(EpochLog { epoch, steps: step, mean_loss: epoch_loss / epoch_len as f64, last_lr: lr });
    }
    if !params.all_finite() {
        return Err(Error::NonFiniteLoss { epoch: run.stage.epochs, step, loss: f64::NAN });
    }
    Ok((params, log))
}

/// Training schemata compared against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// End-to-end training on the original distribution.
    BaselinePlain,
    /// End-to-end training on the oversampled set.
    NaiveBalanced,
    /// End-to-end training with focal loss.
    Focal,
    /// Two stages, but the first trains on every category.
    Stage1All,
    /// Two stages, with the extractor updated during the second.
    Stage2FinetuneAll,
    /// Two stages, with the second on the original distribution.
    Stage2Unbalanced,
    TwoStage,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::BaselinePlain,
        Variant::NaiveBalanced,
        Variant::Focal,
        Variant::Stage1All,
        Variant::Stage2FinetuneAll,
        Variant::Stage2Unbalanced,
        Variant::TwoStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselinePlain => "baseline_plain",
            Variant::NaiveBalanced => "naive_balanced",
            Variant::Focal => "focal",
            Variant::Stage1All => "stage1_all",
            Variant::Stage2FinetuneAll => "stage2_finetune_all",
            Variant::Stage2Unbalanced => "stage2_unbalanced",
            Variant::TwoStage => "two_stage",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::config(format!("unknown variant '{s}'")))
    }
}

const STREAM_INIT: u64 = 0;
const STREAM_STAGE1: u64 = 1;
const STREAM_STAGE2: u64 = 2;
const STREAM_BALANCE: u64 = 3;

fn all_mask(k: usize) -> Vec<bool> {
    vec![true; k]
}

fn mask_of(set: &BTreeSet<CategoryId>, k: usize) -> Vec<bool> {
    (0..k).map(|c| set.contains(&CategoryId(c as u32))).collect()
}

fn balanced_indices(dataset: &FeatureDataset, config: &TrainConfig) -> Result<Vec<usize>> {
    oversample_balance(dataset, rng::derive_seed(config.seed, STREAM_BALANCE))
}

/// Single-stage end-to-end training over `indices`.
fn single_stage(
    dataset: &FeatureDataset,
    indices: Vec<usize>,
    config: &TrainConfig,
    loss: LossKind,
    name: &str,
) -> Result<TrainedModel> {
    let dims = config.dims(dataset);
    let init = ModelParams::init(dims, rng::derive_seed(config.seed, STREAM_INIT));
    let mask = all_mask(dims.categories);
    let run = SgdRun { stage: &config.stage1, loss, mask: &mask, train_backbone: true, stream: STREAM_STAGE1 };
    let (params, epochs) = sgd_train(init, dataset, &indices, config, run)?;
    Ok(TrainedModel {
        params,
        stages: vec![StageLog { name: name.into(), examples: indices.len(), trained_backbone: true, epochs }],
    })
}

/// Options of the two-stage family that the ablations toggle.
#[derive(Debug, Clone, Copy)]
struct TwoStageOptions {
    head_only_stage1: bool,
    freeze: bool,
    balance: bool,
}

fn two_stage_with(
    dataset: &FeatureDataset,
    split: &HeadTailSplit,
    config: &TrainConfig,
    opts: TwoStageOptions,
) -> Result<TrainedModel> {
    config.validate()?;
    let dims = config.dims(dataset);
    let k = dims.categories;
    if let Some(c) = split.categories().find(|c| c.0 as usize >= k) {
        return Err(Error::UnknownCategory(c));
    }
    if split.head.is_empty() {
        return Err(Error::EmptyHead);
    }

    // Stage 1: examples with at least one head label, tail logits masked.
    let (stage1_idx, mask1): (Vec<usize>, Vec<bool>) = if opts.head_only_stage1 {
        let idx = dataset
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.labels.iter().any(|c| split.is_head(*c)))
            .map(|(i, _)| i)
            .collect();
        (idx, mask_of(&split.head, k))
    } else {
        ((0..dataset.len()).collect(), all_mask(k))
    };
    if stage1_idx.is_empty() {
        return Err(Error::EmptyHead);
    }
    let init = ModelParams::init(dims, rng::derive_seed(config.seed, STREAM_INIT));
    let run1 =
        SgdRun { stage: &config.stage1, loss: config.loss, mask: &mask1, train_backbone: true, stream: STREAM_STAGE1 };
    let (mut params, log1) = sgd_train(init, dataset, &stage1_idx, config, run1)?;

    // Stage 2: classifier over every category.
    if !config.warm_start_stage2 {
        params.reset_head();
    }
    let stage2_idx = if opts.balance { balanced_indices(dataset, config)? } else { (0..dataset.len()).collect() };
    let mask2 = all_mask(k);
    let run2 = SgdRun {
        stage: &config.stage2,
        loss: config.loss,
        mask: &mask2,
        train_backbone: !opts.freeze,
        stream: STREAM_STAGE2,
    };
    let (params, log2) = sgd_train(params, dataset, &stage2_idx, config, run2)?;

    Ok(TrainedModel {
        params,
        stages: vec![
            StageLog { name: "stage1".into(), examples: stage1_idx.len(), trained_backbone: true, epochs: log1 },
            StageLog {
                name: "stage2".into(),
                examples: stage2_idx.len(),
                trained_backbone: !opts.freeze,
                epochs: log2,
            },
        ],
    })
}

/// Head-to-tail transfer: extractor learned on head categories, classifier
/// retrained on the balanced full training set. Freezing and balancing follow
/// `config`.
pub fn two_stage_train(dataset: &FeatureDataset, split: &HeadTailSplit, config: &TrainConfig) -> Result<TrainedModel> {
    two_stage_with(
        dataset,
        split,
        config,
        TwoStageOptions { head_only_stage1: true, freeze: config.freeze_backbone, balance: config.balance_stage2 },
    )
}

/// Runs one training schema. Every variant shares `config` and its seed.
pub fn run_ablation(
    dataset: &FeatureDataset,
    split: &HeadTailSplit,
    variant: Variant,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let standard = TwoStageOptions { head_only_stage1: true, freeze: true, balance: true };
    match variant {
        Variant::BaselinePlain => {
            single_stage(dataset, (0..dataset.len()).collect(), config, config.loss, variant.name())
        }
        Variant::NaiveBalanced => {
            single_stage(dataset, balanced_indices(dataset, config)?, config, config.loss, variant.name())
        }
        Variant::Focal => single_stage(
            dataset,
            (0..dataset.len()).collect(),
            config,
            LossKind::Focal { gamma: config.focal_gamma },
            variant.name(),
        ),
        Variant::Stage1All => {
            two_stage_with(dataset, split, config, TwoStageOptions { head_only_stage1: false, ..standard })
        }
        Variant::Stage2FinetuneAll => {
            two_stage_with(dataset, split, config, TwoStageOptions { freeze: false, ..standard })
        }
        Variant::Stage2Unbalanced => {
            two_stage_with(dataset, split, config, TwoStageOptions { balance: false, ..standard })
        }
        Variant::TwoStage => two_stage_with(dataset, split, config, standard),
    }
}
