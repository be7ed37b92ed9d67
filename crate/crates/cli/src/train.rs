use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use ltsap::io::{
    read_checkpoint, read_dataset, read_json, write_json, write_predictions, Checkpoint, CheckpointManifest,
    PredictionRecord,
};
use ltsap::longtail::HeadTailSplit;
use ltsap::metrics::DEFAULT_MIN_EXAMPLES;
use ltsap::sampled_ap::DEFAULT_TRIALS;
use ltsap::trainer::{
    evaluate_model, predict, run_ablation, EpochSize, EvalReport, LossKind, LrSchedule, StageConfig, StageLog,
    TrainConfig, Variant,
};
use ltsap::SapConfig;

use crate::manifest::{prepare_out_dir, sha256_hex};
use crate::{Exit, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossArg {
    Bce,
    Focal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochSizeArg {
    Distinct,
    Multiset,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training set, JSON lines.
    #[arg(long)]
    pub data: PathBuf,
    /// baseline_plain, naive_balanced, focal, stage1_all, stage2_finetune_all,
    /// stage2_unbalanced or two_stage.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    /// Head/tail split JSON; required by the two-stage variants.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Datasets to score the final model on; repeatable.
    #[arg(long)]
    pub eval: Vec<PathBuf>,
    /// Balanced samples per category when scoring --eval datasets.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub eval_trials: usize,
    /// Eligibility threshold for the aggregates of --eval reports.
    #[arg(long, default_value_t = DEFAULT_MIN_EXAMPLES)]
    pub min_examples: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 32)]
    pub embedding: usize,
    /// Epochs of end-to-end training (baselines and the first stage).
    #[arg(long, default_value_t = 30)]
    pub epochs1: usize,
    /// Learning rate of end-to-end training.
    #[arg(long, default_value_t = 0.05)]
    pub lr1: f64,
    /// Fraction of end-to-end steps after which the rate drops.
    #[arg(long, default_value_t = 0.9)]
    pub lr1_drop_at: f64,
    /// Factor applied to the rate at the drop.
    #[arg(long, default_value_t = 0.1)]
    pub lr1_drop_factor: f64,
    /// Epochs of classifier retraining.
    #[arg(long, default_value_t = 30)]
    pub epochs2: usize,
    /// Classifier retraining rate at the first step, decayed linearly.
    #[arg(long, default_value_t = 0.2)]
    pub lr2_start: f64,
    /// Classifier retraining rate at the last step.
    #[arg(long, default_value_t = 0.02)]
    pub lr2_end: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Whether an epoch over an oversampled set counts distinct examples or
    /// every copy.
    #[arg(long, value_enum, default_value_t = EpochSizeArg::Distinct)]
    pub epoch_size: EpochSizeArg,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Loss of the non-focal variants.
    #[arg(long, value_enum, default_value_t = LossArg::Bce)]
    pub loss: LossArg,
    /// Focusing parameter of the focal loss.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Start classifier retraining from the first-stage classifier.
    #[arg(long)]
    pub warm_start: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for checkpoint.json and metrics.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            hidden_dim: self.hidden,
            embedding_dim: self.embedding,
            stage1: StageConfig {
                epochs: self.epochs1,
                schedule: LrSchedule::StepDrop {
                    base: self.lr1,
                    drop_at: self.lr1_drop_at,
                    factor: self.lr1_drop_factor,
                },
            },
            stage2: StageConfig {
                epochs: self.epochs2,
                schedule: LrSchedule::Linear { start: self.lr2_start, end: self.lr2_end },
            },
            batch_size: self.batch_size,
            epoch_size: match self.epoch_size {
                EpochSizeArg::Distinct => EpochSize::Distinct,
                EpochSizeArg::Multiset => EpochSize::Multiset,
            },
            momentum: self.momentum,
            seed: self.seed,
            loss: match self.loss {
                LossArg::Bce => LossKind::Bce,
                LossArg::Focal => LossKind::Focal { gamma: self.gamma },
            },
            focal_gamma: self.gamma,
            freeze_backbone: true,
            balance_stage2: true,
            warm_start_stage2: self.warm_start,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to score, JSON lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for predictions.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Evaluation {
    data: PathBuf,
    report: EvalReport,
}

#[derive(Serialize)]
struct Metrics<'a> {
    variant: Variant,
    seed: u64,
    config_hash: &'a str,
    config: &'a TrainConfig,
    split: &'a HeadTailSplit,
    stages: &'a [StageLog],
    evaluations: Vec<Evaluation>,
}

fn needs_split(v: Variant) -> bool {
    !matches!(v, Variant::BaselinePlain | Variant::NaiveBalanced | Variant::Focal)
}

pub fn run_train(args: &TrainArgs) -> anyhow::Result<Outcome> {
    let config = args.config();
    config.validate()?;
    let data = read_dataset(&args.data, None)?;
    let mut inputs = vec![args.data.clone()];
    let split: HeadTailSplit = match &args.split {
        Some(p) => {
            inputs.push(p.clone());
            read_json(p)?
        }
        None if needs_split(args.variant) => {
            return Err(Exit::config(format!("--variant {} needs --split", args.variant)));
        }
        None => HeadTailSplit::all_head(data.categories()),
    };
    let config_json = serde_json::to_string(&config)?;
    let config_hash = sha256_hex(config_json.as_bytes());
    let model = run_ablation(&data, &split, args.variant, &config)?;

    let mut evaluations = Vec::new();
    for path in &args.eval {
        let ds = read_dataset(path, Some(data.n_categories))?;
        inputs.push(path.clone());
        let sap = SapConfig::new(args.eval_trials, args.seed);
        let report = evaluate_model(&model.params, &ds, &sap, &split, args.min_examples)?;
        evaluations.push(Evaluation { data: path.clone(), report });
    }

    prepare_out_dir(&args.out_dir)?;
    let manifest =
        CheckpointManifest { variant: args.variant.name().into(), seed: args.seed, config_hash: config_hash.clone() };
    write_json(&args.out_dir.join("checkpoint.json"), &Checkpoint::new(model.params, manifest))?;
    let metrics = Metrics {
        variant: args.variant,
        seed: args.seed,
        config_hash: &config_hash,
        config: &config,
        split: &split,
        stages: &model.stages,
        evaluations,
    };
    write_json(&args.out_dir.join("metrics.json"), &metrics)?;
    Ok(Outcome {
        out_dir: args.out_dir.clone(),
        inputs,
        outputs: vec!["checkpoint.json".into(), "metrics.json".into()],
    })
}

pub fn run_predict(args: &PredictArgs) -> anyhow::Result<Outcome> {
    let ck = read_checkpoint(&args.checkpoint)?;
    let data = read_dataset(&args.data, Some(ck.dims.categories))?;
    let scores = predict(&ck.params, &data)?;
    let records: Vec<PredictionRecord> = data
        .examples
        .iter()
        .zip(scores)
        .map(|(e, s)| PredictionRecord { id: e.id, labels: e.labels.clone(), scores: s })
        .collect();
    prepare_out_dir(&args.out_dir)?;
    write_predictions(&args.out_dir.join("predictions.jsonl"), &records)?;
    Ok(Outcome {
        out_dir: args.out_dir.clone(),
        inputs: vec![args.checkpoint.clone(), args.data.clone()],
        outputs: vec!["predictions.jsonl".into()],
    })
}
