use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use ltsap::io::{read_json, write_atomic, write_json};
use ltsap::longtail::HeadTailSplit;
use ltsap::metrics::DEFAULT_MIN_EXAMPLES;
use ltsap::sampled_ap::DEFAULT_TRIALS;
use ltsap::{average_precision, frame_ap, rng, roc_auc, sampled_ap, stability_profile, CategoryId, SapConfig};

use crate::manifest::prepare_out_dir;
use crate::pools::{PoolArgs, Source};
use crate::{Exit, Outcome};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: PoolArgs,
    /// Categories with fewer positives are left out of mAP.
    #[arg(long, default_value_t = DEFAULT_MIN_EXAMPLES)]
    pub min_examples: usize,
    /// Directory for eval.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SapArgs {
    #[command(flatten)]
    pub input: PoolArgs,
    /// Balanced samples drawn per category.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Categories with fewer positives are left out of mSAP.
    #[arg(long, default_value_t = DEFAULT_MIN_EXAMPLES)]
    pub min_examples: usize,
    /// Keep unmatched detections out of the negative pool.
    #[arg(long)]
    pub exclude_background: bool,
    /// Head/tail split JSON; adds all/head/tail aggregates.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Include every trial's AP in the report.
    #[arg(long)]
    pub trial_aps: bool,
    /// Directory for sap.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub input: PoolArgs,
    /// Category whose pool is profiled.
    #[arg(long)]
    pub category: u32,
    /// Trial counts to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 15, 20, 40])]
    pub trials: Vec<usize>,
    /// Independent SAP computations per trial count.
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep unmatched detections out of the negative pool.
    #[arg(long)]
    pub exclude_background: bool,
    /// Directory for stability.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub category: CategoryId,
    pub n_pos: usize,
    pub n_neg: usize,
    pub ap: Option<f64>,
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub map: Option<f64>,
    pub msap: Option<f64>,
    pub eligible_categories: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub mode: String,
    pub iou_threshold: Option<f64>,
    pub min_examples: usize,
    pub per_category: Vec<EvalRecord>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SapRecord {
    pub category: CategoryId,
    pub n_pos: usize,
    pub n_neg: usize,
    pub ap: Option<f64>,
    pub sap_mean: Option<f64>,
    pub sap_std: Option<f64>,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_aps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Groups {
    pub all: Aggregate,
    pub tail: Aggregate,
    pub head: Aggregate,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SapFile {
    pub mode: String,
    pub n_trials: usize,
    pub seed: u64,
    pub include_background: bool,
    pub min_examples: usize,
    pub per_category: Vec<SapRecord>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Groups>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate<'a>(records: impl Iterator<Item = &'a SapRecord> + Clone, min_examples: usize) -> Aggregate {
    let eligible = records.filter(|r| r.n_pos >= min_examples.max(1) && r.sap_mean.is_some());
    Aggregate {
        map: mean(eligible.clone().filter_map(|r| r.ap)),
        msap: mean(eligible.clone().filter_map(|r| r.sap_mean)),
        eligible_categories: eligible.count(),
    }
}

pub fn run_eval(args: &EvalArgs) -> anyhow::Result<Outcome> {
    let (source, inputs) = Source::load(&args.input)?;
    let mut per_category = Vec::new();
    for c in source.categories() {
        let pool = source.pool(c)?;
        let ap = match &source {
            _ if pool.n_pos() == 0 => None,
            Source::Detection { gt, dets, iou } => Some(frame_ap(gt, dets, c, *iou)?),
            Source::Classification { .. } => Some(average_precision(&pool)?),
        };
        let roc = if pool.n_pos() > 0 && pool.n_neg() > 0 { Some(roc_auc(&pool)?) } else { None };
        per_category.push(EvalRecord { category: c, n_pos: pool.n_pos(), n_neg: pool.n_neg(), ap, roc_auc: roc });
    }
    let eligible: Vec<f64> =
        per_category.iter().filter(|r| r.n_pos >= args.min_examples.max(1)).filter_map(|r| r.ap).collect();
    if eligible.is_empty() {
        return Err(Exit::empty(format!("no category has at least {} positives", args.min_examples)));
    }
    let report = EvalFile {
        mode: source.mode().into(),
        iou_threshold: matches!(source, Source::Detection { .. }).then_some(args.input.iou),
        min_examples: args.min_examples,
        aggregate: Aggregate { map: mean(eligible.iter().copied()), msap: None, eligible_categories: eligible.len() },
        per_category,
    };
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("eval.json"), &report)?;
    Ok(Outcome { out_dir: args.out_dir.clone(), inputs, outputs: vec!["eval.json".into()] })
}

pub fn run_sap(args: &SapArgs) -> anyhow::Result<Outcome> {
    let (source, mut inputs) = Source::load(&args.input)?;
    if args.trials == 0 {
        return Err(Exit::config("--trials must be at least 1"));
    }
    let split: Option<HeadTailSplit> = match &args.split {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_json(p)?)
        }
        None => None,
    };

    let mut per_category = Vec::new();
    for c in source.categories() {
        let pool = source.pool(c)?;
        let head = split.as_ref().map(|s| s.is_head(c));
        if pool.n_pos() == 0 {
            per_category.push(SapRecord {
                category: c,
                n_pos: 0,
                n_neg: pool.n_neg(),
                ap: None,
                sap_mean: None,
                sap_std: None,
                degenerate: false,
                head,
                trial_aps: None,
            });
            continue;
        }
        let config = SapConfig {
            n_trials: args.trials,
            seed: rng::derive_seed(args.seed, u64::from(c.0)),
            include_background: !args.exclude_background,
        };
        let sap = sampled_ap(&pool, &config)?;
        per_category.push(SapRecord {
            category: c,
            n_pos: pool.n_pos(),
            n_neg: pool.n_neg(),
            ap: Some(average_precision(&pool)?),
            sap_mean: Some(sap.mean),
            sap_std: Some(sap.std),
            degenerate: sap.degenerate,
            head,
            trial_aps: args.trial_aps.then_some(sap.trial_aps),
        });
    }

    let all = aggregate(per_category.iter(), args.min_examples);
    if all.eligible_categories == 0 {
        return Err(Exit::empty(format!("no category has at least {} positives", args.min_examples)));
    }
    let groups = split.as_ref().map(|s| Groups {
        all: aggregate(per_category.iter(), args.min_examples),
        tail: aggregate(per_category.iter().filter(|r| s.tail.contains(&r.category)), args.min_examples),
        head: aggregate(per_category.iter().filter(|r| s.is_head(r.category)), args.min_examples),
    });
    let report = SapFile {
        mode: source.mode().into(),
        n_trials: args.trials,
        seed: args.seed,
        include_background: !args.exclude_background,
        min_examples: args.min_examples,
        per_category,
        aggregate: all,
        groups,
    };
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("sap.json"), &report)?;
    Ok(Outcome { out_dir: args.out_dir.clone(), inputs, outputs: vec!["sap.json".into()] })
}

pub fn run_stability(args: &StabilityArgs) -> anyhow::Result<Outcome> {
    let (source, inputs) = Source::load(&args.input)?;
    let category = CategoryId(args.category);
    source.require_category(category)?;
    if args.trials.contains(&0) {
        return Err(Exit::config("--trials values must be at least 1"));
    }
    let pool = source.pool(category)?;
    let rows = stability_profile(&pool, &args.trials, args.repeats, args.seed, !args.exclude_background)?;
    let mut csv = String::from("N,mean,std\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.n_trials, r.mean, r.std)?;
    }
    prepare_out_dir(&args.out_dir)?;
    write_atomic(&args.out_dir.join("stability.csv"), csv.as_bytes())?;
    Ok(Outcome { out_dir: args.out_dir.clone(), inputs, outputs: vec!["stability.csv".into()] })
}
