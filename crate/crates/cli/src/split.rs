use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ltsap::io::{read_json, write_json};
use ltsap::longtail::{split_head_tail, DEFAULT_TAU};
use ltsap::CategoryId;

use crate::manifest::prepare_out_dir;
use crate::{Exit, Outcome};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    /// AP report (eval.json or sap.json) of the baseline on its training data.
    #[arg(long)]
    pub train_report: PathBuf,
    /// AP report of the same model on held-out data.
    #[arg(long)]
    pub val_report: PathBuf,
    /// A category is tail when train AP minus validation AP is at most this.
    #[arg(long, default_value_t = DEFAULT_TAU, allow_negative_numbers = true)]
    pub tau: f64,
    /// Directory for split.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Deserialize)]
struct ApEntry {
    category: CategoryId,
    ap: Option<f64>,
}

#[derive(Deserialize)]
struct ApReport {
    per_category: Vec<ApEntry>,
}

#[derive(Serialize)]
struct Gap {
    category: CategoryId,
    train_ap: Option<f64>,
    val_ap: Option<f64>,
    gap: Option<f64>,
}

#[derive(Serialize)]
struct SplitFile {
    head: Vec<CategoryId>,
    tail: Vec<CategoryId>,
    tau: f64,
    gaps: Vec<Gap>,
}

fn ap_map(path: &Path) -> anyhow::Result<BTreeMap<CategoryId, Option<f64>>> {
    let report: ApReport = read_json(path)?;
    Ok(report.per_category.into_iter().map(|e| (e.category, e.ap)).collect())
}

pub fn run(args: &SplitArgs) -> anyhow::Result<Outcome> {
    if !args.tau.is_finite() {
        return Err(Exit::config("--tau must be finite"));
    }
    let train = ap_map(&args.train_report)?;
    let val = ap_map(&args.val_report)?;
    let both = |c: &CategoryId| train.get(c).copied().flatten().zip(val.get(c).copied().flatten());
    let judged: Vec<(CategoryId, (f64, f64))> =
        train.keys().chain(val.keys()).filter_map(|c| both(c).map(|v| (*c, v))).collect();
    let pick = |i: usize| -> BTreeMap<CategoryId, f64> {
        judged.iter().map(|(c, v)| (*c, if i == 0 { v.0 } else { v.1 })).collect()
    };
    let mut split = split_head_tail(&pick(0), &pick(1), args.tau)?;
    // a category without an AP on either side cannot be judged; it is tail
    split.tail.extend(train.keys().chain(val.keys()).filter(|c| both(c).is_none()));
    if split.head.is_empty() && split.tail.is_empty() {
        return Err(Exit::empty("the reports contain no categories"));
    }

    let mut categories: Vec<CategoryId> = train.keys().chain(val.keys()).copied().collect();
    categories.sort_unstable();
    categories.dedup();
    let gaps = categories
        .into_iter()
        .map(|c| {
            let (t, v) = (train.get(&c).copied().flatten(), val.get(&c).copied().flatten());
            Gap { category: c, train_ap: t, val_ap: v, gap: t.zip(v).map(|(a, b)| a - b) }
        })
        .collect();
    let file = SplitFile {
        head: split.head.into_iter().collect(),
        tail: split.tail.into_iter().collect(),
        tau: args.tau,
        gaps,
    };
    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("split.json"), &file)?;
    Ok(Outcome {
        out_dir: args.out_dir.clone(),
        inputs: vec![args.train_report.clone(), args.val_report.clone()],
        outputs: vec!["split.json".into()],
    })
}
