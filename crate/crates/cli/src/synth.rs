use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use ltsap::io::{write_dataset, write_json};
use ltsap::longtail::{synthesize_dataset, EmptySplit, SplitFractions, ZipfSpec};

use crate::manifest::prepare_out_dir;
use crate::{Exit, Outcome};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of categories.
    #[arg(long, default_value_t = 20)]
    pub categories: usize,
    /// Zipf exponent of the category counts.
    #[arg(long, default_value_t = 1.2)]
    pub zipf_s: f64,
    /// Count of the most frequent category.
    #[arg(long, default_value_t = 2000)]
    pub max_count: usize,
    /// Floor on every category count.
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    /// Dimension of the feature vectors.
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    /// Per-coordinate standard deviation around each category mean.
    #[arg(long, default_value_t = 0.8)]
    pub spread: f64,
    /// Probability of attaching one extra co-occurring label.
    #[arg(long, default_value_t = 0.0)]
    pub multilabel_rate: f64,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.5, 0.25, 0.25])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train.jsonl, val.jsonl, test.jsonl and counts.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct Counts<'a> {
    spec: &'a ZipfSpec,
    fractions: SplitFractions,
    counts: &'a [usize],
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    warnings: &'a [EmptySplit],
}

pub fn run(args: &SynthArgs) -> anyhow::Result<Outcome> {
    let [train, val, test] = args.fractions[..] else {
        return Err(Exit::config("--fractions takes exactly three values"));
    };
    let fractions = SplitFractions { train, val, test };
    if fractions.validate().is_err() {
        return Err(Exit::config(format!("--fractions {train},{val},{test}: values must lie in [0, 1] and sum to 1")));
    }
    let spec = ZipfSpec {
        n_categories: args.categories,
        exponent: args.zipf_s,
        max_count: args.max_count,
        min_count: args.min_count,
        feature_dim: args.feature_dim,
        cluster_spread: args.spread,
        multilabel_rate: args.multilabel_rate,
        seed: args.seed,
    };
    let data = synthesize_dataset(&spec, &fractions)?;
    for w in &data.warnings {
        eprintln!("warning: category {} has only {} examples; some splits lack it", w.category, w.count);
    }

    prepare_out_dir(&args.out_dir)?;
    let mut outputs = Vec::new();
    for (name, ds) in [("train.jsonl", &data.train), ("val.jsonl", &data.val), ("test.jsonl", &data.test)] {
        write_dataset(&args.out_dir.join(name), ds)?;
        outputs.push(name.to_string());
    }
    let counts = Counts {
        spec: &spec,
        fractions,
        counts: &data.counts,
        train: data.train.label_counts(),
        val: data.val.label_counts(),
        test: data.test.label_counts(),
        warnings: &data.warnings,
    };
    write_json(&args.out_dir.join("counts.json"), &counts)?;
    outputs.push("counts.json".into());
    Ok(Outcome { out_dir: args.out_dir.clone(), inputs: Vec::new(), outputs })
}
