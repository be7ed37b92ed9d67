use ltsap::longtail::{synthesize_dataset, HeadTailSplit, SplitFractions, ZipfSpec};
use ltsap::trainer::{evaluate_model, run_ablation, LrSchedule, ModelParams, StageConfig, TrainConfig, Variant};
use ltsap::SapConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn spec(spread: f64, feature_dim: usize, max_count: usize, min_count: usize) -> ZipfSpec {
    ZipfSpec {
        n_categories: 4,
        exponent: 0.2,
        max_count,
        min_count,
        feature_dim,
        cluster_spread: spread,
        multilabel_rate: 0.0,
        seed: 11,
    }
}

#[test]
fn random_network_ranks_near_chance() {
    let data = synthesize_dataset(&spec(1.0, 128, 2000, 1500), &SplitFractions::default()).unwrap();
    let config = TrainConfig::default();
    let mut params = ModelParams::init(config.dims(&data.test), 3);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let scale = (1.0 / config.embedding_dim as f64).sqrt();
    for w in params.head.data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *w = scale * z;
    }
    let split = HeadTailSplit::all_head(data.test.categories());
    let report = evaluate_model(&params, &data.test, &SapConfig::default(), &split, 1).unwrap();
    for c in &report.per_category {
        let sap = c.sap_mean.unwrap();
        assert!((sap - 0.5).abs() <= 0.05, "category {}: sap {sap}", c.category.0);
    }
}

#[test]
fn separable_data_reaches_perfect_sap() {
    let data = synthesize_dataset(&spec(1e-3, 8, 120, 40), &SplitFractions::default()).unwrap();
    let config = TrainConfig {
        stage1: StageConfig { epochs: 150, schedule: LrSchedule::StepDrop { base: 0.1, drop_at: 0.9, factor: 0.1 } },
        ..TrainConfig::default()
    };
    let split = HeadTailSplit::all_head(data.train.categories());
    let model = run_ablation(&data.train, &split, Variant::BaselinePlain, &config).unwrap();
    assert!(model.stages[0].epochs.last().unwrap().mean_loss < 0.01);
    let report = evaluate_model(&model.params, &data.test, &SapConfig::default(), &split, 1).unwrap();
    for c in &report.per_category {
        assert_eq!(c.sap_mean, Some(1.0), "category {}", c.category.0);
        assert_eq!(c.sap_std, Some(0.0));
    }
}
