//! Sampled AP and the stability profile on one thread versus the whole rayon
//! pool. Build with `--no-default-features` to time the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use ltsap::{rng, sampled_ap, stability_profile, CategoryId, EvalPool, SapConfig};

fn pool(n_pos: usize, n_total: usize) -> EvalPool {
    let mut r = rng::seeded(1);
    EvalPool::from_scores(CategoryId(0), (0..n_total).map(|i| (i as u64, r.random::<f64>(), i < n_pos))).unwrap()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(String, rayon::ThreadPool)> {
    let mut counts = vec![1, rayon::current_num_threads()];
    counts.dedup();
    counts
        .into_iter()
        .map(|n| (format!("threads={n}"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

#[cfg(feature = "parallel")]
fn run_in<R: Send>(mode: &(String, rayon::ThreadPool), f: impl FnOnce() -> R + Send) -> R {
    mode.1.install(f)
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(String, ())> {
    vec![("sequential".into(), ())]
}

#[cfg(not(feature = "parallel"))]
fn run_in<R>(_: &(String, ()), f: impl FnOnce() -> R) -> R {
    f()
}

fn bench_sampled_ap(c: &mut Criterion) {
    let mut group = c.benchmark_group("sampled_ap");
    let config = SapConfig::new(40, 7);
    for (n_pos, n_total) in [(200, 20_000), (2_000, 100_000)] {
        let p = pool(n_pos, n_total);
        for mode in &modes() {
            group.bench_with_input(BenchmarkId::new(mode.0.as_str(), format!("{n_pos}of{n_total}")), &p, |b, p| {
                b.iter(|| run_in(mode, || sampled_ap(p, &config).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_stability(c: &mut Criterion) {
    let mut group = c.benchmark_group("stability_profile");
    group.sample_size(10);
    let p = pool(200, 20_000);
    for mode in &modes() {
        group.bench_function(mode.0.as_str(), |b| {
            b.iter(|| run_in(mode, || stability_profile(&p, &[5, 10, 15, 20, 40], 20, 3, true).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sampled_ap, bench_stability);
criterion_main!(benches);
