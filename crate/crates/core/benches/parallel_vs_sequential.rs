//! Data-parallel hot paths on a one-worker pool against the default pool.
//!
//! A one-worker pool runs the same code in order; build with
//! `--no-default-features` for the plain-iterator fallback with no pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metatrend::indicators::IndicatorConfig;
use metatrend::labeling::LabelingConfig;
use metatrend::market_data::{build_universe, AlignmentPolicy, Universe};
use metatrend::nn::{build_model, loss_and_grads, Arch, Batch, ScaleConfig};
use metatrend::pipeline::stock_datasets;
use metatrend::synth::{generate, Family, SynthSpec};
use metatrend::tensor::NormPolicy;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut out = vec![(
        "1-thread".to_string(),
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap(),
    )];
    if default > 1 {
        out.push((
            format!("{default}-threads"),
            rayon::ThreadPoolBuilder::new()
                .num_threads(default)
                .build()
                .unwrap(),
        ));
    }
    out
}

fn universe() -> Universe {
    build_universe(
        generate(&SynthSpec::new(8, 600, Family::RandomWalk, 1)).unwrap(),
        AlignmentPolicy::Intersect,
    )
    .unwrap()
}

fn dataset_build(c: &mut Criterion) {
    let u = universe();
    let mut g = c.benchmark_group("dataset_build_8x600");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| {
                pool.install(|| {
                    stock_datasets(
                        &u,
                        &LabelingConfig::default(),
                        &IndicatorConfig::default(),
                        NormPolicy::Zscore,
                    )
                    .unwrap()
                })
            })
        });
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let u = universe();
    let ds = stock_datasets(
        &u,
        &LabelingConfig::default(),
        &IndicatorConfig::default(),
        NormPolicy::Zscore,
    )
    .unwrap();
    let examples: Vec<_> = ds
        .values()
        .flat_map(|d| d.examples.iter())
        .take(64)
        .collect();
    let batch = Batch::<f32>::from_examples(examples.iter().copied()).unwrap();
    let mut g = c.benchmark_group("loss_and_grads_batch64");
    g.sample_size(10);
    for arch in Arch::ALL {
        let model = build_model::<f32>(arch, &ScaleConfig::with_divisor(4), 0).unwrap();
        for (name, pool) in pools() {
            g.bench_function(BenchmarkId::new(arch.slug(), &name), |b| {
                b.iter(|| pool.install(|| loss_and_grads(&model, &batch).unwrap()))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, dataset_build, gradients);
criterion_main!(benches);
