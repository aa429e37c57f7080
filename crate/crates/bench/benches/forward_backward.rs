use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deari::binder::Binder;
use deari::data::prepare;
use deari::harness::{synth_generate, SynthSpec};
use deari::{Graph, Model, ModelConfig};

fn batch() -> deari::SeriesBatch {
    let spec = SynthSpec {
        samples: 32,
        steps: 24,
        features: 8,
        ..SynthSpec::default()
    };
    let data = prepare(&synth_generate(&spec, 1).unwrap(), 0.1, 1, 0.0, 0.0).unwrap();
    data.batch
}

fn forward_backward(c: &mut Criterion) {
    let batch = batch();
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    for variant in ["brits", "deari", "deari+dml"] {
        for layers in [1, 2, 3] {
            if variant == "brits" && layers > 1 {
                continue;
            }
            let cfg = ModelConfig::new(variant.parse().unwrap(), 8, 32, layers);
            let model = Model::init(cfg, 0).unwrap();
            group.bench_with_input(BenchmarkId::new(variant, layers), &layers, |b, _| {
                b.iter(|| {
                    let g = Graph::new();
                    let p = Binder::frozen(&g, &model.params);
                    let loss = model.forward(&p, black_box(&batch), 1).unwrap().loss;
                    black_box(g.backward(loss).unwrap());
                })
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let batch = batch();
    let model = Model::init(ModelConfig::new("bayesian-deari".parse().unwrap(), 8, 32, 2), 0).unwrap();
    let mut group = c.benchmark_group("uncertainty");
    group.sample_size(10);
    group.bench_function("n_sim=10", |b| {
        b.iter(|| black_box(model.uncertainty(black_box(&batch), 10, 0).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, forward_backward, monte_carlo);
criterion_main!(benches);
