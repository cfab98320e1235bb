//! Parallel versus sequential execution of the data-parallel kernels: one
//! fine-tuning epoch (batched forward/backward over fixed row chunks) and
//! batched inference.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fgl_core::fgl::{fine_tune, TrainConfig};
use fgl_core::neural::{ForecastModel, ModelConfig};
use fgl_core::parallel;

const ROWS: usize = 512;
const LOOKBACK: usize = 8;

fn setup(hidden: usize) -> (ForecastModel, Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = ModelConfig {
        hidden,
        bins: 25,
        ..ModelConfig::default()
    };
    let model = ForecastModel::new(cfg, &mut rng).unwrap();
    let inputs = Array2::from_shape_fn((ROWS, LOOKBACK), |_| rng.gen_range(0.3..1.3));
    let labels = (0..ROWS).map(|_| rng.gen_range(0..25)).collect();
    (model, inputs, labels)
}

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", false), ("parallel", true)]
}

fn bench_fine_tune(c: &mut Criterion) {
    let mut group = c.benchmark_group("fine_tune_epoch");
    group.sample_size(10);
    for hidden in [32, 128] {
        let (model, inputs, labels) = setup(hidden);
        let cfg = TrainConfig::default();
        for (name, on) in modes() {
            parallel::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(name, hidden), &hidden, |b, _| {
                b.iter(|| black_box(fine_tune(&model, inputs.view(), &labels, 1, &cfg, 0).unwrap()))
            });
        }
    }
    parallel::set_enabled(true);
    group.finish();
}

fn bench_inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("predict_logits");
    for hidden in [32, 128] {
        let (model, inputs, _) = setup(hidden);
        for (name, on) in modes() {
            parallel::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(name, hidden), &hidden, |b, _| {
                b.iter(|| black_box(model.predict_logits(inputs.view()).unwrap()))
            });
        }
    }
    parallel::set_enabled(true);
    group.finish();
}

criterion_group!(benches, bench_fine_tune, bench_inference);
criterion_main!(benches);
