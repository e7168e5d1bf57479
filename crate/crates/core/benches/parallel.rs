//! Sequential versus rayon-parallel execution of the data-parallel loops:
//! batch gradients during training, dataset scoring, and sequence generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use inpaint_vad::data::{generate_normal_set, synthetic_glyphs, MovingConfig};
use inpaint_vad::eval::{score_dataset, EvalConfig};
use inpaint_vad::model::Variant;
use inpaint_vad::train::{init_params, train, ModelConfig, TrainConfig};
use inpaint_vad::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn small_model() -> ModelConfig {
    ModelConfig { hidden: 8, context_len: 3, bins: 32, decoder_width: 8, meta_hidden: 8, variant: Variant::Full }
}

fn data_config() -> MovingConfig {
    MovingConfig { height: 24, width: 24, digits: 1, sprite_scale: 2, frames: 8, ..MovingConfig::default() }
}

fn bench_train_step(c: &mut Criterion) {
    let data = generate_normal_set(&synthetic_glyphs(), &data_config(), 16, 0, Exec::Sequential).unwrap();
    let mut group = c.benchmark_group("train_batch8_2steps");
    group.sample_size(10);
    for (name, exec) in MODES {
        let config = TrainConfig { steps: 2, batch_size: 8, model: small_model(), exec, ..TrainConfig::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| train::<f32>(&config, &data).unwrap()));
    }
    group.finish();
}

fn bench_scoring(c: &mut Criterion) {
    let data = generate_normal_set(&synthetic_glyphs(), &data_config(), 16, 1, Exec::Sequential).unwrap();
    let hyper = small_model().hyper(24, 24, 1);
    let params = init_params::<f32>(&hyper, 0).unwrap();
    let mut group = c.benchmark_group("score_16_sequences");
    group.sample_size(10);
    for (name, exec) in MODES {
        let config = EvalConfig { exec, ..EvalConfig::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| score_dataset(&params, &data, &config).unwrap()));
    }
    group.finish();
}

fn bench_generation(c: &mut Criterion) {
    let glyphs = synthetic_glyphs();
    let config = MovingConfig::desk();
    let mut group = c.benchmark_group("generate_64_sequences");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_normal_set(&glyphs, &config, 64, 7, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_train_step, bench_scoring, bench_generation);
criterion_main!(benches);
