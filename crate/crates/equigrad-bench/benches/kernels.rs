//! Hot-path benchmarks: the convolution kernel through a full tape cycle,
//! one training step of every procedure, and overlay composition.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use equigrad::data::{compose_overlay, MultiTaskBatch, CANVAS_SIDE};
use equigrad::{train_step, Graph, MultitaskModel, Tensor, TrainerConfig, TrainerKind};

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("valid tensor")
}

fn random_batch(batch: usize, tasks: usize, rng: &mut ChaCha8Rng) -> MultiTaskBatch {
    let side = CANVAS_SIDE;
    let pixels = (0..batch * side * side)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let x = Tensor::new(vec![batch, 1, side, side], pixels).expect("valid batch");
    let labels = (0..tasks)
        .map(|_| (0..batch).map(|_| rng.random_range(0..10)).collect())
        .collect();
    MultiTaskBatch::new(x, labels).expect("valid labels")
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(vec![32, 10, 18, 18], &mut rng);
    let w = random_tensor(vec![20, 10, 5, 5], &mut rng);
    c.bench_function("conv2d forward+backward, 32x10x18x18 by 20x10x5x5", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.leaf(&x).expect("leaf");
            let wv = g.leaf(&w).expect("leaf");
            let y = g.conv2d(xv, wv).expect("conv");
            let root = g.mean(y).expect("mean");
            g.backward(root).expect("backward");
            g.grad(wv).expect("gradient")[0]
        })
    });
}

fn bench_train_steps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = random_batch(16, 2, &mut rng);
    for kind in TrainerKind::ALL {
        let mut config = TrainerConfig::new(kind);
        config.inner_lr = 0.01;
        config.outer_lr = 0.01;
        config.head_lr = 0.01;
        config.batch_size = 16;
        if kind == TrainerKind::FixedWeight {
            config.loss_weights = Some(vec![0.5, 0.5]);
        }
        let mut model =
            MultitaskModel::reference(2, 10, &mut ChaCha8Rng::seed_from_u64(3)).expect("model");
        c.bench_function(&format!("{kind} step, batch 16"), |b| {
            b.iter(|| train_step(&mut model, &batch, &config).expect("step"))
        });
    }
}

fn bench_compose_overlay(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let glyph = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..28 * 28).map(|_| rng.random_range(0.0..1.0)).collect()
    };
    let a = glyph(&mut rng);
    let b = glyph(&mut rng);
    c.bench_function("compose_overlay 28x28 onto 36x36", |b_| {
        b_.iter(|| compose_overlay(&a, &b, (28, 28), (CANVAS_SIDE, CANVAS_SIDE)).expect("overlay"))
    });
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_train_steps,
    bench_compose_overlay
);
criterion_main!(benches);
