//! Per-example gradients for one classifier batch: rayon's default pool, a
//! one-thread pool, and the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texim_core::nn::{Gradients, NnError, RunMode, Tape, Var};
use texim_core::par;
use texim_core::sts::{StsConfig, StsExample, StsInput, StsModel};
use texim_core::training::batch_gradients;

const PIXELS: usize = 64;

fn batch(n: usize) -> Vec<StsExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut image = || StsInput::Pixels((0..PIXELS).map(|_| rng.random::<f64>()).collect());
    (0..n)
        .map(|i| StsExample {
            a: image(),
            b: image(),
            label: (i % 2) as u8,
        })
        .collect()
}

fn example_loss(model: &StsModel, tape: &mut Tape<'_>, i: usize, ex: &StsExample) -> Result<Var, NnError> {
    model
        .loss(tape, ex, &mut RunMode::training(i as u64))
        .map_err(|e| NnError::Input(e.to_string()))
}

fn sequential_gradients(model: &StsModel, items: &[StsExample]) -> (f64, Gradients) {
    let store = model.store();
    let parts = par::map_sequential(items, |i, ex| {
        let mut tape = Tape::new(store);
        let l = example_loss(model, &mut tape, i, ex).unwrap();
        (tape.scalar(l), tape.backward(l))
    });
    let mut total = 0.0;
    let mut grads = Gradients::new(store.len());
    for (l, g) in parts {
        total += l;
        grads.accumulate(&g);
    }
    grads.scale(1.0 / items.len() as f64);
    (total / items.len() as f64, grads)
}

fn parallel_gradients(model: &StsModel, items: &[StsExample]) -> (f64, Gradients) {
    batch_gradients(model.store(), items, |tape, i, ex| example_loss(model, tape, i, ex)).unwrap()
}

fn bench(c: &mut Criterion) {
    let model = StsModel::new(StsConfig::default(), PIXELS, None).unwrap();
    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut group = c.benchmark_group("sts_batch_gradients");
    group.sample_size(10);
    for n in [16usize, 64] {
        let items = batch(n);
        // Index-ordered reduction makes every strategy bit-identical.
        assert_eq!(parallel_gradients(&model, &items), sequential_gradients(&model, &items));
        group.bench_with_input(BenchmarkId::new("rayon_default_pool", n), &items, |b, items| {
            b.iter(|| parallel_gradients(&model, items))
        });
        group.bench_with_input(BenchmarkId::new("rayon_one_thread", n), &items, |b, items| {
            b.iter(|| one_thread.install(|| parallel_gradients(&model, items)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &items, |b, items| {
            b.iter(|| sequential_gradients(&model, items))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
