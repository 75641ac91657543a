use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ratlab_core::encoders::GruEncoder;
use ratlab_core::tensor::{ParamStore, Rng, Tape, Tensor};

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = Rng::new(1);
    for n in [16, 64, 256] {
        let a = random(&[n, n], &mut rng);
        let b = random(&[n, n], &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.constant(a.clone());
                let y = tape.constant(b.clone());
                black_box(tape.matmul(x, y).unwrap());
            })
        });
    }
    group.finish();
}

fn gru(c: &mut Criterion) {
    let mut group = c.benchmark_group("gru");
    let mut rng = Rng::new(2);
    let mut store = ParamStore::new();
    let enc = GruEncoder::new(&mut store, "gru", 16, 16, &mut rng);
    let inputs = random(&[32, 100, 16], &mut rng);
    group.bench_function("forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let x = tape.constant(inputs.clone());
            black_box(enc.forward(&mut tape, &bound, x).unwrap());
        })
    });
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, true);
            let x = tape.constant(inputs.clone());
            let h = enc.forward(&mut tape, &bound, x).unwrap();
            let loss = tape.sum_all(h);
            black_box(tape.backward(loss).unwrap());
        })
    });
    group.finish();
}

criterion_group!(benches, matmul, gru);
criterion_main!(benches);
