use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mixborrow::importance::{exposure_importance, ConditionalModel, Surface};
use mixborrow::Sampler;
use mixborrow_bench::{lagged_fixture, mim_fixture};
use nalgebra::{DMatrix, DVector};

fn sweeps(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep");
    g.sample_size(20);
    for (name, m) in [("dlnm_polar_m6", Some(6)), ("dlnm_fb_full", None)] {
        let (spec, data) = lagged_fixture(500, 3, 16, m).expect("fixture");
        let mut s = Sampler::new(&spec, &data, 1).expect("sampler");
        for _ in 0..50 {
            s.sweep().expect("burn-in sweep");
        }
        g.bench_function(name, |b| b.iter(|| s.sweep().expect("sweep")));
    }
    let (spec, data) = mim_fixture(200, 2).expect("fixture");
    let mut s = Sampler::new(&spec, &data, 1).expect("sampler");
    g.bench_function("mim_j2", |b| b.iter(|| s.sweep().expect("sweep")));
    g.finish();
}

fn importance(c: &mut Criterion) {
    let n = 1000;
    let x = DMatrix::from_fn(n, 4, |i, j| (((i * 7919 + j * 104_729) % 1000) as f64 / 1000.0 - 0.5) * 3.0);
    c.bench_function("importance_kernel_n1000", |b| {
        b.iter_batched(
            || Surface::Index {
                weights: vec![DVector::from_vec(vec![1.0, 0.5, 0.0, -0.3])],
                curves: vec![Box::new(|v: f64| v.tanh())],
            },
            |s| exposure_importance(&s, &x, 0, &ConditionalModel::default()).expect("importance"),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, sweeps, importance);
criterion_main!(benches);
