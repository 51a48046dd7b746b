use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modshadow::experiments::density_experiment;
use modshadow::par::{Execution, Window};
use modshadow::shadowing::FinderBudget;

fn density_batch(c: &mut Criterion) {
    let window = Window::strip(1.0, 2.0).unwrap();
    let budget = FinderBudget::default();
    let mut group = c.benchmark_group("density_batch");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), 32), &exec, |b, &exec| {
            b.iter(|| density_experiment(&window, 0.2, 32, 7, &budget, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, density_batch);
criterion_main!(benches);
