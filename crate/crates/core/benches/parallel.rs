use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use softbound::bounds::BoundKind;
use softbound::synth::{run_experiment, DirichletSpec};
use softbound::Exec;

fn synthetic_regions(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_experiment");
    group.sample_size(10);
    for k in [16usize, 128] {
        let spec = DirichletSpec::from_mu_max(k, 0.5, 0, 1).unwrap();
        let kinds: Vec<BoundKind> = BoundKind::ALL
            .into_iter()
            .filter(|b| b.applicable(k))
            .collect();
        for (name, exec) in [
            ("sequential", Exec::Sequential),
            ("parallel", Exec::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(name, k), &exec, |b, &exec| {
                b.iter(|| run_experiment(black_box(&spec), 1.0, 32, 500, &kinds, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, synthetic_regions);
criterion_main!(benches);
