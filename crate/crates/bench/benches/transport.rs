use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use consensus_core::characteristics::exact_density_field;
use consensus_core::characteristics::KernelFlow;
use consensus_core::pde::{advance_interval, TransportOptions};
use consensus_core::velocity::LinearPath;
use consensus_core::verify::Setup;

fn interval(c: &mut Criterion) {
    let mut group = c.benchmark_group("advance_interval_0.01");
    for n in [100, 200, 400] {
        let setup = Setup::single_agent(n);
        let grid = setup.grid().unwrap();
        let rho = setup.initial_field(&grid);
        let path = LinearPath::fixed(setup.positions.clone());
        let opts = TransportOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| advance_interval(&rho, &setup.model, &path, 0.0, 0.01, &opts).unwrap())
        });
    }
    group.finish();
}

fn characteristics(c: &mut Criterion) {
    let setup = Setup::single_agent(100);
    let grid = setup.grid().unwrap();
    let path = LinearPath::fixed(setup.positions.clone());
    let flow = KernelFlow::new(&setup.model, &path);
    let profile = setup.density.profile();
    c.bench_function("exact_density_field_100_t0.1", |b| {
        b.iter(|| exact_density_field(&grid, &profile, &flow, 0.1, setup.h_ode).unwrap())
    });
}

criterion_group!(benches, interval, characteristics);
criterion_main!(benches);
