use criterion::{criterion_group, criterion_main, Criterion};

use consensus_core::pde::TransportOptions;
use consensus_core::strategy::{brute_force_direction, greedy_direction, Snapshot};
use consensus_core::verify::GradientSetup;

fn decisions(c: &mut Criterion) {
    let gs = GradientSetup::single_agent(200);
    let grid = gs.setup.grid().unwrap();
    let rho = gs.setup.initial_field(&grid);
    let snap = Snapshot {
        rho: &rho,
        positions: &gs.setup.positions,
        t: 0.0,
    };
    let model = &gs.setup.model;
    c.bench_function("greedy_direction_200", |b| {
        b.iter(|| greedy_direction(&snap, 0, model, &gs.weight, gs.speed_cap, None).unwrap())
    });
    let opts = TransportOptions::default();
    c.bench_function("brute_force_16_200", |b| {
        b.iter(|| {
            brute_force_direction(&snap, 0, model, &gs.weight, gs.speed_cap, 0.01, 16, &opts)
                .unwrap()
        })
    });
}

criterion_group!(benches, decisions);
criterion_main!(benches);
