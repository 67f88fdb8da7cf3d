use std::hint::black_box;

use chd_bench::{central_free_cell, scenario};
use chd_core::ddqn::{AgentConfig, Trainer};
use chd_core::encoding::{Encoder, MeasurementLog};
use chd_core::propagation::compute_coverage;
use chd_core::{PropagationParams, DEFAULT_DECAY, DEFAULT_EPS_CH};
use criterion::{criterion_group, criterion_main, Criterion};

fn geometry(c: &mut Criterion) {
    let sc = scenario(121, 3);
    let p = central_free_cell(&sc);
    c.bench_function("permissible_set l=15", |b| {
        b.iter(|| sc.map.permissible_set(black_box(p), 15).unwrap())
    });
    let params = PropagationParams::default();
    c.bench_function("compute_coverage 121x121", |b| {
        b.iter(|| compute_coverage(&sc.map, sc.coverage.base_station(), black_box(&params), DEFAULT_EPS_CH).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let sc = scenario(121, 3);
    let p = central_free_cell(&sc);
    let mut log = MeasurementLog::new();
    log.push(p, sc.coverage.rsrp(p).unwrap());
    let mut encoder = Encoder::new(15, DEFAULT_DECAY, DEFAULT_EPS_CH).unwrap();
    c.bench_function("build_state 121 l=15", |b| {
        b.iter(|| encoder.build_state(&sc.map, black_box(p), &log).unwrap())
    });

    let trainer = Trainer::new(AgentConfig::default(), 0).unwrap();
    let net = trainer.policy();
    let state = encoder.build_state(&sc.map, p, &log).unwrap();
    c.bench_function("qnet forward 121 l=15", |b| b.iter(|| net.forward(black_box(&state)).unwrap()));
}

criterion_group!(benches, geometry, network);
criterion_main!(benches);
