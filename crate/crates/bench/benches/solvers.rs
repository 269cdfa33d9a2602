use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sgne::diagnostics::Counters;
use sgne::oracle::{approx_pseudogradient_batch, exact_pseudogradient};
use sgne::scenarios::{build_cournot, build_quadratic_kkt, CournotParams, QuadraticParams};
use sgne::solvers::step;
use sgne::splitting::resolvent_b;
use sgne::*;

fn cournot_game() -> GameProblem {
    build_cournot(&CournotParams::default()).unwrap().game
}

fn solver_steps(c: &mut Criterion) {
    let cournot = cournot_game();
    let (quadratic, _) = build_quadratic_kkt(&QuadraticParams { n_players: 10, ..Default::default() }).unwrap();
    let mut group = c.benchmark_group("step");
    for (name, game, steps) in [
        ("cournot", &cournot, StepSizes::uniform3(20, 3e-5, 20.0, 20.0)),
        ("quadratic", &quadratic, StepSizes::uniform(10, 0.1)),
    ] {
        let state = IterateState::new(game, game.start().clone());
        for kind in [SolverKind::Srfb, SolverKind::Sfbf, SolverKind::Seg] {
            let cfg = SolverConfig::new(kind, game.n_players(), 0.7, 0.1, OracleMode::Sa).with_steps(steps.clone());
            group.bench_function(BenchmarkId::new(kind.name(), name), |b| {
                let mut counters = Counters::default();
                b.iter(|| step(game, black_box(&state), &cfg, 0, &mut counters).unwrap())
            });
        }
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let game = cournot_game();
    let x = game.start().as_slice().to_vec();
    c.bench_function("cournot/exact_pseudogradient", |b| b.iter(|| exact_pseudogradient(&game, black_box(&x)).unwrap()));
    let mut group = c.benchmark_group("cournot/saa_batch");
    for batch in [1u64, 16, 256] {
        group.bench_with_input(BenchmarkId::from_parameter(batch), &batch, |b, &s| {
            let mut k = 0;
            b.iter(|| {
                k += 1;
                approx_pseudogradient_batch(&game, black_box(&x), k, s, 1, 0)
            })
        });
    }
    group.finish();
}

fn resolvent(c: &mut Criterion) {
    let game = cournot_game();
    let steps = StepSizes::uniform3(20, 3e-5, 20.0, 20.0);
    let omega = IterateState::new(&game, game.start().clone()).omega;
    c.bench_function("cournot/resolvent_b", |b| b.iter(|| resolvent_b(&game, &steps, black_box(&omega))));
}

criterion_group!(benches, solver_steps, oracles, resolvent);
criterion_main!(benches);
