use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use evopf::acpf::{injections, newton_pf, PfCase, DEFAULT_MAX_ITER, DEFAULT_TOL};
use evopf::bundled;
use evopf::par;
use evopf::recovery::LoadModel;
use evopf::study::{run_cell, Cell, PriceCase, StudySpec};

fn spec() -> StudySpec {
    let loaded = bundled::caiso_day();
    StudySpec::new(bundled::ieee33(), loaded.scenario, loaded.fleets)
}

fn sweep_cells(c: &mut Criterion) {
    let spec = spec();
    let cells: Vec<Cell> = [1u8, 2]
        .iter()
        .flat_map(|&t| {
            [0.0, 0.5].map(|penetration| Cell {
                model: LoadModel::FixedPower,
                penetration,
                price: PriceCase::Tariff(t),
            })
        })
        .collect();
    let mut group = c.benchmark_group("sweep_cells");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", cells.len()), |b| {
        b.iter(|| par::map(&cells, |cell| run_cell(&spec, cell).is_ok()))
    });
    group.bench_function(BenchmarkId::new("sequential", cells.len()), |b| {
        b.iter(|| par::map_sequential(&cells, |cell| run_cell(&spec, cell).is_ok()))
    });
    group.finish();
}

fn nr_hours(c: &mut Criterion) {
    let spec = spec();
    let cell = Cell {
        model: LoadModel::FixedPower,
        penetration: 0.5,
        price: PriceCase::Tariff(2),
    };
    let sol = run_cell(&spec, &cell).expect("bundled cell solves").solution;
    let net = &spec.network;
    let hours: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..sol.horizon())
        .map(|t| {
            let (p, q) = injections(net, &sol.v[t], &sol.theta[t]);
            (p, q, sol.v[t][0])
        })
        .collect();
    let solve = |(p, q, v0): &(Vec<f64>, Vec<f64>, f64)| {
        let case = PfCase::new(net, p.clone(), q.clone(), 0);
        let mut init = vec![1.0; p.len()];
        init[0] = *v0;
        newton_pf(&case, &init, DEFAULT_TOL, DEFAULT_MAX_ITER).map(|r| r.iterations).ok()
    };
    let mut group = c.benchmark_group("nr_hours");
    group.bench_function(BenchmarkId::new("parallel", hours.len()), |b| b.iter(|| par::map(&hours, solve)));
    group.bench_function(BenchmarkId::new("sequential", hours.len()), |b| {
        b.iter(|| par::map_sequential(&hours, solve))
    });
    group.finish();
}

criterion_group!(benches, sweep_cells, nr_hours);
criterion_main!(benches);
