//! Single-worker versus full rayon pool on the main solver kernels.
//!
//! Build with `--no-default-features` to time the sequential fallback instead;
//! the pool size then makes no difference.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use delaymp::linearize::{solve_adjoint, Linearization};
use delaymp::models::{LqModel, LqParams};
use delaymp::{
    AnticipatedOptions, BrownianDriver, Conditioner, InitialSegment, RegressionBasis, Setting, TerminalControl, TimeGrid,
};

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let full = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if full > 1 {
        sizes.push(full);
    }
    sizes.into_iter().map(|n| (n, rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap())).collect()
}

fn kernels(c: &mut Criterion) {
    let g = TimeGrid::new(1.0, 0.25, 40).unwrap();
    let paths = 8_000;
    let drv = BrownianDriver::sample(g, paths, 1, 1).unwrap();
    let model = LqModel::new(LqParams::new([0.1, 0.3, 0.2], [0.3, 0.2, 1.0])).unwrap();
    let eta = InitialSegment::constant(&g, &[1.0]).unwrap();
    let xi = TerminalControl::from_fn(paths, 1, |p, o| o[0] = (0.2 * drv.terminal(p)[0]).exp());

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (threads, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("conditioner", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| Conditioner::brownian(&drv, RegressionBasis::default()).unwrap()))
        });
        let cond = Conditioner::brownian(&drv, RegressionBasis::default()).unwrap();
        let setting = Setting { model: &model, eta: &eta, driver: &drv, cond: &cond, opts: Default::default() };
        group.bench_with_input(BenchmarkId::new("delayed_bsde", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| setting.solve(&xi).unwrap()))
        });
        let state = setting.solve(&xi).unwrap();
        let lin = Linearization::new(&model, &state).unwrap();
        group.bench_with_input(BenchmarkId::new("adjoint", threads), &threads, |b, _| {
            b.iter(|| {
                pool.install(|| solve_adjoint(&lin, 1.0, &[0.5], &drv, &cond, &AnticipatedOptions::default()).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
