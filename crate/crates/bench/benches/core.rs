use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fixsmooth::bootstrap::{bootstrap_from_cov, TaperedCovariance};
use fixsmooth::statistics::lrv_estimate_direct;
use fixsmooth::{
    lrv_estimate, nystrom_eigs, subsampling_t, upsilon, wald_f, BootStatistic, DifferenceKernel, KernelSpec,
    ProcessModel, Truncation,
};

fn series(t: usize) -> Vec<f64> {
    ProcessModel::ar1(0.5, 1.0).unwrap().simulate(t, 1).unwrap()
}

fn eigen(c: &mut Criterion) {
    let spec = KernelSpec::difference(DifferenceKernel::QuadraticSpectral, 0.2, true).unwrap();
    let mut g = c.benchmark_group("nystrom");
    g.sample_size(10);
    for n in [128, 512] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| nystrom_eigs(&spec, n, Truncation::Fixed(20)).unwrap())
        });
    }
    g.finish();
}

fn statistics(c: &mut Criterion) {
    let spec = KernelSpec::difference(DifferenceKernel::Parzen, 0.1, false).unwrap();
    let x = series(1024);
    c.bench_function("lrv_fft_T1024", |b| b.iter(|| lrv_estimate(black_box(&x), &spec).unwrap()));
    let small = series(256);
    c.bench_function("lrv_double_sum_T256", |b| b.iter(|| lrv_estimate_direct(black_box(&small), &spec).unwrap()));
    c.bench_function("subsampling_t_T1024_K8", |b| b.iter(|| subsampling_t(black_box(&x), 8, 0.0).unwrap()));
    c.bench_function("wald_f_T1024", |b| b.iter(|| wald_f(black_box(&x), &spec, 0.0).unwrap()));
}

fn simulation(c: &mut Criterion) {
    let m = ProcessModel::ar1(0.5, 1.0).unwrap();
    let sampler = m.sampler(1024).unwrap();
    let mut rng = fixsmooth::rng::stream_rng(3, 0);
    let mut out = vec![0.0; 1024];
    c.bench_function("gaussian_draw_T1024", |b| b.iter(|| sampler.draw(&mut rng, &mut out)));
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function("upsilon_100k", |b| b.iter(|| upsilon(1.9, 8, 100_000, 5).unwrap()));
    let cov = TaperedCovariance::new(&series(256), 6).unwrap();
    g.bench_function("bootstrap_T256_K8_999", |b| {
        b.iter(|| bootstrap_from_cov(&cov, &BootStatistic::SubsamplingT { k: 8 }, 999, 7, &[0.05]).unwrap())
    });
    let qs = KernelSpec::difference(DifferenceKernel::QuadraticSpectral, 0.2, false).unwrap();
    g.bench_function("bootstrap_T256_wald_199", |b| {
        b.iter(|| bootstrap_from_cov(&cov, &BootStatistic::Wald { kernel: qs.clone() }, 199, 7, &[0.05]).unwrap())
    });
    g.finish();
}

criterion_group!(benches, eigen, statistics, simulation, monte_carlo);
criterion_main!(benches);
