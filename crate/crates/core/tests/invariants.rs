use fixsmooth::bootstrap::{bootstrap_from_cov, TaperedCovariance};
use fixsmooth::distributions::{Moments, VecMoments};
use fixsmooth::harness::solve_increasing;
use fixsmooth::statistics::{group_means, lrv_estimate_direct};
use fixsmooth::{
    lrv_estimate, nystrom_eigs, subsampling_t, wald_f, BootStatistic, DifferenceKernel, KernelSpec, ProcessModel,
    Truncation,
};
use proptest::prelude::*;

fn ar1_series(rho: f64, t: usize, seed: u64) -> Vec<f64> {
    ProcessModel::ar1(rho, 1.0).unwrap().simulate(t, seed).unwrap()
}

fn kernel_strategy() -> impl Strategy<Value = KernelSpec> {
    (0usize..5, 0.05f64..1.0, any::<bool>()).prop_map(|(i, b, d)| {
        let k = DifferenceKernel::ALL[i];
        // Tukey–Hanning is only positive semi-definite at b = 1.
        let b = if k == DifferenceKernel::TukeyHanning { 1.0 } else { b };
        KernelSpec::difference(k, b, d).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn subsampling_t_scale_and_sign(seed in 0u64..1_000, rho in -0.8f64..0.8, kexp in 1u32..6, mu0 in -1.0f64..1.0) {
        let k = 1usize << kexp;
        let x = ar1_series(rho, 256, seed);
        let base = subsampling_t(&x, k, mu0).unwrap().statistic;
        let scaled: Vec<f64> = x.iter().map(|v| 0.25 * v).collect();
        prop_assert_eq!(subsampling_t(&scaled, k, 0.25 * mu0).unwrap().statistic, base);
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(subsampling_t(&flipped, k, -mu0).unwrap().statistic, -base);
    }

    #[test]
    fn statistics_affine_invariant(seed in 0u64..1_000, c in 0.1f64..10.0, a in -50.0f64..50.0, spec in kernel_strategy()) {
        let x = ar1_series(0.4, 128, seed);
        let y: Vec<f64> = x.iter().map(|v| c * v + a).collect();
        let t0 = subsampling_t(&x, 8, 0.2).unwrap().statistic;
        let t1 = subsampling_t(&y, 8, c * 0.2 + a).unwrap().statistic;
        prop_assert!((t1 - t0).abs() <= 1e-9 * t0.abs().max(1.0));
        let f0 = wald_f(&x, &spec, 0.2).unwrap().statistic;
        let f1 = wald_f(&y, &spec, c * 0.2 + a).unwrap().statistic;
        prop_assert!((f1 - f0).abs() <= 1e-9 * f0.abs().max(1.0));
    }

    #[test]
    fn lrv_fast_matches_double_sum(seed in 0u64..1_000, t in 16usize..200, spec in kernel_strategy()) {
        let x = ar1_series(0.5, t, seed);
        let fast = lrv_estimate(&x, &spec).unwrap();
        let direct = lrv_estimate_direct(&x, &spec).unwrap();
        prop_assert!((fast - direct).abs() <= 1e-10 * direct.abs(), "{} vs {}", fast, direct);
    }

    #[test]
    fn group_means_average_to_overall_mean(seed in 0u64..1_000, kexp in 1u32..7) {
        let k = 1usize << kexp;
        let x = ar1_series(0.3, 128, seed);
        let m = group_means(&x, k).unwrap();
        let overall = x.iter().sum::<f64>() / 128.0;
        prop_assert!((m.iter().sum::<f64>() / k as f64 - overall).abs() < 1e-12);
    }

    #[test]
    fn tapered_covariance_is_psd(seed in 0u64..1_000, rho in -0.9f64..0.9, t in 8usize..120, l in 1usize..12, vseed in 0u64..100) {
        let x = ar1_series(rho, t, seed);
        let l = l.min(t);
        let cov = TaperedCovariance::new(&x, l).unwrap();
        let v = ar1_series(0.0, t, vseed);
        let mut q = 0.0;
        for i in 0..t {
            for j in 0..t {
                q += v[i] * v[j] * cov.entry(i, j);
            }
        }
        let norm: f64 = v.iter().map(|z| z * z).sum();
        prop_assert!(q >= -1e-12 * cov.band[0] * norm, "quadratic form {}", q);
        prop_assert!(cov.band.len() == l);
    }

    #[test]
    fn moments_merge_is_order_free(xs in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
        let split = split.min(xs.len());
        let mut all = Moments::default();
        xs.iter().for_each(|&x| all.push(x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..split].iter().for_each(|&x| a.push(x));
        xs[split..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.count(), all.count());
        prop_assert!((a.mean() - all.mean()).abs() <= 1e-9 * (1.0 + all.mean().abs()));
        prop_assert!((a.std_error() - all.std_error()).abs() <= 1e-9 * (1.0 + all.std_error()));

        let mut vall = VecMoments::new(2);
        xs.iter().for_each(|&x| vall.push(&[x, x * 0.5 + 1.0]));
        let (mut va, mut vb) = (VecMoments::new(2), VecMoments::new(2));
        xs[..split].iter().for_each(|&x| va.push(&[x, x * 0.5 + 1.0]));
        xs[split..].iter().for_each(|&x| vb.push(&[x, x * 0.5 + 1.0]));
        va.merge(&vb);
        let (c1, c2) = (va.combination(&[1.0, -2.0]), vall.combination(&[1.0, -2.0]));
        prop_assert!((c1.value - c2.value).abs() < 1e-9);
        prop_assert!((c1.value + 2.0).abs() < 1e-9);
    }

    #[test]
    fn root_finder_inverts_monotone_map(target in 0.01f64..0.99, scale in 0.1f64..5.0) {
        let f = |x: f64| Ok(1.0 - (-x / scale).exp());
        let x = solve_increasing(f, target, 0.0, 100.0, 1e-12).unwrap();
        prop_assert!((1.0 - (-x / scale).exp() - target).abs() < 1e-9);
    }
}

#[test]
fn bootstrap_p_values_bounded_and_monotone() {
    let x = ar1_series(0.5, 256, 5);
    let cov = TaperedCovariance::new(&x, 6).unwrap();
    let out = bootstrap_from_cov(&cov, &BootStatistic::SubsamplingT { k: 8 }, 499, 17, &[0.1, 0.05, 0.01]).unwrap();
    let n = out.statistics.len() as f64;
    let mut last = 1.0;
    for i in 0..200 {
        let p = out.p_value(i as f64 * 0.05);
        assert!(p >= 1.0 / (n + 1.0) && p <= 1.0);
        assert!(p <= last);
        last = p;
    }
    let cvs: Vec<f64> = out.critical_values.iter().map(|c| c.1).collect();
    assert!(cvs[0] <= cvs[1] && cvs[1] <= cvs[2]);
    // A statistic at a critical value is rejected at roughly that level.
    for &(a, cv) in &out.critical_values {
        assert!(out.p_value(cv) <= a + 1.0 / (n + 1.0));
    }
}

#[test]
fn demeaned_eigenfunctions_orthonormal_and_mean_zero() {
    for k in [DifferenceKernel::QuadraticSpectral, DifferenceKernel::Daniell] {
        for b in [0.15, 0.4, 1.0] {
            let spec = KernelSpec::difference(k, b, true).unwrap();
            let sys = nystrom_eigs(&spec, 512, Truncation::Fixed(12)).unwrap();
            // Pairs at the roundoff floor span an arbitrary subspace.
            let live: Vec<usize> = (0..12).filter(|&j| sys.eigenvalues[j] > 1e-8 * sys.eigenvalues[0]).collect();
            assert!(live.len() >= 4);
            for &i in &live {
                assert!(sys.integral(i).abs() < 1e-6, "{k} b={b} j={i}: {}", sys.integral(i));
                for &j in &live {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((sys.inner_product(i, j) - want).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn simulation_is_reproducible() {
    let m = ProcessModel::parse("arma11:0.5:0.3").unwrap();
    assert_eq!(m.simulate(300, 42).unwrap(), m.simulate(300, 42).unwrap());
    assert_ne!(m.simulate(300, 42).unwrap(), m.simulate(300, 43).unwrap());
}
