//! Test statistics computed from a series: the subsampling t statistic over
//! K equal groups and the kernel-weighted Wald statistic.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::kernels::{EigenSystem, KernelForm, KernelSpec};

/// What went into a statistic.
#[derive(Debug, Clone, PartialEq)]
pub enum Ingredients {
    /// Group means μ̂₁, …, μ̂_K.
    GroupMeans(Vec<f64>),
    /// ξ₀, ξ₁..ξ_J and the variance estimate in the denominator.
    Projections { xi0: f64, xi: Vec<f64>, lrv: f64 },
}

/// A statistic together with its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct StatResult {
    pub statistic: f64,
    pub ingredients: Ingredients,
    pub t: usize,
    /// Group count K, or the truncation J (`None` for the full kernel).
    pub smoothing: Option<usize>,
    pub mu0: f64,
}

/// Group means of `series` over K equal consecutive blocks.
pub fn group_means(series: &[f64], k: usize) -> Result<Vec<f64>> {
    let t = series.len();
    if k < 2 {
        return Err(invalid(format!("need K >= 2, got {k}")));
    }
    if t == 0 || !t.is_multiple_of(k) {
        return Err(Error::UnequalGroups { k, t });
    }
    let q = t / k;
    Ok(series.chunks_exact(q).map(|c| c.iter().sum::<f64>() / q as f64).collect())
}

/// T_K from precomputed group means.
pub fn t_from_group_means(means: &[f64], mu0: f64) -> Result<f64> {
    let k = means.len() as f64;
    let bar = means.iter().sum::<f64>() / k;
    let s2 = means.iter().map(|m| (m - bar).powi(2)).sum::<f64>() / (k - 1.0);
    let scale = means.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    if !(s2 > (f64::EPSILON * scale).powi(2)) {
        return Err(Error::ZeroVariance);
    }
    Ok(k.sqrt() * (bar - mu0) / s2.sqrt())
}

/// Subsampling t statistic T_K = √K(μ̄ − μ₀)/S over K equal groups.
pub fn subsampling_t(series: &[f64], k: usize, mu0: f64) -> Result<StatResult> {
    let means = group_means(series, k)?;
    let statistic = t_from_group_means(&means, mu0)?;
    Ok(StatResult { statistic, ingredients: Ingredients::GroupMeans(means), t: series.len(), smoothing: Some(k), mu0 })
}

/// Discretely demeaned eigenfunctions φ_j⁰(i/T) for a fixed series length.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    pub t: usize,
    pub eigenvalues: Vec<f64>,
    /// `weights[j][i]` = φ_{j+1}⁰((i+1)/T).
    pub weights: Vec<Vec<f64>>,
}

impl ProjectionBasis {
    pub fn new(eig: &EigenSystem, t: usize) -> Result<Self> {
        if t < eig.truncation() {
            return Err(invalid(format!("series length {t} below truncation {}", eig.truncation())));
        }
        let mut weights = eig.on_series_grid(t);
        for w in &mut weights {
            let m = w.iter().sum::<f64>() / t as f64;
            w.iter_mut().for_each(|v| *v -= m);
        }
        Ok(ProjectionBasis { t, eigenvalues: eig.eigenvalues.clone(), weights })
    }

    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// ξ₀ = (1/√T)Σ(X_i − μ₀) and ξ_j = (1/√T)Σφ_j⁰(i/T)X_i.
pub fn projections(series: &[f64], basis: &ProjectionBasis, mu0: f64) -> Result<(f64, Vec<f64>)> {
    let t = series.len();
    if t != basis.t {
        return Err(invalid(format!("basis built for T = {}, series has {t}", basis.t)));
    }
    let rt = (t as f64).sqrt();
    let xi0 = series.iter().map(|x| x - mu0).sum::<f64>() / rt;
    let xi = basis.weights.iter().map(|w| w.iter().zip(series).map(|(a, x)| a * x).sum::<f64>() / rt).collect();
    Ok((xi0, xi))
}

/// Sample autocovariances γ̂(0..=max_lag) with divisor T about the sample mean.
pub fn sample_autocov(series: &[f64], max_lag: usize) -> Vec<f64> {
    let t = series.len();
    let mean = series.iter().sum::<f64>() / t as f64;
    let e: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let max_lag = max_lag.min(t - 1);
    if max_lag > 64 && t > 256 {
        return fft_autocov(&e, max_lag);
    }
    (0..=max_lag).map(|h| e[..t - h].iter().zip(&e[h..]).map(|(a, b)| a * b).sum::<f64>() / t as f64).collect()
}

fn fft_autocov(e: &[f64], max_lag: usize) -> Vec<f64> {
    let t = e.len();
    let n = (2 * t).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = e.iter().map(|&x| Complex::new(x, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(n).collect();
    fwd.process(&mut buf);
    for z in &mut buf {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..=max_lag].iter().map(|z| z.re / (n as f64 * t as f64)).collect()
}

/// Weight on lag h in the fast path, 𝒦(h/(bT)).
fn lag_weight(kernel: &KernelSpec, h: usize, t: usize) -> f64 {
    kernel.eval_raw(h as f64 / t as f64, 0.0)
}

fn max_lag(kernel: &KernelSpec, t: usize) -> usize {
    let support = match &kernel.form {
        KernelForm::Difference(k) => k.support(),
        KernelForm::Tabulated { step, values } => Some(step * (values.len() - 1) as f64),
        KernelForm::CosineSeries(_) => None,
    };
    match support {
        Some(s) => ((s * kernel.b * t as f64).ceil() as usize).min(t - 1),
        None => t - 1,
    }
}

fn check_lrv(d: f64) -> Result<f64> {
    let d = if (-1e-10..0.0).contains(&d) { 0.0 } else { d };
    if !(d > 1e-12) {
        return Err(Error::DegenerateLrv(d));
    }
    Ok(d)
}

/// D̂ by the weighted-autocovariance form Σ_h 𝒦(h/(bT)) γ̂(h). For centered
/// data the demeaning terms of the kernel cancel, so the same value serves
/// both the raw and the demeaned kernel.
pub fn lrv_estimate(series: &[f64], kernel: &KernelSpec) -> Result<f64> {
    let t = series.len();
    if t < 8 {
        return Err(invalid(format!("need T >= 8, got {t}")));
    }
    let gam = sample_autocov(series, max_lag(kernel, t));
    let d = gam[0] + 2.0 * gam.iter().enumerate().skip(1).map(|(h, g)| lag_weight(kernel, h, t) * g).sum::<f64>();
    check_lrv(d)
}

/// D̂ by the direct double sum (1/T)ΣΣG(i/T, j/T)(X_i − X̄)(X_j − X̄),
/// using the demeaned kernel when flagged.
pub fn lrv_estimate_direct(series: &[f64], kernel: &KernelSpec) -> Result<f64> {
    let t = series.len();
    if t < 8 {
        return Err(invalid(format!("need T >= 8, got {t}")));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let e: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let grid: Vec<f64> = (1..=t).map(|i| i as f64 / t as f64).collect();
    let row: Vec<f64> = if kernel.demeaned { grid.iter().map(|&u| kernel.row_mean(u)).collect() } else { vec![0.0; t] };
    let grand = if kernel.demeaned { kernel.grand_mean() } else { 0.0 };
    let mut d = 0.0;
    for i in 0..t {
        let mut s = 0.0;
        for j in 0..t {
            s += (kernel.eval_raw(grid[i], grid[j]) - row[i] - row[j] + grand) * e[j];
        }
        d += e[i] * s;
    }
    check_lrv(d / t as f64)
}

/// F_T(K) = ξ₀² / Σ_{j≤K} λ_j ξ_j² using the first `k` pairs of `basis`.
pub fn wald_f_truncated(series: &[f64], basis: &ProjectionBasis, k: usize, mu0: f64) -> Result<StatResult> {
    if k == 0 || k > basis.truncation() {
        return Err(invalid(format!("truncation {k} outside 1..={}", basis.truncation())));
    }
    let (xi0, xi) = projections(series, basis, mu0)?;
    let denom: f64 = basis.eigenvalues[..k].iter().zip(&xi).map(|(l, x)| l * x * x).sum();
    let lrv = check_lrv(denom)?;
    Ok(StatResult {
        statistic: xi0 * xi0 / lrv,
        ingredients: Ingredients::Projections { xi0, xi, lrv },
        t: series.len(),
        smoothing: Some(k),
        mu0,
    })
}

/// F_T(∞) = ξ₀² / D̂_{T,b}.
pub fn wald_f(series: &[f64], kernel: &KernelSpec, mu0: f64) -> Result<StatResult> {
    let lrv = lrv_estimate(series, kernel)?;
    let t = series.len();
    let xi0 = series.iter().map(|x| x - mu0).sum::<f64>() / (t as f64).sqrt();
    Ok(StatResult {
        statistic: xi0 * xi0 / lrv,
        ingredients: Ingredients::Projections { xi0, xi: Vec::new(), lrv },
        t,
        smoothing: None,
        mu0,
    })
}

/// Reads one value per line; blank lines and `#` comments are skipped.
pub fn read_series(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| invalid(format!("bad value {l:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{t_quantile, Moments};
    use crate::kernels::{analytic_eigs, nystrom_eigs, DifferenceKernel, Truncation};
    use crate::models::ProcessModel;
    use crate::rng::stream_rng;

    fn ar1_sample(t: usize, seed: u64) -> Vec<f64> {
        ProcessModel::ar1(0.5, 1.0).unwrap().simulate(t, seed).unwrap()
    }

    #[test]
    fn unequal_groups_rejected() {
        let x = ar1_sample(512, 1);
        assert!(matches!(subsampling_t(&x, 7, 0.0), Err(Error::UnequalGroups { k: 7, t: 512 })));
    }

    #[test]
    fn zero_variance_rejected() {
        let x = vec![3.0; 64];
        assert!(matches!(subsampling_t(&x, 8, 0.0), Err(Error::ZeroVariance)));
    }

    #[test]
    fn affine_invariance() {
        let x = ar1_sample(240, 2);
        let base = subsampling_t(&x, 8, 0.1).unwrap().statistic;
        // Power-of-two scalings are exact in floating point.
        let y: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        assert_eq!(subsampling_t(&y, 8, 0.4).unwrap().statistic, base);
        let z: Vec<f64> = x.iter().map(|v| 2.5 * v + 7.0).collect();
        let moved = subsampling_t(&z, 8, 2.5 * 0.1 + 7.0).unwrap().statistic;
        assert!((moved - base).abs() < 1e-10 * base.abs().max(1.0));
    }

    #[test]
    fn k_equals_t_is_classical_t() {
        let x = ar1_sample(30, 3);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let s = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let classical = n.sqrt() * (mean - 0.2) / s;
        assert!((subsampling_t(&x, 30, 0.2).unwrap().statistic - classical).abs() < 1e-12);
    }

    #[test]
    fn iid_subsampling_t_has_t_law() {
        let m = ProcessModel::iid(1.0).unwrap();
        let s = m.sampler(512).unwrap();
        let x_crit = t_quantile(7.0, 0.975);
        let mut rng = stream_rng(4, 0);
        let mut x = vec![0.0; 512];
        let mut acc = Moments::default();
        let mut skew = Moments::default();
        for _ in 0..50_000 {
            s.draw(&mut rng, &mut x);
            let v = subsampling_t(&x, 8, 0.0).unwrap().statistic;
            acc.push(f64::from(v.abs() <= x_crit));
            skew.push(v.powi(3) / (1.0 + v.powi(4)));
        }
        assert!((acc.mean() - 0.95).abs() < 3.0 * (0.95f64 * 0.05 / 50_000.0).sqrt(), "{}", acc.mean());
        // A bounded odd function of T_K has mean zero under symmetry.
        assert!(skew.mean().abs() < 3.0 * skew.std_error());
    }

    fn th_basis(t: usize) -> ProjectionBasis {
        let spec = KernelSpec::difference(DifferenceKernel::TukeyHanning, 1.0, true).unwrap();
        ProjectionBasis::new(&analytic_eigs(&spec, 256).unwrap(), t).unwrap()
    }

    #[test]
    fn constant_series_has_zero_projections() {
        let basis = th_basis(64);
        let (_, xi) = projections(&vec![2.5; 64], &basis, 0.0).unwrap();
        assert!(xi.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn xi0_arithmetic() {
        let t = 100;
        let basis = th_basis(t);
        let x: Vec<f64> = vec![1.0 + 1.0 / (t as f64).sqrt(); t];
        let (xi0, _) = projections(&x, &basis, 1.0).unwrap();
        assert!((xi0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iid_projection_variance() {
        let t = 512;
        let basis = th_basis(t);
        let s = ProcessModel::iid(1.0).unwrap().sampler(t).unwrap();
        let mut rng = stream_rng(6, 0);
        let mut x = vec![0.0; t];
        let mut acc = Moments::default();
        for _ in 0..20_000 {
            s.draw(&mut rng, &mut x);
            let (_, xi) = projections(&x, &basis, 0.0).unwrap();
            acc.push(xi[0] * xi[0]);
        }
        let exact = basis.weights[0].iter().map(|w| w * w).sum::<f64>() / t as f64;
        assert!((acc.mean() - exact).abs() < 3.0 * acc.std_error(), "{} vs {exact}", acc.mean());
    }

    #[test]
    fn fast_lrv_matches_double_sum() {
        let x = ar1_sample(256, 7);
        for (k, b, dm) in [
            (DifferenceKernel::Bartlett, 0.2, false),
            (DifferenceKernel::Bartlett, 0.2, true),
            (DifferenceKernel::Parzen, 0.5, true),
            (DifferenceKernel::QuadraticSpectral, 0.1, false),
            (DifferenceKernel::QuadraticSpectral, 1.0, true),
            (DifferenceKernel::Daniell, 0.3, false),
            (DifferenceKernel::TukeyHanning, 1.0, true),
        ] {
            let spec = KernelSpec::difference(k, b, dm).unwrap();
            let fast = lrv_estimate(&x, &spec).unwrap();
            let slow = lrv_estimate_direct(&x, &spec).unwrap();
            assert!((fast - slow).abs() <= 1e-10 * slow, "{k} b={b}: {fast} vs {slow}");
        }
    }

    #[test]
    fn fft_autocov_matches_direct() {
        let x = ar1_sample(1000, 9);
        let mean = x.iter().sum::<f64>() / 1000.0;
        let e: Vec<f64> = x.iter().map(|v| v - mean).collect();
        let fast = sample_autocov(&x, 500);
        for h in [0usize, 1, 17, 500] {
            let direct = e[..1000 - h].iter().zip(&e[h..]).map(|(a, b)| a * b).sum::<f64>() / 1000.0;
            assert!((fast[h] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_identity_tukey_hanning() {
        let t = 512;
        let spec = KernelSpec::difference(DifferenceKernel::TukeyHanning, 1.0, true).unwrap();
        let basis = th_basis(t);
        let x = ar1_sample(t, 10);
        let d = lrv_estimate(&x, &spec).unwrap();
        let (_, xi) = projections(&x, &basis, 0.0).unwrap();
        let s: f64 = basis.eigenvalues.iter().zip(&xi).map(|(l, v)| l * v * v).sum();
        assert!((d - s).abs() <= 1e-4 * d, "{d} vs {s}");
        let f_inf = wald_f(&x, &spec, 0.0).unwrap().statistic;
        let f_k = wald_f_truncated(&x, &basis, 2, 0.0).unwrap().statistic;
        assert!((f_inf - f_k).abs() <= 1e-4 * f_inf);
    }

    #[test]
    fn constant_series_degenerate_lrv() {
        let spec = KernelSpec::difference(DifferenceKernel::Bartlett, 0.2, false).unwrap();
        assert!(matches!(lrv_estimate(&vec![1.0; 64], &spec), Err(Error::DegenerateLrv(_))));
    }

    #[test]
    fn wald_scale_invariance() {
        let spec = KernelSpec::difference(DifferenceKernel::QuadraticSpectral, 0.2, true).unwrap();
        let x = ar1_sample(128, 11);
        let y: Vec<f64> = x.iter().map(|v| 8.0 * v).collect();
        assert_eq!(wald_f(&x, &spec, 0.5).unwrap().statistic, wald_f(&y, &spec, 4.0).unwrap().statistic);
    }

    #[test]
    fn single_eigenvalue_ratio_symmetry() {
        // λ₁ = 1 with φ₁ = √2cos2πt: F(1) = ξ₀²/ξ₁², a ratio of two χ²₁.
        let spec = KernelSpec::cosine_series(vec![1.0]).unwrap();
        let eig = analytic_eigs(&spec, 128).unwrap().truncated(1);
        let mut basis = ProjectionBasis::new(&eig, 256).unwrap();
        basis.eigenvalues[0] = 1.0;
        let s = ProcessModel::iid(1.0).unwrap().sampler(256).unwrap();
        let mut rng = stream_rng(12, 0);
        let mut x = vec![0.0; 256];
        let mut acc = Moments::default();
        for _ in 0..20_000 {
            s.draw(&mut rng, &mut x);
            acc.push(f64::from(wald_f_truncated(&x, &basis, 1, 0.0).unwrap().statistic <= 1.0));
        }
        assert!((acc.mean() - 0.5).abs() < 3.0 * acc.std_error());
    }

    #[test]
    fn nystrom_basis_agrees_with_analytic() {
        let spec = KernelSpec::difference(DifferenceKernel::TukeyHanning, 1.0, true).unwrap();
        let ny = ProjectionBasis::new(&nystrom_eigs(&spec, 256, Truncation::Fixed(2)).unwrap(), 128).unwrap();
        let an = th_basis(128);
        for j in 0..2 {
            for i in 0..128 {
                assert!((ny.weights[j][i] - an.weights[j][i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn read_series_parses_lines() {
        assert_eq!(read_series("1.5\n# c\n\n-2\n").unwrap(), vec![1.5, -2.0]);
        assert!(read_series("x\n").is_err());
    }
}
