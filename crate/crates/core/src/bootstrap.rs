//! Gaussian dependent bootstrap.
//!
//! The bootstrap world is N(0, Ξ̂) with Ξ̂_ij = ω((i−j)/l)γ̂(|i−j|), ω the
//! Bartlett taper. Ξ̂ is banded, so its Cholesky factor is too and a draw
//! costs O(T·l). T_K* only sees the K group means, which are Gaussian with
//! a K×K covariance computed from Ξ̂, so those are drawn directly.

use nalgebra::DMatrix;
use rand::Rng;

use crate::distributions::fill_normals;
use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::rng;
use crate::statistics::{sample_autocov, subsampling_t, t_from_group_means, wald_f};

/// ⌈1.5·T^{1/4}⌉, clamped to 1..=T.
pub fn default_taper_width(t: usize) -> usize {
    ((1.5 * (t as f64).powf(0.25)).ceil() as usize).clamp(1, t.max(1))
}

/// Ξ̂ together with its banded Cholesky factor.
#[derive(Debug, Clone)]
pub struct TaperedCovariance {
    pub t: usize,
    pub l: usize,
    /// ω(h/l)γ̂(h) for h = 0..l.
    pub band: Vec<f64>,
    /// Ridge added to the diagonal before factorization (0 unless needed).
    pub ridge: f64,
    /// Row i holds L[i][i−l+1..=i], left-padded with zeros.
    factor: Vec<f64>,
}

impl TaperedCovariance {
    pub fn new(series: &[f64], l: usize) -> Result<Self> {
        let t = series.len();
        if t < 2 || l == 0 || l > t {
            return Err(invalid(format!("need 1 <= l <= T and T >= 2, got l = {l}, T = {t}")));
        }
        let gam = sample_autocov(series, l - 1);
        let band: Vec<f64> = gam.iter().enumerate().map(|(h, g)| (1.0 - h as f64 / l as f64) * g).collect();
        if !(band[0] > 0.0) {
            return Err(Error::NotPsd(format!("sample variance {}", band[0])));
        }
        let factor = match banded_cholesky(&band, t, 0.0) {
            Ok(f) => (f, 0.0),
            Err(_) => {
                let ridge = 1e-10 * band[0];
                (banded_cholesky(&band, t, ridge).map_err(|i| Error::NotPsd(format!("pivot {i} nonpositive after ridge")))?, ridge)
            }
        };
        Ok(TaperedCovariance { t, l, band, ridge: factor.1, factor: factor.0 })
    }

    /// Ξ̂_ij.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.band.get(i.abs_diff(j)).copied().unwrap_or(0.0)
    }

    /// Cholesky factor of the covariance of the K group means of a draw
    /// from N(0, Ξ̂). Entry (a, a+d) is q⁻²Σ_{|m|<q}(q − |m|)Ξ̂(|qd + m|).
    pub fn group_mean_factor(&self, k: usize) -> Result<DMatrix<f64>> {
        let q = (self.t / k) as i64;
        let band: Vec<f64> = (0..k as i64)
            .map(|d| {
                (1 - q..q).map(|m| (q - m.abs()) as f64 * self.entry(0, (q * d + m).unsigned_abs() as usize)).sum::<f64>()
                    / (q * q) as f64
            })
            .collect();
        let c = DMatrix::from_fn(k, k, |i, j| band[i.abs_diff(j)]);
        c.cholesky().map(|f| f.l()).ok_or_else(|| Error::NotPsd("group-mean covariance".into()))
    }

    /// Writes one draw from N(0, Ξ̂) into `out`.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let w = self.l;
        let mut z = vec![0.0; self.t];
        fill_normals(rng, &mut z);
        for i in 0..self.t {
            let row = &self.factor[i * w..(i + 1) * w];
            let lo = (i + 1).saturating_sub(w);
            let off = w - (i + 1 - lo);
            out[i] = row[off..].iter().zip(&z[lo..=i]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Banded Cholesky of the symmetric Toeplitz matrix with first row `band`
/// (zero past the band) plus `ridge` on the diagonal. Returns the index of
/// the failing pivot on error.
fn banded_cholesky(band: &[f64], t: usize, ridge: f64) -> std::result::Result<Vec<f64>, usize> {
    let w = band.len();
    let mut l = vec![0.0; t * w];
    // L[i][j] lives at i*w + (j + w − 1 − i) for i − w < j ≤ i.
    let at = |i: usize, j: usize| i * w + (j + w - 1 - i);
    for i in 0..t {
        let lo = (i + 1).saturating_sub(w);
        for j in lo..=i {
            let mut s = band[i - j] + if i == j { ridge } else { 0.0 };
            let klo = lo.max((j + 1).saturating_sub(w));
            for k in klo..j {
                s -= l[at(i, k)] * l[at(j, k)];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(i);
                }
                l[at(i, i)] = s.sqrt();
            } else {
                l[at(i, j)] = s / l[at(j, j)];
            }
        }
    }
    Ok(l)
}

/// Statistic recomputed in each bootstrap world.
#[derive(Debug, Clone, PartialEq)]
pub enum BootStatistic {
    SubsamplingT { k: usize },
    Wald { kernel: KernelSpec },
}

impl BootStatistic {
    pub fn compute(&self, series: &[f64], mu0: f64) -> Result<f64> {
        match self {
            BootStatistic::SubsamplingT { k } => Ok(subsampling_t(series, *k, mu0)?.statistic),
            BootStatistic::Wald { kernel } => Ok(wald_f(series, kernel, mu0)?.statistic),
        }
    }
}

/// Bootstrap distribution of |stat*| with critical values.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub reps: usize,
    pub seed: u64,
    /// |stat*| sorted ascending.
    pub statistics: Vec<f64>,
    /// (α, critical value) pairs in the order requested.
    pub critical_values: Vec<(f64, f64)>,
    /// Replications redrawn after a degenerate statistic.
    pub redraws: usize,
}

impl BootstrapOutcome {
    /// Order statistic ⌈(1−α)(reps+1)⌉ of |stat*|.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let n = self.statistics.len();
        let r = ((1.0 - alpha) * (n + 1) as f64).ceil() as usize;
        self.statistics[r.clamp(1, n) - 1]
    }

    /// (1 + #{|stat*| ≥ |obs|})/(reps + 1).
    pub fn p_value(&self, observed: f64) -> f64 {
        let a = observed.abs();
        let below = self.statistics.partition_point(|s| *s < a);
        (1 + self.statistics.len() - below) as f64 / (self.statistics.len() + 1) as f64
    }
}

fn degenerate(e: &Error) -> bool {
    matches!(e, Error::ZeroVariance | Error::DegenerateLrv(_))
}

/// Bootstrap distribution from an already factorized Ξ̂.
pub fn bootstrap_from_cov(
    cov: &TaperedCovariance,
    statistic: &BootStatistic,
    reps: usize,
    seed: u64,
    alphas: &[f64],
) -> Result<BootstrapOutcome> {
    if reps < 2 {
        return Err(invalid("need at least 2 bootstrap replications"));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(invalid(format!("alpha {a} outside (0, 1)")));
    }
    let cap = reps / 100;
    let group_law = match statistic {
        BootStatistic::SubsamplingT { k } if *k >= 2 && cov.t.is_multiple_of(*k) => Some(cov.group_mean_factor(*k)?),
        _ => None,
    };
    let parts = rng::batched(reps, seed, |rng, _, len| {
        let mut x = vec![0.0; cov.t];
        let mut z = vec![0.0; group_law.as_ref().map_or(0, |g| g.nrows())];
        let mut stats = Vec::with_capacity(len);
        let mut redraws = 0usize;
        while stats.len() < len {
            let value = match &group_law {
                Some(l) => {
                    fill_normals(rng, &mut z);
                    let means: Vec<f64> = (0..z.len()).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect();
                    t_from_group_means(&means, 0.0)
                }
                None => {
                    cov.resample(rng, &mut x);
                    statistic.compute(&x, 0.0)
                }
            };
            match value {
                Ok(s) => stats.push(s.abs()),
                Err(e) if degenerate(&e) && redraws < cap => redraws += 1,
                Err(e) => return Err(e),
            }
        }
        Ok((stats, redraws))
    });
    let mut statistics = Vec::with_capacity(reps);
    let mut redraws = 0;
    for p in parts {
        let (s, r) = p?;
        statistics.extend(s);
        redraws += r;
    }
    if redraws > cap {
        return Err(Error::NonFinite(format!("{redraws} degenerate bootstrap replications")));
    }
    statistics.sort_by(f64::total_cmp);
    let mut out = BootstrapOutcome { reps, seed, statistics, critical_values: Vec::new(), redraws };
    out.critical_values = alphas.iter().map(|&a| (a, out.critical_value(a))).collect();
    Ok(out)
}

/// Bootstrap distribution of the statistic for `series` with taper width `l`.
pub fn bootstrap_distribution(
    series: &[f64],
    statistic: &BootStatistic,
    l: usize,
    reps: usize,
    seed: u64,
    alphas: &[f64],
) -> Result<BootstrapOutcome> {
    let cov = TaperedCovariance::new(series, l)?;
    bootstrap_from_cov(&cov, statistic, reps, seed, alphas)
}

/// Settings for a single bootstrap test.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub statistic: BootStatistic,
    /// Taper width; `None` uses [`default_taper_width`].
    pub l: Option<usize>,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapTest {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub outcome: BootstrapOutcome,
}

/// Tests μ = μ₀ with bootstrap critical values.
pub fn bootstrap_test(series: &[f64], mu0: f64, config: &BootstrapConfig) -> Result<BootstrapTest> {
    let statistic = config.statistic.compute(series, mu0)?;
    let l = config.l.unwrap_or_else(|| default_taper_width(series.len()));
    let outcome = bootstrap_distribution(series, &config.statistic, l, config.reps, config.seed, &[config.alpha])?;
    let critical_value = outcome.critical_values[0].1;
    Ok(BootstrapTest {
        statistic,
        critical_value,
        p_value: outcome.p_value(statistic),
        reject: statistic.abs() > critical_value,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{t_abs_cdf, t_quantile, Moments};
    use crate::models::ProcessModel;
    use crate::rng::stream_rng;

    fn dense(cov: &TaperedCovariance) -> DMatrix<f64> {
        DMatrix::from_fn(cov.t, cov.t, |i, j| cov.entry(i, j))
    }

    #[test]
    fn band_entries() {
        let x = ProcessModel::ar1(0.8, 1.0).unwrap().simulate(512, 1).unwrap();
        let cov = TaperedCovariance::new(&x, 12).unwrap();
        let g = sample_autocov(&x, 12);
        assert_eq!(cov.entry(0, 1), (1.0 - 1.0 / 12.0) * g[1]);
        assert_eq!(cov.entry(3, 15), 0.0);
        assert_eq!(cov.entry(5, 2), cov.entry(2, 5));
        let one = TaperedCovariance::new(&x, 1).unwrap();
        assert_eq!(one.band, vec![g[0]]);
    }

    #[test]
    fn factor_reproduces_matrix() {
        let x = ProcessModel::ar1(0.5, 1.0).unwrap().simulate(64, 2).unwrap();
        let cov = TaperedCovariance::new(&x, 6).unwrap();
        let w = cov.l;
        let mut lmat = DMatrix::zeros(64, 64);
        for i in 0..64usize {
            for j in (i + 1).saturating_sub(w)..=i {
                lmat[(i, j)] = cov.factor[i * w + (j + w - 1 - i)];
            }
        }
        let diff = &lmat * lmat.transpose() - dense(&cov);
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn psd_across_random_series() {
        let m = ProcessModel::ar1(0.5, 1.0).unwrap();
        for seed in 0..100 {
            let x = m.simulate(96, seed).unwrap();
            let cov = TaperedCovariance::new(&x, 10).unwrap();
            let min = dense(&cov).symmetric_eigenvalues().min();
            assert!(min >= -1e-8 * cov.band[0], "seed {seed}: {min}");
        }
    }

    #[test]
    fn constant_series_not_psd() {
        assert!(matches!(TaperedCovariance::new(&[1.0; 32], 4), Err(Error::NotPsd(_))));
        assert!(TaperedCovariance::new(&[1.0, 2.0, 3.0], 4).is_err());
    }

    #[test]
    fn resampled_autocovariances() {
        let x = ProcessModel::ar1(0.6, 1.0).unwrap().simulate(200, 3).unwrap();
        let cov = TaperedCovariance::new(&x, 5).unwrap();
        let mut rng = stream_rng(4, 0);
        let mut y = vec![0.0; 200];
        let mut lag = [Moments::default(); 6];
        let mut third = Moments::default();
        for _ in 0..4000 {
            cov.resample(&mut rng, &mut y);
            for (h, m) in lag.iter_mut().enumerate() {
                m.push(y[100] * y[100 + h]);
            }
            third.push(y[50].powi(3));
        }
        for (h, m) in lag.iter().enumerate() {
            assert!((m.mean() - cov.entry(100, 100 + h)).abs() < 4.0 * m.std_error(), "lag {h}");
        }
        assert!(third.mean().abs() < 4.0 * third.std_error());
    }

    #[test]
    fn iid_bootstrap_is_t() {
        let x = ProcessModel::iid(1.0).unwrap().simulate(256, 5).unwrap();
        let out = bootstrap_distribution(&x, &BootStatistic::SubsamplingT { k: 8 }, 1, 10_000, 6, &[0.05]).unwrap();
        let n = out.statistics.len() as f64;
        let ks = out
            .statistics
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let f = t_abs_cdf(7.0, *s);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.02, "{ks}");
    }

    #[test]
    fn deterministic_and_ordered() {
        let x = ProcessModel::ar1(0.5, 1.0).unwrap().simulate(128, 7).unwrap();
        let stat = BootStatistic::SubsamplingT { k: 8 };
        let a = bootstrap_distribution(&x, &stat, 4, 999, 8, &[0.1, 0.05, 0.01]).unwrap();
        assert_eq!(a, bootstrap_distribution(&x, &stat, 4, 999, 8, &[0.1, 0.05, 0.01]).unwrap());
        assert!(a.critical_values.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(a.critical_value(0.05), a.statistics[949]);
        assert_eq!(a.p_value(f64::INFINITY), 1.0 / 1000.0);
        assert_eq!(a.p_value(0.0), 1.0);
    }

    #[test]
    fn dependent_bootstrap_widens_critical_value() {
        let x = ProcessModel::ar1(0.5, 1.0).unwrap().simulate(256, 9).unwrap();
        let cfg = BootstrapConfig { statistic: BootStatistic::SubsamplingT { k: 8 }, l: None, reps: 4999, seed: 10, alpha: 0.05 };
        let r = bootstrap_test(&x, 0.0, &cfg).unwrap();
        assert!(r.critical_value > t_quantile(7.0, 0.975), "{}", r.critical_value);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn group_mean_law_matches_full_resampling() {
        let x = ProcessModel::ar1(0.7, 1.0).unwrap().simulate(96, 13).unwrap();
        let cov = TaperedCovariance::new(&x, 5).unwrap();
        let l = cov.group_mean_factor(4).unwrap();
        let exact = &l * l.transpose();
        // Brute force: average Ξ̂ over block pairs.
        let q = 24;
        for (a, b) in [(0usize, 0usize), (0, 1), (1, 3)] {
            let mut s = 0.0;
            for i in a * q..(a + 1) * q {
                for j in b * q..(b + 1) * q {
                    s += cov.entry(i, j);
                }
            }
            assert!((exact[(a, b)] - s / (q * q) as f64).abs() < 1e-14);
        }
        // Two-sample comparison of |T_K*| from the shortcut and from full series.
        let fast = bootstrap_from_cov(&cov, &BootStatistic::SubsamplingT { k: 4 }, 20_000, 14, &[0.05]).unwrap();
        let mut rng = stream_rng(15, 0);
        let mut y = vec![0.0; 96];
        let mut slow: Vec<f64> = (0..20_000)
            .map(|_| {
                cov.resample(&mut rng, &mut y);
                subsampling_t(&y, 4, 0.0).unwrap().statistic.abs()
            })
            .collect();
        slow.sort_by(f64::total_cmp);
        let d = fast
            .statistics
            .iter()
            .map(|s| {
                let fa = fast.statistics.partition_point(|v| v <= s) as f64 / 20_000.0;
                let fb = slow.partition_point(|v| v <= s) as f64 / 20_000.0;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max);
        // 1% two-sample KS critical value at n = m = 20,000 is about 0.0163.
        assert!(d < 0.0163, "{d}");
    }

    #[test]
    fn wald_bootstrap_runs() {
        let x = ProcessModel::ar1(0.5, 1.0).unwrap().simulate(128, 11).unwrap();
        let kernel = KernelSpec::parse("bartlett", 0.2, true).unwrap();
        let out = bootstrap_distribution(&x, &BootStatistic::Wald { kernel }, 4, 999, 12, &[0.05]).unwrap();
        assert!(out.critical_value(0.05) > 0.0);
        assert_eq!(out.redraws, 0);
    }
}
