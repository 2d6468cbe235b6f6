//! Normal, χ² and Student t functions, plus a seeded Monte Carlo engine.
//!
//! Integer-dof χ² CDFs use the finite recurrences
//! G_{k+2}(x) = G_k(x) − (x/2)^{k/2} e^{−x/2} / Γ(k/2 + 1), which are both
//! faster and more accurate than the general incomplete gamma in the inner
//! loops of the expansions.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use libm::{erf, erfc};
use statrs::function::{beta::beta_reg, erf::erfc_inv, gamma};

use crate::error::{Error, Result};
use crate::rng;

/// Largest dof handled by the finite recurrences.
const RECURRENCE_MAX_DOF: f64 = 300.0;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

fn is_small_integer(k: f64) -> bool {
    k.fract() == 0.0 && (1.0..=RECURRENCE_MAX_DOF).contains(&k)
}

/// Lower and upper tails (G_k(x), 1 − G_k(x)) by the finite recurrence.
fn chi2_tails_integer(k: f64, x: f64) -> (f64, f64) {
    let h = 0.5 * x;
    let e = (-h).exp();
    let (mut lower, mut upper, mut term, mut dof) = if (k as u64).is_multiple_of(2) {
        (-(-h).exp_m1(), e, h * e, 2.0)
    } else {
        let r = h.sqrt();
        (erf(r), erfc(r), r * e * 2.0 / PI.sqrt(), 1.0)
    };
    while dof < k {
        lower -= term;
        upper += term;
        dof += 2.0;
        term *= h / (0.5 * dof);
    }
    (lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0))
}

/// χ²_k CDF G_k(x). Zero for x ≤ 0.
pub fn chi2_cdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if is_small_integer(k) {
        chi2_tails_integer(k, x).0
    } else {
        gamma::gamma_lr(0.5 * k, 0.5 * x)
    }
}

/// Upper tail 1 − G_k(x), accurate when it is small.
pub fn chi2_sf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if is_small_integer(k) {
        chi2_tails_integer(k, x).1
    } else {
        gamma::gamma_ur(0.5 * k, 0.5 * x)
    }
}

/// χ²_k density.
pub fn chi2_pdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = 0.5 * k;
    ((a - 1.0) * x.ln() - 0.5 * x - a * 2f64.ln() - gamma::ln_gamma(a)).exp()
}

/// G₁'(x), the χ²₁ density.
pub fn g1_prime(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (-0.5 * x).exp() / (2.0 * PI * x).sqrt()
}

/// G₁''(x), derivative of the χ²₁ density.
pub fn g1_second(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    -g1_prime(x) * (x + 1.0) / (2.0 * x)
}

/// χ²_k quantile.
pub fn chi2_quantile(k: f64, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must be in (0, 1)");
    if k == 1.0 {
        let z = normal_quantile(0.5 + 0.5 * p);
        return z * z;
    }
    let mut hi = k.max(1.0);
    while chi2_cdf(k, hi) < p {
        hi *= 2.0;
    }
    invert_increasing(|x| chi2_cdf(k, x), |x| chi2_pdf(k, x), p, 0.0, hi, k)
}

/// Safeguarded Newton solve of cdf(x) = p inside [lo, hi].
fn invert_increasing(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    p: f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
) -> f64 {
    let mut x = start.clamp(lo, hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Student t density with `k` degrees of freedom.
pub fn t_pdf(k: f64, x: f64) -> f64 {
    let lc = gamma::ln_gamma(0.5 * (k + 1.0)) - gamma::ln_gamma(0.5 * k) - 0.5 * (k * PI).ln();
    (lc - 0.5 * (k + 1.0) * (x * x / k).ln_1p()).exp()
}

/// Student t CDF.
pub fn t_cdf(k: f64, x: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(0.5 * k, 0.5, k / (k + x * x));
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// P(|t_k| ≤ x); zero for x ≤ 0.
pub fn t_abs_cdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    beta_reg(0.5, 0.5 * k, x * x / (k + x * x))
}

/// P(|t_k| > x); one for x ≤ 0.
pub fn t_abs_sf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * k, 0.5, k / (k + x * x))
}

/// Student t quantile.
pub fn t_quantile(k: f64, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must be in (0, 1)");
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_quantile(k, 1.0 - p);
    }
    if k == 1.0 {
        return (PI * (p - 0.5)).tan();
    }
    let mut hi = normal_quantile(p).max(1.0);
    while t_cdf(k, hi) < p {
        hi *= 2.0;
    }
    invert_increasing(|x| t_cdf(k, x), |x| t_pdf(k, x), p, 0.0, hi, normal_quantile(p))
}

/// One draw of (Z + δ)/√(χ²_k/k) with independent Z and χ²_k.
pub fn noncentral_t_sample<R: Rng + ?Sized>(k: f64, delta: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let c = ChiSquared::new(k).expect("dof must be positive").sample(rng);
    (z + delta) / (c / k).sqrt()
}

/// Monte Carlo estimate of an expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCExpectation {
    pub value: f64,
    pub std_error: f64,
    pub reps: usize,
}

/// Running mean and centered sum of squares, merged with Chan's formula.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> MCExpectation {
        MCExpectation { value: self.mean, std_error: self.std_error(), reps: self.n }
    }
}

/// Running mean vector and co-moment matrix of a random vector, so that the
/// standard error of any fixed linear combination can be recovered.
#[derive(Debug, Clone, Default)]
pub struct VecMoments {
    n: usize,
    mean: Vec<f64>,
    /// Row-major d×d co-moment matrix.
    comoment: Vec<f64>,
}

impl VecMoments {
    pub fn new(dim: usize) -> Self {
        VecMoments { n: 0, mean: vec![0.0; dim], comoment: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let d = self.dim();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        let scale = (n - 1.0) / n;
        for i in 0..d {
            if delta[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                self.comoment[i * d + j] += scale * delta[i] * delta[j];
            }
        }
    }

    pub fn merge(&mut self, other: &VecMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..d {
            for j in 0..d {
                self.comoment[i * d + j] += other.comoment[i * d + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Estimate of c·E[x] with its standard error.
    pub fn combination(&self, c: &[f64]) -> MCExpectation {
        let d = self.dim();
        let value = c.iter().zip(&self.mean).map(|(a, m)| a * m).sum();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += c[i] * c[j] * self.comoment[i * d + j];
            }
        }
        let var = if self.n > 1 { q.max(0.0) / (self.n - 1) as f64 } else { 0.0 };
        MCExpectation { value, std_error: (var / self.n.max(1) as f64).sqrt(), reps: self.n }
    }

    /// Estimate of the i-th component.
    pub fn component(&self, i: usize) -> MCExpectation {
        let mut c = vec![0.0; self.dim()];
        c[i] = 1.0;
        self.combination(&c)
    }
}

/// Fills `out` with i.i.d. standard normals.
pub fn fill_normals<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Joint Monte Carlo pass: each replication draws `dim` standard normals and
/// `f` writes `outputs` values computed from them. All outputs share the
/// same draws, so linear combinations can be passed as extra outputs to get
/// their standard error directly.
pub fn mc_joint<F>(dim: usize, outputs: usize, reps: usize, seed: u64, f: F) -> Result<Vec<MCExpectation>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let batches = rng::batched(reps, seed, |rng, _, len| {
        let mut v = vec![0.0; dim];
        let mut out = vec![0.0; outputs];
        let mut acc = vec![Moments::default(); outputs];
        for _ in 0..len {
            fill_normals(rng, &mut v);
            f(&v, &mut out);
            for (a, &o) in acc.iter_mut().zip(&out) {
                if !o.is_finite() {
                    return Err(Error::NonFinite(format!("integrand returned {o}")));
                }
                a.push(o);
            }
        }
        Ok(acc)
    });
    let mut total = vec![Moments::default(); outputs];
    for b in batches {
        for (t, m) in total.iter_mut().zip(b?) {
            t.merge(&m);
        }
    }
    Ok(total.iter().map(Moments::estimate).collect())
}

/// Sample mean and standard error of `f` over `reps` draws of a
/// `dim`-vector of i.i.d. standard normals.
pub fn mc_expect<F>(f: F, dim: usize, reps: usize, seed: u64) -> Result<MCExpectation>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    mc_joint(dim, 1, reps, seed, |v, out| out[0] = f(v)).map(|mut e| e.remove(0))
}
