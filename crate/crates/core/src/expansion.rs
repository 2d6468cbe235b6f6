//! Higher-order approximations to the null distributions of T_K and F_T.
//!
//! The Monte Carlo parts condition on everything that has a closed form.
//! For T_K the numerator normal is integrated out given the denominator
//! χ²_{K−1} = D, so every expectation becomes a smooth function of D alone:
//! with c = Dx²/(K−1),
//!
//! ```text
//! E[χ²₁ G_{K−1}((K−1)χ²₁/x²)] = E[1 − G₃(c)]
//! E[χ²_{K−1} G₁(c)]           = (K−1) − E[D(1 − G₁(c))]
//! ```
//!
//! For ℵ the same is done for v₀ given the denominator Σλ_j v_j².

use crate::distributions::{
    chi2_cdf, chi2_sf, fill_normals, g1_prime, g1_second, normal_cdf, normal_pdf, t_abs_cdf, t_abs_sf, MCExpectation,
    Moments, VecMoments,
};
use crate::error::{invalid, Error, Result};
use crate::kernels::{DifferenceKernel, EigenSystem};
use crate::models::ProcessModel;
use crate::rng;
use crate::statistics::ProjectionBasis;

/// Value of an expansion term with its Monte Carlo error and a named
/// breakdown into parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionEstimate {
    pub value: f64,
    /// Zero for closed-form quantities.
    pub mc_std_error: f64,
    pub reps: usize,
    pub components: Vec<(String, f64)>,
}

impl ExpansionEstimate {
    fn closed(value: f64, components: Vec<(&str, f64)>) -> Self {
        ExpansionEstimate { value, mc_std_error: 0.0, reps: 0, components: named(components) }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// The value clamped to [0, 1], for reporting probabilities.
    pub fn clamped(&self) -> f64 {
        self.value.clamp(0.0, 1.0)
    }
}

fn named(parts: Vec<(&str, f64)>) -> Vec<(String, f64)> {
    parts.into_iter().map(|(n, v)| (n.to_string(), v)).collect()
}

fn check_tk_args(x: f64, k: usize, reps: usize) -> Result<()> {
    if k < 2 {
        return Err(invalid(format!("need K >= 2, got {k}")));
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(invalid(format!("need finite x >= 0, got {x}")));
    }
    if reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    Ok(())
}

/// 2x²G₁'(x²), the large-K limit of Υ(x;K)/K.
pub fn upsilon_limit(x: f64) -> f64 {
    2.0 * x * x * g1_prime(x * x)
}

/// Per-draw conditional tail terms for one (K, x): (1 − G₃(c), D(1 − G₁(c))).
fn tail_terms(d: f64, k: usize, x: f64) -> (f64, f64) {
    let c = d * x * x / (k - 1) as f64;
    (chi2_sf(3.0, c), d * chi2_sf(1.0, c))
}

/// Υ at several (K, x) pairs from one pass with common random numbers.
#[derive(Debug, Clone)]
pub struct UpsilonCurve {
    pub ks: Vec<usize>,
    pub xs: Vec<f64>,
    pub estimates: Vec<ExpansionEstimate>,
    /// Υ/K at entry i+1 minus Υ/K at entry i, with standard errors that
    /// account for the shared draws.
    pub step_differences: Vec<MCExpectation>,
}

/// Υ(x_i; K_i) for each i, sharing the normals behind every χ²_{K−1}.
pub fn upsilon_curve(ks: &[usize], xs: &[f64], reps: usize, seed: u64) -> Result<UpsilonCurve> {
    if ks.len() != xs.len() || ks.is_empty() {
        return Err(invalid("need one x per K"));
    }
    for (&k, &x) in ks.iter().zip(xs) {
        check_tk_args(x, k, reps)?;
    }
    let n = ks.len();
    let dim = ks.iter().max().copied().unwrap_or(2) - 1;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ks[i]);
    // Outputs: per entry (1 − G₃, D(1 − G₁), Υ draw), then n − 1 step differences.
    let est = crate::distributions::mc_joint(dim, 4 * n - 1, reps, seed, |v, out| {
        let mut d = 0.0;
        let mut used = 0;
        for &i in &order {
            let k = ks[i];
            while used < k - 1 {
                d += v[used] * v[used];
                used += 1;
            }
            let (u, a) = tail_terms(d, k, xs[i]);
            let kf = k as f64;
            out[3 * i] = u;
            out[3 * i + 1] = a;
            out[3 * i + 2] = -u - (kf + 1.0) * a;
        }
        for i in 0..n - 1 {
            out[3 * n + i] = out[3 * (i + 1) + 2] / ks[i + 1] as f64 - out[3 * i + 2] / ks[i] as f64;
        }
    })?;
    let mut estimates = Vec::with_capacity(n);
    for i in 0..n {
        let (k, x) = (ks[i], xs[i]);
        let kf = k as f64;
        let tail = t_abs_sf(kf - 1.0, x);
        let draw = &est[3 * i + 2];
        estimates.push(ExpansionEstimate {
            value: kf * kf * tail + draw.value,
            mc_std_error: draw.std_error,
            reps,
            components: named(vec![
                ("t_abs_cdf", 1.0 - tail),
                ("e_d_g1", kf - 1.0 - est[3 * i + 1].value),
                ("e_u_gk", est[3 * i].value),
            ]),
        });
    }
    let step_differences = (0..n - 1)
        .map(|i| {
            let closed = |j: usize| ks[j] as f64 * t_abs_sf(ks[j] as f64 - 1.0, xs[j]);
            let mut e = est[3 * n + i];
            e.value += closed(i + 1) - closed(i);
            e
        })
        .collect();
    Ok(UpsilonCurve { ks: ks.to_vec(), xs: xs.to_vec(), estimates, step_differences })
}

/// Υ(x;K) = −K²P(|t_{K−1}| ≤ x) + (K+1)E[χ²_{K−1}G₁(χ²_{K−1}x²/(K−1))]
/// − E[χ²₁G_{K−1}((K−1)χ²₁/x²)] + 1.
pub fn upsilon(x: f64, k: usize, reps: usize, seed: u64) -> Result<ExpansionEstimate> {
    Ok(upsilon_curve(&[k], &[x], reps, seed)?.estimates.remove(0))
}

/// Ψ(x;K) = P(|t_{K−1}| ≤ x) − (B/(2σ²T))Υ(x;K).
pub fn psi(x: f64, k: usize, model: &ProcessModel, t: usize, reps: usize, seed: u64) -> Result<ExpansionEstimate> {
    let ups = upsilon(x, k, reps, seed)?;
    let coef = model.b_coefficient() / (2.0 * model.lrv() * t as f64);
    let first = t_abs_cdf(k as f64 - 1.0, x);
    Ok(ExpansionEstimate {
        value: first - coef * ups.value,
        mc_std_error: coef.abs() * ups.mc_std_error,
        reps,
        components: named(vec![("first_order", first), ("bias_coefficient", coef), ("upsilon", ups.value)]),
    })
}

/// Υ_δ(x;K) = K²P(|t_{K−1,δ}| > x) − e₁(x) − (K+1)e₂(x) under a local
/// alternative with noncentrality δ.
pub fn upsilon_local(x: f64, k: usize, delta: f64, reps: usize, seed: u64) -> Result<ExpansionEstimate> {
    check_tk_args(x, k, reps)?;
    if !delta.is_finite() {
        return Err(invalid("delta must be finite"));
    }
    let kf = k as f64;
    // Given D, |Z + δ| > c with c = x√(D/(K−1)) splits into Z > c − δ and
    // Z < −c − δ; E[Z²1{Z > a}] = aφ(a) + Φ(−a), E[Z²1{Z < b}] = Φ(b) − bφ(b).
    let est = crate::distributions::mc_joint(k - 1, 4, reps, seed, |v, out| {
        let d: f64 = v.iter().map(|z| z * z).sum();
        let c = x * (d / (kf - 1.0)).sqrt();
        let (a, b) = (c - delta, -c - delta);
        let p = normal_cdf(-a) + normal_cdf(b);
        let e1 = a * normal_pdf(a) + normal_cdf(-a) + normal_cdf(b) - b * normal_pdf(b);
        let e2 = d * p;
        out[0] = p;
        out[1] = e1;
        out[2] = e2;
        out[3] = kf * kf * p - e1 - (kf + 1.0) * e2;
    })?;
    Ok(ExpansionEstimate {
        value: est[3].value,
        mc_std_error: est[3].std_error,
        reps,
        components: named(vec![("rejection_probability", est[0].value), ("e1", est[1].value), ("e2", est[2].value)]),
    })
}

/// Coefficients α, β, τ of the finite-T expansion, from the exact
/// group-mean covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl ExactCoefficients {
    pub fn new(model: &ProcessModel, k: usize, t: usize) -> Result<Self> {
        if k < 2 || !t.is_multiple_of(k) {
            return Err(Error::UnequalGroups { k, t });
        }
        let cov = model.group_mean_covariance(k, t / k)?;
        let s2 = model.lrv();
        let kf = k as f64;
        let mut diag = 0.0;
        let mut off = 0.0;
        for i in 0..k {
            diag += cov.get(i, i) - s2;
            for j in 0..k {
                if i != j {
                    off += cov.get(i, j);
                }
            }
        }
        Ok(ExactCoefficients {
            alpha: diag / (2.0 * s2),
            beta: (diag + off) / (2.0 * kf * s2),
            tau: diag / (2.0 * kf * s2) - off / (2.0 * kf * (kf - 1.0) * s2),
        })
    }

    /// The O(1/T) approximations −K²B/(2σ²T), −B/(2σ²T), −(K+1)B/(2σ²T).
    pub fn leading(model: &ProcessModel, k: usize, t: usize) -> Self {
        let u = -model.b_coefficient() / (2.0 * model.lrv() * t as f64);
        let kf = k as f64;
        ExactCoefficients { alpha: kf * kf * u, beta: u, tau: (kf + 1.0) * u }
    }
}

/// P(|T_K| > x) ≈ (1−α)P(|t_{K−1}| > x) + βE[U G_{K−1}((K−1)U/x²)]
/// + τ{K−1 − E[D G₁(Dx²/(K−1))]} with exact α, β, τ.
pub fn exact_coeff_expansion(
    x: f64,
    k: usize,
    model: &ProcessModel,
    t: usize,
    reps: usize,
    seed: u64,
) -> Result<ExpansionEstimate> {
    check_tk_args(x, k, reps)?;
    let co = ExactCoefficients::new(model, k, t)?;
    let est = crate::distributions::mc_joint(k - 1, 3, reps, seed, |v, out| {
        let d: f64 = v.iter().map(|z| z * z).sum();
        let (u, a) = tail_terms(d, k, x);
        out[0] = u;
        out[1] = a;
        out[2] = co.beta * u + co.tau * a;
    })?;
    let tail = t_abs_sf(k as f64 - 1.0, x);
    Ok(ExpansionEstimate {
        value: (1.0 - co.alpha) * tail + est[2].value,
        mc_std_error: est[2].std_error,
        reps,
        components: named(vec![
            ("alpha", co.alpha),
            ("beta", co.beta),
            ("tau", co.tau),
            ("first_order_tail", tail),
            ("e_u_gk", est[0].value),
            ("e_d_g1", k as f64 - 1.0 - est[1].value),
        ]),
    })
}

/// P(|T_K| ≤ x) ≈ G₁(x²) + x⁴G₁''(x²)/(K−1) − (BK/(Tσ²))x²G₁'(x²) for
/// K and T/K both large.
pub fn increasing_k_expansion(x: f64, k: usize, model: &ProcessModel, t: usize) -> Result<ExpansionEstimate> {
    if k < 3 {
        return Err(invalid(format!("need K >= 3, got {k}")));
    }
    let y = x * x;
    let first = chi2_cdf(1.0, y);
    let dof_term = y * y * g1_second(y) / (k - 1) as f64;
    let bias_term = -model.b_coefficient() * k as f64 / (t as f64 * model.lrv()) * y * g1_prime(y);
    Ok(ExpansionEstimate::closed(
        first + dof_term + bias_term,
        vec![("first_order", first), ("dof_term", dof_term), ("bias_term", bias_term)],
    ))
}

/// var(ξ₀), var(ξ₁), …, var(ξ_J) for the projections of a length-T series
/// from `model`, with J the basis truncation.
pub fn xi_variances(model: &ProcessModel, basis: &ProjectionBasis) -> Vec<f64> {
    let t = basis.t;
    let tf = t as f64;
    let lags = model.support(1e-17, t - 1);
    let gam: Vec<f64> = (0..=lags).map(|h| model.autocov(h as i64)).collect();
    let mut out = Vec::with_capacity(basis.truncation() + 1);
    out.push(gam[0] + 2.0 * (1..=lags).map(|h| (1.0 - h as f64 / tf) * gam[h]).sum::<f64>());
    for w in &basis.weights {
        let mut s = gam[0] * w.iter().map(|a| a * a).sum::<f64>();
        for h in 1..=lags {
            s += 2.0 * gam[h] * w[..t - h].iter().zip(&w[h..]).map(|(a, b)| a * b).sum::<f64>();
        }
        out.push(s / tf);
    }
    out
}

/// Monte Carlo weights E[(v_i² − 1)1{ℱ(v;J) ≤ x}], i = 0..J, and the limit
/// CDF P(ℱ ≤ x) over a grid of x, from one pass over v = (v₀, …, v_J).
#[derive(Debug, Clone)]
pub struct AlephWeights {
    pub eigenvalues: Vec<f64>,
    pub xs: Vec<f64>,
    pub reps: usize,
    /// Per x: moments of (w₀, …, w_J, P(ℱ ≤ x | denominator)).
    moments: Vec<VecMoments>,
}

impl AlephWeights {
    pub fn estimate(eigenvalues: &[f64], xs: &[f64], reps: usize, seed: u64) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.iter().any(|l| !(*l >= 0.0)) || eigenvalues.iter().all(|l| *l == 0.0) {
            return Err(invalid("need nonnegative eigenvalues, not all zero"));
        }
        if xs.is_empty() || xs.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(invalid("need finite x >= 0"));
        }
        if reps < 2 {
            return Err(invalid("reps must be at least 2"));
        }
        let j = eigenvalues.len();
        let dim = j + 2;
        // E[v_j² − 1] = 0, so any constant may be subtracted from G₁(xS);
        // G₁ at the mean of S removes most of the variance.
        let centers = control_centers(eigenvalues, xs);
        let batches = rng::batched(reps, seed, |rng, _, len| {
            let mut v = vec![0.0; j];
            let mut row = vec![0.0; dim];
            let mut acc = vec![VecMoments::new(dim); xs.len()];
            for _ in 0..len {
                // v₀ is integrated out: given S = Σλ_j v_j², P(v₀² ≤ xS) = G₁(xS)
                // and E[(v₀² − 1)1{v₀² ≤ xS}] = G₃(xS) − G₁(xS).
                let s = loop {
                    fill_normals(rng, &mut v);
                    let s: f64 = eigenvalues.iter().zip(&v).map(|(l, z)| l * z * z).sum();
                    if s > 0.0 {
                        break s;
                    }
                };
                for ((m, &x), &c) in acc.iter_mut().zip(xs).zip(&centers) {
                    let g1 = chi2_cdf(1.0, x * s);
                    row[0] = chi2_cdf(3.0, x * s) - g1;
                    for (r, z) in row[1..=j].iter_mut().zip(&v) {
                        *r = (z * z - 1.0) * (g1 - c);
                    }
                    row[j + 1] = g1;
                    m.push(&row);
                }
            }
            acc
        });
        let mut moments = vec![VecMoments::new(dim); xs.len()];
        for b in batches {
            for (t, m) in moments.iter_mut().zip(&b) {
                t.merge(m);
            }
        }
        Ok(AlephWeights { eigenvalues: eigenvalues.to_vec(), xs: xs.to_vec(), reps, moments })
    }

    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    /// E[(v_i² − 1)1{ℱ ≤ x}] at grid point `xi`.
    pub fn weight(&self, xi: usize, i: usize) -> MCExpectation {
        self.moments[xi].component(i)
    }

    /// P(ℱ ≤ x) at grid point `xi`.
    pub fn limit_cdf(&self, xi: usize) -> MCExpectation {
        self.moments[xi].component(self.truncation() + 1)
    }

    /// ℵ at grid point `xi` given var(ξ_i) − σ² for i = 0..J.
    pub fn aleph(&self, xi: usize, variance_gaps: &[f64], lrv: f64) -> Result<ExpansionEstimate> {
        let j = self.truncation();
        if variance_gaps.len() != j + 1 {
            return Err(invalid(format!("need {} variance gaps, got {}", j + 1, variance_gaps.len())));
        }
        let mut c: Vec<f64> = variance_gaps.iter().map(|g| g / (2.0 * lrv)).collect();
        c.push(0.0);
        let mean = self.moments[xi].mean();
        let parts: Vec<f64> = (0..=j).map(|i| c[i] * mean[i]).collect();
        let est = self.moments[xi].combination(&c);
        let mut components = vec![("limit_cdf".to_string(), mean[j + 1])];
        components.extend(parts.iter().enumerate().map(|(i, p)| (format!("term_{i}"), *p)));
        Ok(ExpansionEstimate { value: parts.iter().sum(), mc_std_error: est.std_error, reps: self.reps, components })
    }
}

fn control_centers(eigenvalues: &[f64], xs: &[f64]) -> Vec<f64> {
    let mean_s: f64 = eigenvalues.iter().sum();
    xs.iter().map(|x| chi2_cdf(1.0, x * mean_s)).collect()
}

/// Stored draws of the denominator Σλ_j v_j² and of v_j², for evaluating
/// P(ℱ ≤ x) and ℵ at many x without redrawing (root finding).
#[derive(Debug, Clone)]
pub struct LimitSample {
    pub eigenvalues: Vec<f64>,
    denominators: Vec<f64>,
    /// v_j² row-major, J per replication.
    squares: Vec<f64>,
}

impl LimitSample {
    pub fn draw(eigenvalues: &[f64], reps: usize, seed: u64) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.iter().any(|l| !(*l >= 0.0)) || eigenvalues.iter().all(|l| *l == 0.0) {
            return Err(invalid("need nonnegative eigenvalues, not all zero"));
        }
        if reps == 0 {
            return Err(invalid("reps must be at least 1"));
        }
        let j = eigenvalues.len();
        let parts = rng::batched(reps, seed, |rng, _, len| {
            let mut v = vec![0.0; j];
            let mut den = Vec::with_capacity(len);
            let mut sq = Vec::with_capacity(len * j);
            for _ in 0..len {
                let s = loop {
                    fill_normals(rng, &mut v);
                    let s: f64 = eigenvalues.iter().zip(&v).map(|(l, z)| l * z * z).sum();
                    if s > 0.0 {
                        break s;
                    }
                };
                den.push(s);
                sq.extend(v.iter().map(|z| z * z));
            }
            (den, sq)
        });
        let mut denominators = Vec::with_capacity(reps);
        let mut squares = Vec::with_capacity(reps * j);
        for (d, s) in parts {
            denominators.extend(d);
            squares.extend(s);
        }
        Ok(LimitSample { eigenvalues: eigenvalues.to_vec(), denominators, squares })
    }

    pub fn reps(&self) -> usize {
        self.denominators.len()
    }

    /// P(ℱ ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        self.denominators.iter().map(|s| chi2_cdf(1.0, x * s)).sum::<f64>() / self.reps() as f64
    }

    /// ℵ at x given var(ξ_i) − σ², i = 0..J.
    pub fn aleph(&self, x: f64, variance_gaps: &[f64], lrv: f64) -> f64 {
        let j = self.eigenvalues.len();
        let c = control_centers(&self.eigenvalues, &[x])[0];
        let mut sum = vec![0.0; j + 1];
        for (r, s) in self.denominators.iter().enumerate() {
            let g1 = chi2_cdf(1.0, x * s);
            sum[0] += chi2_cdf(3.0, x * s) - g1;
            for (acc, v2) in sum[1..].iter_mut().zip(&self.squares[r * j..(r + 1) * j]) {
                *acc += (v2 - 1.0) * (g1 - c);
            }
        }
        let n = self.reps() as f64;
        sum.iter().zip(variance_gaps).map(|(a, g)| g * a / n).sum::<f64>() / (2.0 * lrv)
    }
}

fn truncated_basis(eig: &EigenSystem, t: usize, k: Option<usize>) -> Result<ProjectionBasis> {
    let eig = match k {
        Some(k) if k == 0 || k > eig.truncation() => {
            return Err(invalid(format!("truncation {k} outside 1..={}", eig.truncation())));
        }
        Some(k) => eig.truncated(k),
        None => eig.clone(),
    };
    ProjectionBasis::new(&eig, t)
}

/// var(ξ_i) − σ² for i = 0..J.
pub fn variance_gaps(model: &ProcessModel, basis: &ProjectionBasis) -> Vec<f64> {
    let s2 = model.lrv();
    xi_variances(model, basis).into_iter().map(|v| v - s2).collect()
}

/// ℵ_T(x;K) = (1/2σ²)Σ_{i=0}^{K}(var ξ_i − σ²)E[(v_i² − 1)1{ℱ(v;K) ≤ x}].
/// `k = None` uses every pair in `eig`.
pub fn aleph(
    x: f64,
    eig: &EigenSystem,
    model: &ProcessModel,
    t: usize,
    k: Option<usize>,
    reps: usize,
    seed: u64,
) -> Result<ExpansionEstimate> {
    let basis = truncated_basis(eig, t, k)?;
    let weights = AlephWeights::estimate(&basis.eigenvalues, &[x], reps, seed)?;
    weights.aleph(0, &variance_gaps(model, &basis), model.lrv())
}

/// P(ℱ(v;J) ≤ x) with J the truncation of `eig`.
pub fn fixed_b_limit_cdf(eig: &EigenSystem, x: f64, reps: usize, seed: u64) -> Result<ExpansionEstimate> {
    let w = AlephWeights::estimate(&eig.eigenvalues, &[x], reps, seed)?;
    let e = w.limit_cdf(0);
    Ok(ExpansionEstimate { value: e.value, mc_std_error: e.std_error, reps, components: Vec::new() })
}

fn check_small_b(b: f64, t: usize) -> Result<()> {
    if !(b > 0.0 && b <= 0.5) || t == 0 {
        return Err(invalid(format!("need b in (0, 0.5] and T > 0, got b = {b}, T = {t}")));
    }
    Ok(())
}

/// −(g_q W_q/(σ²(bT)^q))G₁'(x)x, the small-b limit of ℵ_{T,b}(x;∞).
pub fn fix_small_leading(x: f64, b: f64, t: usize, model: &ProcessModel, kernel: DifferenceKernel) -> Result<f64> {
    check_small_b(b, t)?;
    let p = kernel.parzen_exponent();
    let scale = (b * t as f64).powi(p.q as i32);
    Ok(-p.g * model.weighted_moment(p.q) / (model.lrv() * scale) * g1_prime(x) * x)
}

/// G₁(x) + (c₂G₁''(x)x² − c₁G₁'(x)x)b − (g_q W_q/(σ²(bT)^q))G₁'(x)x.
pub fn small_b_second_order(
    x: f64,
    b: f64,
    t: usize,
    model: &ProcessModel,
    kernel: DifferenceKernel,
) -> Result<ExpansionEstimate> {
    let bias_term = fix_small_leading(x, b, t, model, kernel)?;
    let c = kernel.constants();
    let first = chi2_cdf(1.0, x);
    let fixed_b_term = (c.c2 * g1_second(x) * x * x - c.c1 * g1_prime(x) * x) * b;
    Ok(ExpansionEstimate::closed(
        first + fixed_b_term + bias_term,
        vec![("first_order", first), ("fixed_b_term", fixed_b_term), ("bias_term", bias_term)],
    ))
}

/// Empirical CDF helper shared by the tests and the harness: fraction of
/// `reps` draws of `stat` at or below `x`, with its binomial standard error.
pub fn empirical_cdf<F>(reps: usize, seed: u64, stat: F) -> Result<MCExpectation>
where
    F: Fn(&mut rng::StreamRng) -> Result<bool> + Sync,
{
    let parts = rng::batched(reps, seed, |rng, _, len| {
        let mut m = Moments::default();
        for _ in 0..len {
            m.push(f64::from(stat(rng)?));
        }
        Ok::<_, Error>(m)
    });
    let mut total = Moments::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.estimate())
}
