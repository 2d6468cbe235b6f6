//! Stationary Gaussian processes given by their autocovariance sequence.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Parametric family or finite autocovariance table.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Iid { variance: f64 },
    Ar1 { rho: f64, innov_variance: f64 },
    Ma1 { theta: f64, innov_variance: f64 },
    Arma11 { rho: f64, theta: f64, innov_variance: f64 },
    /// γ(0), γ(1), …, γ(H); zero beyond H.
    Custom(Vec<f64>),
}

/// A validated process. The long-run variance is checked to be positive at
/// construction, so every model in circulation has σ² > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    kind: ModelKind,
}

/// Smallest admissible long-run variance.
pub const LRV_FLOOR: f64 = 1e-12;

impl ProcessModel {
    pub fn new(kind: ModelKind) -> Result<Self> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be finite")))
            }
        };
        let positive = |v: f64, what: &str| {
            finite(v, what)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive, got {v}")))
            }
        };
        let stationary = |rho: f64| {
            finite(rho, "rho")?;
            if rho.abs() < 1.0 {
                Ok(())
            } else {
                Err(invalid(format!("|rho| must be below 1, got {rho}")))
            }
        };
        match &kind {
            ModelKind::Iid { variance } => positive(*variance, "variance")?,
            ModelKind::Ar1 { rho, innov_variance } => {
                stationary(*rho)?;
                positive(*innov_variance, "innovation variance")?;
            }
            ModelKind::Ma1 { theta, innov_variance } => {
                finite(*theta, "theta")?;
                positive(*innov_variance, "innovation variance")?;
            }
            ModelKind::Arma11 { rho, theta, innov_variance } => {
                stationary(*rho)?;
                finite(*theta, "theta")?;
                positive(*innov_variance, "innovation variance")?;
            }
            ModelKind::Custom(table) => {
                if table.is_empty() {
                    return Err(invalid("autocovariance table is empty"));
                }
                for &g in table {
                    finite(g, "autocovariance")?;
                }
                positive(table[0], "gamma(0)")?;
            }
        }
        let model = ProcessModel { kind };
        let s2 = model.lrv();
        if s2.is_nan() || s2 <= LRV_FLOOR {
            return Err(Error::NonPositiveLrv(s2));
        }
        Ok(model)
    }

    pub fn iid(variance: f64) -> Result<Self> {
        Self::new(ModelKind::Iid { variance })
    }

    pub fn ar1(rho: f64, innov_variance: f64) -> Result<Self> {
        Self::new(ModelKind::Ar1 { rho, innov_variance })
    }

    pub fn ma1(theta: f64, innov_variance: f64) -> Result<Self> {
        Self::new(ModelKind::Ma1 { theta, innov_variance })
    }

    pub fn arma11(rho: f64, theta: f64, innov_variance: f64) -> Result<Self> {
        Self::new(ModelKind::Arma11 { rho, theta, innov_variance })
    }

    pub fn custom(table: Vec<f64>) -> Result<Self> {
        Self::new(ModelKind::Custom(table))
    }

    /// Parses a table with one `h value` pair per line, h = 0, 1, 2, ….
    /// Blank lines and lines starting with `#` are skipped.
    pub fn custom_from_text(text: &str) -> Result<Self> {
        let mut table = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(h), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(invalid(format!("line {}: expected `h value`", lineno + 1)));
            };
            let h: usize = h.parse().map_err(|_| invalid(format!("line {}: bad lag {h:?}", lineno + 1)))?;
            let v: f64 = v.parse().map_err(|_| invalid(format!("line {}: bad value {v:?}", lineno + 1)))?;
            if h != table.len() {
                return Err(invalid(format!("line {}: lag {h} out of order, expected {}", lineno + 1, table.len())));
            }
            table.push(v);
        }
        Self::custom(table)
    }

    pub fn custom_from_path(path: &Path) -> Result<Self> {
        Self::custom_from_text(&std::fs::read_to_string(path)?)
    }

    /// Parses `iid[:VAR]`, `ar1:RHO[:VAR]`, `ma1:THETA[:VAR]`,
    /// `arma11:RHO:THETA[:VAR]` or `custom:PATH`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.splitn(2, ':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let rest = parts.next();
        if name == "custom" {
            let path = rest.ok_or_else(|| invalid("custom model needs a path"))?;
            return Self::custom_from_path(Path::new(path));
        }
        let nums: Vec<f64> = match rest {
            None => Vec::new(),
            Some(r) => r
                .split(':')
                .map(|s| s.parse::<f64>().map_err(|_| invalid(format!("bad number {s:?} in model {spec:?}"))))
                .collect::<Result<_>>()?,
        };
        let arity = |min: usize, max: usize| {
            if nums.len() < min || nums.len() > max {
                Err(invalid(format!("model {spec:?} takes {min} to {max} parameters")))
            } else {
                Ok(())
            }
        };
        match name.as_str() {
            "iid" => {
                arity(0, 1)?;
                Self::iid(nums.first().copied().unwrap_or(1.0))
            }
            "ar1" => {
                arity(1, 2)?;
                Self::ar1(nums[0], nums.get(1).copied().unwrap_or(1.0))
            }
            "ma1" => {
                arity(1, 2)?;
                Self::ma1(nums[0], nums.get(1).copied().unwrap_or(1.0))
            }
            "arma11" => {
                arity(2, 3)?;
                Self::arma11(nums[0], nums[1], nums.get(2).copied().unwrap_or(1.0))
            }
            _ => Err(invalid(format!("unknown model {spec:?}"))),
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    /// γ(0) and γ(1) of the ARMA(1,1) family, AR1 and MA1 included.
    fn arma_gammas(rho: f64, theta: f64, s2: f64) -> (f64, f64) {
        let d = 1.0 - rho * rho;
        let g0 = s2 * (1.0 + 2.0 * rho * theta + theta * theta) / d;
        let g1 = s2 * (1.0 + rho * theta) * (rho + theta) / d;
        (g0, g1)
    }

    /// γ(|h|).
    pub fn autocov(&self, h: i64) -> f64 {
        let h = h.unsigned_abs();
        match &self.kind {
            ModelKind::Iid { variance } => {
                if h == 0 {
                    *variance
                } else {
                    0.0
                }
            }
            ModelKind::Ar1 { rho, innov_variance } => innov_variance * rho.powi(h.min(i32::MAX as u64) as i32) / (1.0 - rho * rho),
            ModelKind::Ma1 { theta, innov_variance } => match h {
                0 => innov_variance * (1.0 + theta * theta),
                1 => innov_variance * theta,
                _ => 0.0,
            },
            ModelKind::Arma11 { rho, theta, innov_variance } => {
                let (g0, g1) = Self::arma_gammas(*rho, *theta, *innov_variance);
                if h == 0 {
                    g0
                } else {
                    g1 * rho.powi((h - 1).min(i32::MAX as u64) as i32)
                }
            }
            ModelKind::Custom(t) => t.get(h as usize).copied().unwrap_or(0.0),
        }
    }

    /// Long-run variance σ² = Σ_h γ(h).
    pub fn lrv(&self) -> f64 {
        match &self.kind {
            ModelKind::Iid { variance } => *variance,
            ModelKind::Ar1 { rho, innov_variance } => innov_variance / ((1.0 - rho) * (1.0 - rho)),
            ModelKind::Ma1 { theta, innov_variance } => innov_variance * (1.0 + theta) * (1.0 + theta),
            ModelKind::Arma11 { rho, theta, innov_variance } => innov_variance * (1.0 + theta) * (1.0 + theta) / ((1.0 - rho) * (1.0 - rho)),
            ModelKind::Custom(t) => t[0] + 2.0 * t[1..].iter().sum::<f64>(),
        }
    }

    /// W_q = Σ_h |h|^q γ(h). Closed forms for q ∈ {1, 2} on the ARMA
    /// family; otherwise a direct sum stopped once the geometric tail bound
    /// drops below 1e−12.
    pub fn weighted_moment(&self, q: u32) -> f64 {
        assert!(q >= 1, "moment order must be at least 1");
        let arma = |rho: f64, g1: f64| match q {
            1 => Some(2.0 * g1 / ((1.0 - rho) * (1.0 - rho))),
            2 => Some(2.0 * g1 * (1.0 + rho) / (1.0 - rho).powi(3)),
            _ => None,
        };
        let closed = match &self.kind {
            ModelKind::Iid { .. } => Some(0.0),
            ModelKind::Ma1 { theta, innov_variance } => Some(2.0 * theta * innov_variance),
            ModelKind::Ar1 { rho, innov_variance } => arma(*rho, Self::arma_gammas(*rho, 0.0, *innov_variance).1),
            ModelKind::Arma11 { rho, theta, innov_variance } => arma(*rho, Self::arma_gammas(*rho, *theta, *innov_variance).1),
            ModelKind::Custom(t) => Some(2.0 * t.iter().enumerate().map(|(h, g)| (h as f64).powi(q as i32) * g).sum::<f64>()),
        };
        closed.unwrap_or_else(|| self.direct_weighted_moment(q))
    }

    fn direct_weighted_moment(&self, q: u32) -> f64 {
        let rho = match &self.kind {
            ModelKind::Ar1 { rho, .. } | ModelKind::Arma11 { rho, .. } => rho.abs(),
            _ => 0.0,
        };
        let mut sum = 0.0;
        let mut h = 1u64;
        loop {
            let term = (h as f64).powi(q as i32) * self.autocov(h as i64);
            sum += 2.0 * term;
            // For h past q/(1−ρ) the terms decay at least geometrically with
            // ratio r = ((h+1)/h)^q ρ < 1, so the tail is below |term| r/(1−r).
            let r = ((h + 1) as f64 / h as f64).powi(q as i32) * rho;
            if r < 1.0 && 2.0 * term.abs() * r / (1.0 - r) < 1e-12 {
                break;
            }
            h += 1;
        }
        sum
    }

    /// B = Σ_h |h| γ(h).
    pub fn b_coefficient(&self) -> f64 {
        self.weighted_moment(1)
    }

    /// Largest lag with |γ(h)| above `rel_tol`·γ(0), capped at `cap`.
    pub fn support(&self, rel_tol: f64, cap: usize) -> usize {
        match &self.kind {
            ModelKind::Iid { .. } => 0,
            ModelKind::Ma1 { .. } => 1.min(cap),
            ModelKind::Custom(t) => (t.len() - 1).min(cap),
            ModelKind::Ar1 { rho, .. } | ModelKind::Arma11 { rho, .. } => {
                if *rho == 0.0 {
                    return 1.min(cap);
                }
                let g0 = self.autocov(0);
                let g1 = self.autocov(1).abs().max(f64::MIN_POSITIVE);
                // |γ(h)| = |γ(1)| |ρ|^{h−1}
                let h = 1.0 + ((rel_tol * g0 / g1).ln() / rho.abs().ln()).max(0.0);
                (h.ceil() as usize).min(cap)
            }
        }
    }

    /// Group-mean covariance Σ_T for K groups of size q.
    pub fn group_mean_covariance(&self, k: usize, q: usize) -> Result<GroupCovariance> {
        if k < 2 || q < 1 {
            return Err(invalid(format!("need K >= 2 and q >= 1, got K = {k}, q = {q}")));
        }
        let qi = q as i64;
        let band: Vec<f64> = (0..k as i64)
            .map(|d| {
                (1 - qi..qi)
                    .map(|h| (qi - h.abs()) as f64 / q as f64 * self.autocov(h - d * qi))
                    .sum()
            })
            .collect();
        let mut matrix = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                matrix[i * k + j] = band[i.abs_diff(j)];
            }
        }
        Ok(GroupCovariance { k, q, matrix })
    }

    /// Exact sampler for series of length `t`.
    pub fn sampler(&self, t: usize) -> Result<GaussianSampler> {
        GaussianSampler::new(self, t)
    }

    /// One exact draw of length `t`, deterministic in `seed`.
    pub fn simulate(&self, t: usize, seed: u64) -> Result<Vec<f64>> {
        let sampler = self.sampler(t)?;
        let mut out = vec![0.0; t];
        sampler.draw(&mut rng::stream_rng(seed, 0), &mut out);
        Ok(out)
    }

    /// Short label such as `ar1(0.5,1)`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ProcessModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ModelKind::Iid { variance } => write!(f, "iid({variance})"),
            ModelKind::Ar1 { rho, innov_variance } => write!(f, "ar1({rho},{innov_variance})"),
            ModelKind::Ma1 { theta, innov_variance } => write!(f, "ma1({theta},{innov_variance})"),
            ModelKind::Arma11 { rho, theta, innov_variance } => write!(f, "arma11({rho},{theta},{innov_variance})"),
            ModelKind::Custom(t) => write!(f, "custom({} lags)", t.len()),
        }
    }
}

/// Covariance of the scaled group means Y_i = √q(μ̂_i − μ₀).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCovariance {
    pub k: usize,
    pub q: usize,
    /// Row-major K×K matrix.
    pub matrix: Vec<f64>,
}

impl GroupCovariance {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.k + j]
    }
}

/// Innovations form of the Toeplitz covariance via Durbin–Levinson:
/// X_n = Σ_k φ_{n,k} X_{n−k} + √v_n e_n.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    t: usize,
    /// Predictor coefficients for steps 0..rows.len(); later steps reuse the last row.
    rows: Vec<Vec<f64>>,
    scales: Vec<f64>,
}

impl GaussianSampler {
    fn new(model: &ProcessModel, t: usize) -> Result<Self> {
        if t < 2 {
            return Err(invalid(format!("series length must be at least 2, got {t}")));
        }
        // Built-in families have partial autocorrelations that vanish or
        // decay geometrically; once negligible the recursion is frozen.
        let may_freeze = !matches!(model.kind, ModelKind::Custom(_));
        let g: Vec<f64> = (0..t).map(|h| model.autocov(h as i64)).collect();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
        let mut scales = vec![g[0].sqrt()];
        let mut phi: Vec<f64> = Vec::new();
        let mut v = g[0];
        for n in 1..t {
            let acc: f64 = phi.iter().enumerate().map(|(k, p)| p * g[n - 1 - k]).sum();
            let kappa = (g[n] - acc) / v;
            let mut next = Vec::with_capacity(n);
            for k in 0..phi.len() {
                next.push(phi[k] - kappa * phi[phi.len() - 1 - k]);
            }
            next.push(kappa);
            v *= 1.0 - kappa * kappa;
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::FactorizationFailure { step: n, variance: v });
            }
            if may_freeze && kappa.abs() < 1e-16 {
                break;
            }
            phi = next;
            rows.push(phi.clone());
            scales.push(v.sqrt());
        }
        Ok(GaussianSampler { t, rows, scales })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    /// Fills `out` (length T) with one draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.t, "output length must equal T");
        let last = self.rows.len() - 1;
        for n in 0..self.t {
            let r = n.min(last);
            let row = &self.rows[r];
            let pred: f64 = row.iter().enumerate().map(|(k, p)| p * out[n - 1 - k]).sum();
            let e: f64 = rng.sample(StandardNormal);
            out[n] = pred + self.scales[r] * e;
        }
    }
}
