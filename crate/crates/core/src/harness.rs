//! Reproducible Monte Carlo experiments: the Υ/K surface, size and power
//! tables across critical-value methods, and convergence-rate diagnostics.
//!
//! Every cell draws from seeds derived from (master seed, cell index), so a
//! run is bit-reproducible regardless of scheduling.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_from_cov, default_taper_width, BootStatistic, TaperedCovariance};
use crate::distributions::{
    chi2_quantile, normal_quantile, t_abs_cdf, t_quantile, MCExpectation, Moments,
};
use crate::error::{invalid, Error, Result};
use crate::expansion::{
    increasing_k_expansion, psi, small_b_second_order, upsilon_curve, upsilon_limit, upsilon_local,
    variance_gaps, AlephWeights, LimitSample,
};
use crate::kernels::{eigensystem, EigenSystem, KernelSpec, Truncation, DEFAULT_NODES};
use crate::models::ProcessModel;
use crate::rng::{self, derive_seed};
use crate::statistics::{subsampling_t, t_from_group_means, wald_f, ProjectionBasis};

/// How the long-run variance is estimated in a cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    /// Subsampling t with K groups.
    Groups(usize),
    /// Kernel Wald statistic F_T(∞).
    Kernel(KernelSpec),
}

impl Smoothing {
    pub fn label(&self) -> String {
        match self {
            Smoothing::Groups(k) => format!("K={k}"),
            Smoothing::Kernel(s) => format!("{}(b={})", s.label(), s.b),
        }
    }
}

/// Critical-value rule being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// t_{K−1} quantile, or the quantile of the fixed-b limit ℱ(∞).
    FirstOrder,
    /// Root of Ψ, or of P(ℱ ≤ x) + ℵ_T(x).
    SecondOrder,
    /// Standard normal / χ²₁ quantile.
    Naive,
    /// Root of the increasing-K expansion for T_K, or of the small-b
    /// expansion for F_T.
    SmallB,
    /// Gaussian dependent bootstrap.
    Bootstrap,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::FirstOrder, Method::SecondOrder, Method::Naive, Method::SmallB, Method::Bootstrap];

    pub fn id(&self) -> &'static str {
        match self {
            Method::FirstOrder => "first_order",
            Method::SecondOrder => "second_order",
            Method::Naive => "naive",
            Method::SmallB => "small_b",
            Method::Bootstrap => "bootstrap",
        }
    }

    pub fn from_id(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.id() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub models: Vec<ProcessModel>,
    pub ts: Vec<usize>,
    pub smoothing: Vec<Smoothing>,
    pub alphas: Vec<f64>,
    /// Outer Monte Carlo replications per cell.
    pub reps: usize,
    /// Bootstrap replications per outer draw.
    pub inner_reps: usize,
    /// Replications behind each Monte Carlo expansion evaluation.
    pub expansion_reps: usize,
    /// Bootstrap taper width; `None` uses the default rule.
    pub taper: Option<usize>,
    pub methods: Vec<Method>,
    /// Local alternatives μ₀ + δσ/√T for power runs.
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(id: &str, seed: u64) -> Self {
        ExperimentConfig {
            id: id.to_string(),
            models: Vec::new(),
            ts: Vec::new(),
            smoothing: Vec::new(),
            alphas: vec![0.05],
            reps: 50_000,
            inner_reps: 999,
            expansion_reps: 200_000,
            taper: None,
            methods: Method::ALL.to_vec(),
            deltas: Vec::new(),
            seed,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.ts.is_empty() || self.smoothing.is_empty() || self.alphas.is_empty() {
            return Err(invalid("model, T, smoothing and alpha grids must be nonempty"));
        }
        if self.methods.is_empty() {
            return Err(invalid("need at least one method"));
        }
        if self.reps < 1000 {
            return Err(invalid(format!("need reps >= 1000, got {}", self.reps)));
        }
        if self.expansion_reps < 1000 {
            return Err(invalid(format!("need expansion reps >= 1000, got {}", self.expansion_reps)));
        }
        if self.methods.contains(&Method::Bootstrap) && self.inner_reps < 99 {
            return Err(invalid(format!("need inner reps >= 99, got {}", self.inner_reps)));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(invalid(format!("alpha {a} outside (0, 1)")));
        }
        Ok(())
    }

    /// SHA-256 of the canonical text form of the configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cells in (model, T, smoothing) order.
    fn cells(&self) -> Vec<(usize, &ProcessModel, usize, &Smoothing)> {
        let mut out = Vec::new();
        for m in &self.models {
            for &t in &self.ts {
                for s in &self.smoothing {
                    out.push((out.len(), m, t, s));
                }
            }
        }
        out
    }
}

/// Increasing-function root: the x in [lo, hi] with f(x) = target, to
/// within `tol` in f or when the bracket collapses.
pub fn solve_increasing<F: FnMut(f64) -> Result<f64>>(mut f: F, target: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let v = f(m)?.clamp(0.0, 1.0);
        if (v - target).abs() < tol || b - a < 1e-12 * b.max(1.0) {
            return Ok(m);
        }
        if v < target {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Quantities shared by all methods in a cell: critical values and the
/// expansion used for predicted rates.
enum CellPlan {
    Groups { k: usize },
    Kernel { kernel: KernelSpec, sample: LimitSample, gaps: Vec<f64>, lrv: f64 },
}

impl CellPlan {
    fn new(model: &ProcessModel, t: usize, smoothing: &Smoothing, cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        match smoothing {
            Smoothing::Groups(k) => {
                if *k < 2 || !t.is_multiple_of(*k) {
                    return Err(Error::UnequalGroups { k: *k, t });
                }
                Ok(CellPlan::Groups { k: *k })
            }
            Smoothing::Kernel(kernel) => {
                let eig = eigensystem(kernel, DEFAULT_NODES, Truncation::default())?;
                let basis = ProjectionBasis::new(&eig, t)?;
                let sample = LimitSample::draw(&eig.eigenvalues, cfg.expansion_reps, seed)?;
                Ok(CellPlan::Kernel { kernel: kernel.clone(), sample, gaps: variance_gaps(model, &basis), lrv: model.lrv() })
            }
        }
    }

    /// Second-order prediction of P(stat ≤ x) on the statistic's own scale.
    fn second_order_cdf(&self, x: f64, model: &ProcessModel, t: usize, reps: usize, seed: u64) -> Result<f64> {
        match self {
            CellPlan::Groups { k, .. } => Ok(psi(x, *k, model, t, reps, seed)?.value),
            CellPlan::Kernel { sample, gaps, lrv, .. } => Ok(sample.cdf(x) + sample.aleph(x, gaps, *lrv)),
        }
    }

    fn critical_value(&self, method: Method, alpha: f64, model: &ProcessModel, t: usize, reps: usize, seed: u64) -> Result<f64> {
        let target = 1.0 - alpha;
        match (self, method) {
            (_, Method::Bootstrap) => Ok(f64::NAN),
            (CellPlan::Groups { k, .. }, Method::FirstOrder) => Ok(t_quantile(*k as f64 - 1.0, 1.0 - alpha / 2.0)),
            (CellPlan::Groups { .. }, Method::Naive) => Ok(normal_quantile(1.0 - alpha / 2.0)),
            (CellPlan::Groups { k, .. }, Method::SecondOrder) => {
                let hi = 10.0 * t_quantile(*k as f64 - 1.0, 1.0 - alpha / 2.0);
                solve_increasing(|x| Ok(psi(x, *k, model, t, reps, seed)?.value), target, 0.0, hi, 1e-6)
            }
            (CellPlan::Groups { k, .. }, Method::SmallB) => {
                let hi = 10.0 * t_quantile(*k as f64 - 1.0, 1.0 - alpha / 2.0);
                solve_increasing(|x| Ok(increasing_k_expansion(x, *k, model, t)?.value), target, 1e-9, hi, 1e-6)
            }
            (CellPlan::Kernel { sample, .. }, Method::FirstOrder) => {
                let hi = 10.0 * chi2_quantile(1.0, target);
                let mut hi = hi;
                while sample.cdf(hi) < target {
                    hi *= 2.0;
                }
                solve_increasing(|x| Ok(sample.cdf(x)), target, 0.0, hi, 1e-6)
            }
            (CellPlan::Kernel { .. }, Method::Naive) => Ok(chi2_quantile(1.0, target)),
            (CellPlan::Kernel { sample, gaps, lrv, .. }, Method::SecondOrder) => {
                let mut hi = 10.0 * chi2_quantile(1.0, target);
                while sample.cdf(hi) < target {
                    hi *= 2.0;
                }
                solve_increasing(|x| Ok(sample.cdf(x) + sample.aleph(x, gaps, *lrv)), target, 0.0, hi, 1e-6)
            }
            (CellPlan::Kernel { kernel, .. }, Method::SmallB) => {
                let dk = kernel
                    .difference_kernel()
                    .ok_or_else(|| invalid("small-b expansion needs a built-in difference kernel"))?;
                let hi = 10.0 * chi2_quantile(1.0, target);
                solve_increasing(|x| Ok(small_b_second_order(x, kernel.b, t, model, dk)?.value), target, 1e-9, hi, 1e-6)
            }
        }
    }

    fn statistic(&self, series: &[f64], mu0: f64) -> Result<f64> {
        match self {
            CellPlan::Groups { k, .. } => Ok(subsampling_t(series, *k, mu0)?.statistic.abs()),
            CellPlan::Kernel { kernel, .. } => Ok(wald_f(series, kernel, mu0)?.statistic),
        }
    }

    fn boot_statistic(&self) -> BootStatistic {
        match self {
            CellPlan::Groups { k, .. } => BootStatistic::SubsamplingT { k: *k },
            CellPlan::Kernel { kernel, .. } => BootStatistic::Wald { kernel: kernel.clone() },
        }
    }
}

/// One line of a size table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpRow {
    pub method: String,
    pub model: String,
    pub t: usize,
    pub smoothing: String,
    pub alpha: f64,
    pub critical_value: f64,
    pub rate: f64,
    pub se: f64,
    /// Rejection rate at this critical value according to the
    /// second-order expansion (NaN for the bootstrap).
    pub predicted: f64,
    pub reps: usize,
    /// Replications whose statistic could not be computed.
    pub failures: usize,
    pub error: Option<String>,
}

impl ErpRow {
    pub const HEADER: &'static str =
        "method,model,T,smoothing,alpha,critical_value,rate,se,predicted,reps,failures,error";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            csv_field(&self.model),
            self.t,
            csv_field(&self.smoothing),
            self.alpha,
            fmt_num(self.critical_value),
            fmt_num(self.rate),
            fmt_num(self.se),
            fmt_num(self.predicted),
            self.reps,
            self.failures,
            csv_field(self.error.as_deref().unwrap_or(""))
        )
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rejection counts for every (method, α) of one cell, shifting the mean
/// by `shift` before testing μ = 0.
fn simulate_cell(
    plan: &CellPlan,
    model: &ProcessModel,
    t: usize,
    methods: &[Method],
    alphas: &[f64],
    cvs: &[Vec<f64>],
    cfg: &ExperimentConfig,
    shift: f64,
    seed: u64,
) -> Result<(Vec<Vec<Moments>>, usize)> {
    let sampler = model.sampler(t)?;
    let boot = methods.contains(&Method::Bootstrap);
    let l = cfg.taper.unwrap_or_else(|| default_taper_width(t));
    let boot_stat = plan.boot_statistic();
    let parts = rng::batched(cfg.reps, seed, |rng, start, len| {
        let mut acc = vec![vec![Moments::default(); alphas.len()]; methods.len()];
        let mut failures = 0usize;
        let mut x = vec![0.0; t];
        for r in start..start + len {
            sampler.draw(rng, &mut x);
            x.iter_mut().for_each(|v| *v += shift);
            let stat = match plan.statistic(&x, 0.0) {
                Ok(s) => s,
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            let boot_cvs = if boot {
                let inner = derive_seed(seed, r as u64 + 1);
                let out = TaperedCovariance::new(&x, l).and_then(|c| bootstrap_from_cov(&c, &boot_stat, cfg.inner_reps, inner, alphas));
                match out {
                    Ok(o) => Some(o.critical_values.iter().map(|c| c.1).collect::<Vec<_>>()),
                    Err(_) => None,
                }
            } else {
                None
            };
            for (mi, m) in methods.iter().enumerate() {
                for ai in 0..alphas.len() {
                    let cv = if *m == Method::Bootstrap {
                        match &boot_cvs {
                            Some(c) => c[ai],
                            None => continue,
                        }
                    } else {
                        cvs[mi][ai]
                    };
                    acc[mi][ai].push(f64::from(stat > cv));
                }
            }
        }
        (acc, failures)
    });
    let mut total = vec![vec![Moments::default(); alphas.len()]; methods.len()];
    let mut failures = 0;
    for (acc, f) in parts {
        failures += f;
        for (trow, arow) in total.iter_mut().zip(&acc) {
            for (tm, am) in trow.iter_mut().zip(arow) {
                tm.merge(am);
            }
        }
    }
    Ok((total, failures))
}

/// Size table: rejection rates of every configured method under the null.
pub fn run_erp(cfg: &ExperimentConfig) -> Result<Vec<ErpRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (ci, model, t, smoothing) in cfg.cells() {
        let cell_seed = derive_seed(cfg.seed, ci as u64);
        let exp_seed = derive_seed(cell_seed, u64::MAX);
        let base = |method: Method, alpha: f64| ErpRow {
            method: method.id().to_string(),
            model: model.label(),
            t,
            smoothing: smoothing.label(),
            alpha,
            critical_value: f64::NAN,
            rate: f64::NAN,
            se: f64::NAN,
            predicted: f64::NAN,
            reps: cfg.reps,
            failures: 0,
            error: None,
        };
        let outcome = (|| -> Result<Vec<ErpRow>> {
            let plan = CellPlan::new(model, t, smoothing, cfg, exp_seed)?;
            let mut cvs = Vec::new();
            let mut preds = Vec::new();
            for &m in &cfg.methods {
                let mut row_cv = Vec::new();
                let mut row_pred = Vec::new();
                for &a in &cfg.alphas {
                    let cv = plan.critical_value(m, a, model, t, cfg.expansion_reps, exp_seed)?;
                    let pred = if cv.is_nan() {
                        f64::NAN
                    } else {
                        1.0 - plan.second_order_cdf(cv, model, t, cfg.expansion_reps, exp_seed)?
                    };
                    row_cv.push(cv);
                    row_pred.push(pred);
                }
                cvs.push(row_cv);
                preds.push(row_pred);
            }
            let (acc, failures) = simulate_cell(&plan, model, t, &cfg.methods, &cfg.alphas, &cvs, cfg, 0.0, cell_seed)?;
            let mut out = Vec::new();
            for (mi, &m) in cfg.methods.iter().enumerate() {
                for (ai, &a) in cfg.alphas.iter().enumerate() {
                    let e = acc[mi][ai].estimate();
                    out.push(ErpRow {
                        critical_value: cvs[mi][ai],
                        rate: e.value,
                        se: (e.value * (1.0 - e.value) / e.reps.max(1) as f64).sqrt(),
                        predicted: preds[mi][ai],
                        reps: e.reps,
                        failures,
                        ..base(m, a)
                    });
                }
            }
            Ok(out)
        })();
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => {
                for &m in &cfg.methods {
                    for &a in &cfg.alphas {
                        rows.push(ErpRow { error: Some(e.to_string()), ..base(m, a) });
                    }
                }
            }
        }
    }
    if let Some(path) = &cfg.out {
        write_csv(path, ErpRow::HEADER, rows.iter().map(ErpRow::csv), cfg)?;
    }
    Ok(rows)
}

/// One line of a power table.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub model: String,
    pub t: usize,
    pub smoothing: String,
    pub alpha: f64,
    pub delta: f64,
    pub rate: f64,
    pub se: f64,
    /// P(|t_{K−1,δ}| > x).
    pub first_order_prediction: f64,
    /// P(|t_{K−1,δ}| > x) + (B/(2σ²T))Υ_δ(x;K).
    pub predicted: f64,
    pub error: Option<String>,
}

impl PowerRow {
    pub const HEADER: &'static str = "model,T,smoothing,alpha,delta,rate,se,first_order_prediction,predicted,error";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(&self.model),
            self.t,
            csv_field(&self.smoothing),
            self.alpha,
            self.delta,
            fmt_num(self.rate),
            fmt_num(self.se),
            fmt_num(self.first_order_prediction),
            fmt_num(self.predicted),
            csv_field(self.error.as_deref().unwrap_or(""))
        )
    }
}

/// Rejection rates of the first-order T_K test under μ = μ₀ + δσ/√T.
pub fn run_power(cfg: &ExperimentConfig) -> Result<Vec<PowerRow>> {
    cfg.validate()?;
    if cfg.deltas.is_empty() {
        return Err(invalid("power runs need a delta grid"));
    }
    let mut rows = Vec::new();
    for (ci, model, t, smoothing) in cfg.cells() {
        for (di, &delta) in cfg.deltas.iter().enumerate() {
            let cell_seed = derive_seed(derive_seed(cfg.seed, ci as u64), di as u64);
            let base = |alpha: f64| PowerRow {
                model: model.label(),
                t,
                smoothing: smoothing.label(),
                alpha,
                delta,
                rate: f64::NAN,
                se: f64::NAN,
                first_order_prediction: f64::NAN,
                predicted: f64::NAN,
                error: None,
            };
            let outcome = (|| -> Result<Vec<PowerRow>> {
                let k = match smoothing {
                    Smoothing::Groups(k) => *k,
                    Smoothing::Kernel(_) => return Err(invalid("power runs cover the subsampling t statistic only")),
                };
                let plan = CellPlan::new(model, t, smoothing, cfg, cell_seed)?;
                let cvs = vec![cfg.alphas.iter().map(|a| t_quantile(k as f64 - 1.0, 1.0 - a / 2.0)).collect::<Vec<_>>()];
                let shift = delta * (model.lrv() / t as f64).sqrt();
                let (acc, _) = simulate_cell(&plan, model, t, &[Method::FirstOrder], &cfg.alphas, &cvs, cfg, shift, cell_seed)?;
                let coef = model.b_coefficient() / (2.0 * model.lrv() * t as f64);
                let mut out = Vec::new();
                for (ai, &a) in cfg.alphas.iter().enumerate() {
                    let e = acc[0][ai].estimate();
                    let local = upsilon_local(cvs[0][ai], k, delta, cfg.expansion_reps, derive_seed(cell_seed, u64::MAX))?;
                    let p = local.component("rejection_probability").unwrap_or(f64::NAN);
                    out.push(PowerRow {
                        rate: e.value,
                        se: (e.value * (1.0 - e.value) / e.reps.max(1) as f64).sqrt(),
                        first_order_prediction: p,
                        predicted: p + coef * local.value,
                        ..base(a)
                    });
                }
                Ok(out)
            })();
            match outcome {
                Ok(r) => rows.extend(r),
                Err(e) => rows.extend(cfg.alphas.iter().map(|&a| PowerRow { error: Some(e.to_string()), ..base(a) })),
            }
        }
    }
    if let Some(path) = &cfg.out {
        write_csv(path, PowerRow::HEADER, rows.iter().map(PowerRow::csv), cfg)?;
    }
    Ok(rows)
}

/// One line of the Υ/K surface.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsilonRow {
    pub k: usize,
    pub alpha: f64,
    pub x: f64,
    pub upsilon_over_k: f64,
    pub se: f64,
    pub limit: f64,
}

impl UpsilonRow {
    pub const HEADER: &'static str = "K,alpha,x,upsilon_over_k,se,limit";

    pub fn csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.k, self.alpha, self.x, self.upsilon_over_k, self.se, self.limit)
    }
}

/// Υ(t_{K−1}(1−α);K)/K for every (K, α), with common draws across K.
pub fn run_upsilon_surface(ks: &[usize], alphas: &[f64], reps: usize, seed: u64) -> Result<Vec<UpsilonRow>> {
    if ks.is_empty() || alphas.is_empty() {
        return Err(invalid("K and alpha lists must be nonempty"));
    }
    let mut rows = Vec::new();
    for &a in alphas {
        let xs: Vec<f64> = ks.iter().map(|&k| t_quantile(k as f64 - 1.0, 1.0 - a)).collect();
        let curve = upsilon_curve(ks, &xs, reps, seed)?;
        for ((&k, &x), e) in ks.iter().zip(&xs).zip(&curve.estimates) {
            rows.push(UpsilonRow {
                k,
                alpha: a,
                x,
                upsilon_over_k: e.value / k as f64,
                se: e.mc_std_error / k as f64,
                limit: upsilon_limit(x),
            });
        }
    }
    Ok(rows)
}

/// P(|T_K| ≤ x) under a Gaussian model and its gaps to Ψ and to the
/// first-order t probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TkCdfGap {
    pub t: usize,
    pub empirical: MCExpectation,
    pub psi: MCExpectation,
    /// Empirical minus Ψ.
    pub psi_gap: MCExpectation,
    /// Empirical minus P(|t_{K−1}| ≤ x).
    pub first_order_gap: MCExpectation,
}

/// Estimates P(|T_K| ≤ x) and its gaps to Ψ and P(|t_{K−1}| ≤ x).
///
/// T_K is a function of the group means only, and their scaled law is
/// N(0, σ²S) with S = Σ_T/σ². Draws v ~ N(0, I) are reweighted by the density
/// ratio w(v) = |S|^{−1/2}exp(−½v'(S⁻¹ − I)v). Its first-order part
/// ½(v'Ev − tr E), with E the O(1/T) approximation of S − I, has exactly
/// the expectation Ψ − P(|t_{K−1}| ≤ x) against the indicator, so
///
/// ```text
/// P(|T_K| ≤ x) − Ψ = E[1{|t(v)| ≤ x}(w(v) − 1 − ½(v'Ev − tr E))]
/// ```
///
/// and the Monte Carlo error only touches the O(1/T²) remainder.
pub fn tk_cdf_gap(model: &ProcessModel, k: usize, t: usize, x: f64, reps: usize, seed: u64) -> Result<TkCdfGap> {
    if k < 2 || !t.is_multiple_of(k) {
        return Err(Error::UnequalGroups { k, t });
    }
    let s2 = model.lrv();
    let cov = model.group_mean_covariance(k, t / k)?;
    let s = DMatrix::from_fn(k, k, |i, j| cov.get(i, j) / s2);
    let chol = s.clone().cholesky().ok_or_else(|| Error::NotPsd("group-mean covariance".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let precision_gap = chol.inverse() - DMatrix::identity(k, k);
    let eps = k as f64 * model.b_coefficient() / (s2 * t as f64);
    let pg: Vec<f64> = precision_gap.iter().copied().collect();
    let est = crate::distributions::mc_joint(k, 3, reps, seed, |v, out| {
        let inside = t_from_group_means(v, 0.0).map(|s| s.abs() <= x).unwrap_or(false);
        if !inside {
            out.fill(0.0);
            return;
        }
        let vv = DVector::from_column_slice(v);
        let mut quad = 0.0;
        for j in 0..k {
            let col = &pg[j * k..(j + 1) * k];
            quad += v[j] * col.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
        let w_m1 = (-0.5 * (log_det + quad)).exp_m1();
        let sq = vv.norm_squared();
        let adj: f64 = v.windows(2).map(|p| p[0] * p[1]).sum();
        let lin = 0.5 * eps * (k as f64 - sq + adj);
        out[0] = 1.0 + w_m1;
        out[1] = w_m1 - lin;
        out[2] = lin;
    })?;
    let p = psi(x, k, model, t, reps, derive_seed(seed, 1))?;
    let first = t_abs_cdf(k as f64 - 1.0, x);
    let psi_gap = est[1];
    let first_gap = MCExpectation {
        value: p.value - first + psi_gap.value,
        std_error: (p.mc_std_error.powi(2) + psi_gap.std_error.powi(2)).sqrt(),
        reps,
    };
    Ok(TkCdfGap {
        t,
        empirical: est[0],
        psi: MCExpectation { value: p.value, std_error: p.mc_std_error, reps },
        psi_gap,
        first_order_gap: first_gap,
    })
}

/// Direct simulation estimate of P(|T_K| ≤ x) from full series.
pub fn tk_cdf_direct(model: &ProcessModel, k: usize, t: usize, x: f64, reps: usize, seed: u64) -> Result<MCExpectation> {
    let sampler = model.sampler(t)?;
    crate::expansion::empirical_cdf(reps, seed, |rng| {
        let mut s = vec![0.0; t];
        sampler.draw(rng, &mut s);
        Ok(subsampling_t(&s, k, 0.0)?.statistic.abs() <= x)
    })
}

/// sup over `xs` of |ℵ_T(x;∞)| for each T, all from one set of weights.
pub fn aleph_sup(
    eig: &EigenSystem,
    model: &ProcessModel,
    ts: &[usize],
    xs: &[f64],
    reps: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, f64)>> {
    let w = AlephWeights::estimate(&eig.eigenvalues, xs, reps, seed)?;
    ts.iter()
        .map(|&t| {
            let basis = ProjectionBasis::new(eig, t)?;
            let gaps = variance_gaps(model, &basis);
            let mut best = (0.0, 0.0);
            for i in 0..xs.len() {
                let a = w.aleph(i, &gaps, model.lrv())?;
                if a.value.abs() > best.0 {
                    best = (a.value.abs(), a.mc_std_error);
                }
            }
            Ok((t, best.0, best.1))
        })
        .collect()
}

/// One doubling-T comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub quantity: String,
    pub model: String,
    pub smoothing: String,
    pub t_small: usize,
    pub t_large: usize,
    pub value_small: f64,
    pub se_small: f64,
    pub value_large: f64,
    pub se_large: f64,
    pub ratio: f64,
    pub error: Option<String>,
}

impl RateRow {
    pub const HEADER: &'static str =
        "quantity,model,smoothing,T_small,T_large,value_small,se_small,value_large,se_large,ratio,error";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.quantity,
            csv_field(&self.model),
            csv_field(&self.smoothing),
            self.t_small,
            self.t_large,
            fmt_num(self.value_small),
            fmt_num(self.se_small),
            fmt_num(self.value_large),
            fmt_num(self.se_large),
            fmt_num(self.ratio),
            csv_field(self.error.as_deref().unwrap_or(""))
        )
    }
}

/// Default x-grid for sup_x |ℵ_T(x;∞)|.
pub fn default_aleph_grid() -> Vec<f64> {
    (1..=60).map(|i| 0.25 * i as f64).collect()
}

/// Doubling-T ratio tests: |empirical − Ψ| and |empirical − first order|
/// for T_K cells, sup_x|ℵ_T| for kernel cells. Consecutive entries of the
/// T grid are compared; the first α is used for T_K cells.
pub fn run_rate_diagnostics(cfg: &ExperimentConfig) -> Result<Vec<RateRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let alpha = cfg.alphas[0];
    for (mi, model) in cfg.models.iter().enumerate() {
        for (si, smoothing) in cfg.smoothing.iter().enumerate() {
            let seed = derive_seed(derive_seed(cfg.seed, mi as u64), si as u64);
            let base = |q: &str, ts: (usize, usize)| RateRow {
                quantity: q.to_string(),
                model: model.label(),
                smoothing: smoothing.label(),
                t_small: ts.0,
                t_large: ts.1,
                value_small: f64::NAN,
                se_small: f64::NAN,
                value_large: f64::NAN,
                se_large: f64::NAN,
                ratio: f64::NAN,
                error: None,
            };
            let pairs: Vec<(usize, usize)> = cfg.ts.windows(2).map(|w| (w[0], w[1])).collect();
            match smoothing {
                Smoothing::Groups(k) => {
                    let x = t_quantile(*k as f64 - 1.0, 1.0 - alpha / 2.0);
                    for &(a, b) in &pairs {
                        let res = (|| -> Result<Vec<RateRow>> {
                            let ga = tk_cdf_gap(model, *k, a, x, cfg.reps, seed)?;
                            let gb = tk_cdf_gap(model, *k, b, x, cfg.reps, seed)?;
                            let row = |q: &str, sa: MCExpectation, sb: MCExpectation| RateRow {
                                value_small: sa.value,
                                se_small: sa.std_error,
                                value_large: sb.value,
                                se_large: sb.std_error,
                                ratio: sa.value.abs() / sb.value.abs(),
                                ..base(q, (a, b))
                            };
                            Ok(vec![row("psi_gap", ga.psi_gap, gb.psi_gap), row("first_order_gap", ga.first_order_gap, gb.first_order_gap)])
                        })();
                        match res {
                            Ok(r) => rows.extend(r),
                            Err(e) => rows.push(RateRow { error: Some(e.to_string()), ..base("psi_gap", (a, b)) }),
                        }
                    }
                }
                Smoothing::Kernel(kernel) => {
                    let res = (|| -> Result<Vec<(usize, f64, f64)>> {
                        let eig = eigensystem(kernel, DEFAULT_NODES, Truncation::default())?;
                        aleph_sup(&eig, model, &cfg.ts, &default_aleph_grid(), cfg.expansion_reps, seed)
                    })();
                    match res {
                        Ok(sups) => {
                            for (p, w) in pairs.iter().zip(sups.windows(2)) {
                                rows.push(RateRow {
                                    value_small: w[0].1,
                                    se_small: w[0].2,
                                    value_large: w[1].1,
                                    se_large: w[1].2,
                                    ratio: w[0].1 / w[1].1,
                                    ..base("aleph_sup", *p)
                                });
                            }
                        }
                        Err(e) => {
                            rows.extend(pairs.iter().map(|p| RateRow { error: Some(e.to_string()), ..base("aleph_sup", *p) }))
                        }
                    }
                }
            }
        }
    }
    if let Some(path) = &cfg.out {
        write_csv(path, RateRow::HEADER, rows.iter().map(RateRow::csv), cfg)?;
    }
    Ok(rows)
}

/// Writes `header` and `lines` to `path` through a temporary file and a
/// rename, then a `<path>.manifest` with the config hash, seed and version.
pub fn write_csv<I: IntoIterator<Item = String>>(path: &Path, header: &str, lines: I, cfg: &ExperimentConfig) -> Result<()> {
    let mut body = String::from(header);
    body.push('\n');
    for l in lines {
        body.push_str(&l);
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())?;
    let manifest = manifest_text(&cfg.hash(), cfg.seed);
    write_atomic(&manifest_path(path), manifest.as_bytes())
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

pub fn manifest_text(config_hash: &str, seed: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config_sha256 = {config_hash}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    s
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| invalid(format!("bad output path {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
