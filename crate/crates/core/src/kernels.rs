//! Bivariate smoothing kernels on [0,1]², their demeaning and bandwidth
//! scaling, and truncated spectral decompositions.
//!
//! A kernel is `G_b(r, t) = 𝒦((r − t)/b)` for a univariate 𝒦, or a cosine
//! series Σ_j λ_j cos(2πj(r − t)/b). The demeaned version subtracts row and
//! column means and adds back the grand mean, which makes every
//! eigenfunction with a positive eigenvalue integrate to zero.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::{self, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{self, Rule};

/// Built-in univariate kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DifferenceKernel {
    Bartlett,
    Parzen,
    QuadraticSpectral,
    Daniell,
    TukeyHanning,
}

/// Parzen characteristic exponent q and g_q = lim (1 − 𝒦(x))/|x|^q.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParzenExponent {
    pub q: u32,
    pub g: f64,
}

/// c₁ = ∫𝒦, c₂ = ∫𝒦², and the curvature ∫x²𝒦 (taken through the spectral
/// window for kernels without compact support).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub c1: f64,
    pub c2: f64,
    pub second_moment: f64,
}

impl DifferenceKernel {
    pub const ALL: [DifferenceKernel; 5] = [
        DifferenceKernel::Bartlett,
        DifferenceKernel::Parzen,
        DifferenceKernel::QuadraticSpectral,
        DifferenceKernel::Daniell,
        DifferenceKernel::TukeyHanning,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DifferenceKernel::Bartlett => "bartlett",
            DifferenceKernel::Parzen => "parzen",
            DifferenceKernel::QuadraticSpectral => "qs",
            DifferenceKernel::Daniell => "daniel",
            DifferenceKernel::TukeyHanning => "tukey",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bartlett" => Some(DifferenceKernel::Bartlett),
            "parzen" => Some(DifferenceKernel::Parzen),
            "qs" | "quadratic-spectral" => Some(DifferenceKernel::QuadraticSpectral),
            "daniel" | "daniell" => Some(DifferenceKernel::Daniell),
            "tukey" | "tukey-hanning" | "th" => Some(DifferenceKernel::TukeyHanning),
            _ => None,
        }
    }

    /// 𝒦(x).
    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            DifferenceKernel::Bartlett => (1.0 - a).max(0.0),
            DifferenceKernel::Parzen => {
                if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else if a <= 1.0 {
                    2.0 * (1.0 - a).powi(3)
                } else {
                    0.0
                }
            }
            DifferenceKernel::QuadraticSpectral => {
                let z = 1.2 * PI * a;
                if z < 1e-2 {
                    let z2 = z * z;
                    1.0 - z2 / 10.0 + z2 * z2 / 280.0
                } else {
                    3.0 / (z * z) * (z.sin() / z - z.cos())
                }
            }
            DifferenceKernel::Daniell => {
                let z = PI * a;
                if z < 1e-3 {
                    let z2 = z * z;
                    1.0 - z2 / 6.0 + z2 * z2 / 120.0
                } else {
                    z.sin() / z
                }
            }
            DifferenceKernel::TukeyHanning => {
                if a <= 1.0 {
                    0.5 * (1.0 + (PI * a).cos())
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width of the support, if compact.
    pub fn support(&self) -> Option<f64> {
        match self {
            DifferenceKernel::QuadraticSpectral | DifferenceKernel::Daniell => None,
            _ => Some(1.0),
        }
    }

    /// Kernels with a derivative jump inside their support.
    pub fn has_kink(&self) -> bool {
        matches!(self, DifferenceKernel::Bartlett | DifferenceKernel::Parzen)
    }

    /// A(z) = ∫₀^z 𝒦(u) du for z ≥ 0.
    pub fn partial_integral(&self, z: f64) -> f64 {
        debug_assert!(z >= 0.0);
        match self {
            DifferenceKernel::Bartlett => {
                let z = z.min(1.0);
                z - 0.5 * z * z
            }
            DifferenceKernel::Parzen => {
                if z <= 0.5 {
                    z - 2.0 * z.powi(3) + 1.5 * z.powi(4)
                } else {
                    let z = z.min(1.0);
                    0.343_75 + 1.0 / 32.0 - 0.5 * (1.0 - z).powi(4)
                }
            }
            DifferenceKernel::TukeyHanning => {
                let z = z.min(1.0);
                0.5 * (z + (PI * z).sin() / PI)
            }
            DifferenceKernel::QuadraticSpectral | DifferenceKernel::Daniell => {
                // Smooth integrand: panels of unit width with a fixed rule.
                let (x, w) = quadrature::gauss_legendre(24);
                let panels = z.ceil().max(1.0) as usize;
                let h = z / panels as f64;
                let mut s = 0.0;
                for p in 0..panels {
                    let lo = p as f64 * h;
                    for (xi, wi) in x.iter().zip(&w) {
                        s += 0.5 * h * wi * self.eval(lo + 0.5 * h * (xi + 1.0));
                    }
                }
                s
            }
        }
    }

    /// Parzen characteristic exponent from the stored table.
    pub fn parzen_exponent(&self) -> ParzenExponent {
        let (q, g) = match self {
            DifferenceKernel::Bartlett => (1, 1.0),
            DifferenceKernel::Parzen => (2, 6.0),
            DifferenceKernel::QuadraticSpectral => (2, 18.0 * PI * PI / 125.0),
            DifferenceKernel::Daniell => (2, PI * PI / 6.0),
            DifferenceKernel::TukeyHanning => (2, PI * PI / 4.0),
        };
        ParzenExponent { q, g }
    }

    /// Spectral window k̂ with 𝒦(x) = ∫ k̂(ω) e^{iωx} dω, for the kernels
    /// without compact support. Returns (half-width, k̂).
    fn spectral_window(&self) -> Option<(f64, fn(f64) -> f64)> {
        match self {
            DifferenceKernel::QuadraticSpectral => Some((1.2 * PI, |w: f64| {
                let u = w / (1.2 * PI);
                5.0 / (8.0 * PI) * (1.0 - u * u).max(0.0)
            })),
            DifferenceKernel::Daniell => Some((PI, |_| 1.0 / (2.0 * PI))),
            _ => None,
        }
    }

    /// c₁, c₂ and ∫x²𝒦 by adaptive quadrature (on the kernel itself for
    /// compact kernels, on the spectral window otherwise).
    pub fn constants(&self) -> KernelConstants {
        let tol = 1e-12;
        if let Some((half, window)) = self.spectral_window() {
            let c1 = 2.0 * PI * window(0.0);
            let c2 = 2.0 * PI * 2.0 * quadrature::integrate(&|w: f64| window(w).powi(2), 0.0, half, tol);
            // ∫x²𝒦 = −(d²/dω²)[2π k̂(ω)] at 0, by a centered difference on
            // the quadratic window (exact for polynomials of degree 2).
            let h = 1e-3;
            let second_moment = -2.0 * PI * (window(h) - 2.0 * window(0.0) + window(-h)) / (h * h);
            return KernelConstants { c1, c2, second_moment };
        }
        let f = |x: f64| self.eval(x);
        let brk = [0.0, 0.5, 1.0];
        let piece = |g: &dyn Fn(f64) -> f64| -> f64 {
            brk.windows(2).map(|p| 2.0 * quadrature::integrate(&g, p[0], p[1], tol)).sum()
        };
        KernelConstants {
            c1: piece(&f),
            c2: piece(&|x| f(x) * f(x)),
            second_moment: piece(&|x| x * x * f(x)),
        }
    }
}

impl fmt::Display for DifferenceKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape of the bivariate kernel before bandwidth scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelForm {
    Difference(DifferenceKernel),
    /// G(r,t) = Σ_{j≥1} λ_j cos(2πj(r − t)) with Σλ_j = 1.
    CosineSeries(Vec<f64>),
    /// Univariate 𝒦 given at equally spaced x = 0, step, 2·step, …, linear
    /// in between and zero past the last point.
    Tabulated { step: f64, values: Vec<f64> },
}

impl KernelForm {
    fn profile(&self, x: f64) -> f64 {
        match self {
            KernelForm::Difference(k) => k.eval(x),
            KernelForm::CosineSeries(c) => c.iter().enumerate().map(|(j, l)| l * (2.0 * PI * (j + 1) as f64 * x).cos()).sum(),
            KernelForm::Tabulated { step, values } => {
                let u = x.abs() / step;
                let i = u.floor() as usize;
                if i + 1 >= values.len() {
                    if i + 1 == values.len() && u == i as f64 {
                        return values[i];
                    }
                    return 0.0;
                }
                let f = u - i as f64;
                values[i] * (1.0 - f) + values[i + 1] * f
            }
        }
    }

    /// ∫₀^z of the profile, z ≥ 0.
    fn partial_integral(&self, z: f64) -> f64 {
        match self {
            KernelForm::Difference(k) => k.partial_integral(z),
            KernelForm::CosineSeries(c) => c
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    let w = 2.0 * PI * (j + 1) as f64;
                    l * (w * z).sin() / w
                })
                .sum(),
            KernelForm::Tabulated { step, values } => {
                let mut s = 0.0;
                for i in 0..values.len() - 1 {
                    let lo = i as f64 * step;
                    if z <= lo {
                        break;
                    }
                    let top = z.min(lo + step);
                    s += 0.5 * (self.profile(lo) + self.profile(top)) * (top - lo);
                }
                s
            }
        }
    }
}

/// A kernel on [0,1]² with bandwidth fraction `b` and optional demeaning.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub form: KernelForm,
    pub demeaned: bool,
    pub b: f64,
}

impl KernelSpec {
    pub fn new(form: KernelForm, b: f64, demeaned: bool) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(invalid(format!("bandwidth b must be in (0, 1], got {b}")));
        }
        match &form {
            KernelForm::CosineSeries(c) => {
                if c.is_empty() || c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(invalid("cosine coefficients must be finite and nonnegative"));
                }
                let s: f64 = c.iter().sum();
                if (s - 1.0).abs() > 1e-8 {
                    return Err(invalid(format!("cosine coefficients must sum to 1, got {s}")));
                }
            }
            KernelForm::Tabulated { step, values } => {
                if !(*step > 0.0) || values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("tabulated kernel needs a positive step and at least two finite values"));
                }
            }
            KernelForm::Difference(_) => {}
        }
        Ok(KernelSpec { form, demeaned, b })
    }

    pub fn difference(kernel: DifferenceKernel, b: f64, demeaned: bool) -> Result<Self> {
        Self::new(KernelForm::Difference(kernel), b, demeaned)
    }

    pub fn cosine_series(coefficients: Vec<f64>) -> Result<Self> {
        Self::new(KernelForm::CosineSeries(coefficients), 1.0, false)
    }

    /// Reads cosine-series coefficients λ₁, λ₂, … (whitespace separated,
    /// `#` starts a comment).
    pub fn cosine_from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or_default();
            for tok in line.split_whitespace() {
                c.push(tok.parse::<f64>().map_err(|_| invalid(format!("bad coefficient {tok:?}")))?);
            }
        }
        Self::cosine_series(c)
    }

    /// Parses `bartlett|parzen|qs|daniel|tukey|cosine:PATH`.
    pub fn parse(name: &str, b: f64, demeaned: bool) -> Result<Self> {
        if let Some(path) = name.strip_prefix("cosine:") {
            let mut spec = Self::cosine_from_path(Path::new(path))?;
            spec.b = b;
            spec.demeaned = demeaned;
            return Self::new(spec.form, b, demeaned);
        }
        let k = DifferenceKernel::from_name(name).ok_or_else(|| invalid(format!("unknown kernel {name:?}")))?;
        Self::difference(k, b, demeaned)
    }

    pub fn label(&self) -> String {
        let base = match &self.form {
            KernelForm::Difference(k) => k.name().to_string(),
            KernelForm::CosineSeries(c) => format!("cosine({})", c.len()),
            KernelForm::Tabulated { values, .. } => format!("tabulated({})", values.len()),
        };
        if self.demeaned {
            format!("{base}~")
        } else {
            base
        }
    }

    /// The built-in univariate kernel, if any.
    pub fn difference_kernel(&self) -> Option<DifferenceKernel> {
        match self.form {
            KernelForm::Difference(k) => Some(k),
            _ => None,
        }
    }

    /// G_b(r, t) = G(r/b, t/b), composing with any existing bandwidth.
    pub fn scale(&self, b: f64) -> Result<Self> {
        Self::new(self.form.clone(), self.b * b, self.demeaned)
    }

    /// Four-term demeaned kernel.
    pub fn demean(&self) -> Self {
        KernelSpec { demeaned: true, ..self.clone() }
    }

    /// Scaled kernel before demeaning, G_b(r, t).
    pub fn eval_raw(&self, r: f64, t: f64) -> f64 {
        self.form.profile((r - t) / self.b)
    }

    /// Row mean ∫₀¹ G_b(s, t) ds.
    pub fn row_mean(&self, t: f64) -> f64 {
        let b = self.b;
        b * (self.form.partial_integral((1.0 - t) / b) + self.form.partial_integral(t / b))
    }

    /// Grand mean ∫∫ G_b.
    pub fn grand_mean(&self) -> f64 {
        // ∫₀¹ row_mean(t) dt = 2b² ∫₀^{1/b} A(z) dz, integrated panelwise.
        let b = self.b;
        let top = 1.0 / b;
        let panels = top.ceil().max(1.0) as usize * 4;
        let h = top / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            s += quadrature::integrate(&|z: f64| self.form.partial_integral(z), p as f64 * h, (p + 1) as f64 * h, 1e-14);
        }
        2.0 * b * b * s
    }

    /// G(r, t), demeaned if the flag is set.
    pub fn eval(&self, r: f64, t: f64) -> f64 {
        let g = self.eval_raw(r, t);
        if self.demeaned {
            g - self.row_mean(t) - self.row_mean(r) + self.grand_mean()
        } else {
            g
        }
    }

    fn quadrature_rule(&self, n: usize) -> Rule {
        let kinked = match &self.form {
            KernelForm::Difference(k) => k.has_kink(),
            KernelForm::Tabulated { .. } => true,
            KernelForm::CosineSeries(_) => false,
        };
        if kinked {
            Rule::kinked(n, self.b)
        } else {
            Rule::unit(n)
        }
    }
}

/// How many eigenpairs to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Smallest J with λ_J/λ₁ ≤ `ratio`, capped at `cap`; errors if unmet.
    Auto { ratio: f64, cap: usize },
    /// Exactly J pairs, no tail check.
    Fixed(usize),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Auto { ratio: 1e-6, cap: 200 }
    }
}

/// Default Nyström grid size.
pub const DEFAULT_NODES: usize = 512;

#[derive(Debug, Clone)]
enum Evaluator {
    Nystrom {
        kernel: KernelSpec,
        /// Quadrature row means a_k = Σ_l w_l G(x_k, x_l) and their weighted mean.
        row_means: Vec<f64>,
        grand: f64,
    },
    /// Demeaned Tukey–Hanning at b = 1.
    TukeyHanningDemeaned,
    /// √2 cos / √2 sin pairs; entry j holds (frequency, is_sine).
    Fourier(Vec<(usize, bool)>),
}

/// Truncated spectral decomposition Σ_j λ_j φ_j(r) φ_j(t).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// φ_j at the nodes; `values[j][k]`.
    pub values: Vec<Vec<f64>>,
    evaluator: Evaluator,
}

impl EigenSystem {
    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn quadrature_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Keeps the first `j` pairs.
    pub fn truncated(&self, j: usize) -> EigenSystem {
        let j = j.min(self.truncation());
        let mut out = self.clone();
        out.eigenvalues.truncate(j);
        out.values.truncate(j);
        if let Evaluator::Fourier(f) = &mut out.evaluator {
            f.truncate(j);
        }
        out
    }

    /// φ_j(t) for every j at each point of `ts`; result indexed [j][i].
    pub fn eval_grid(&self, ts: &[f64]) -> Vec<Vec<f64>> {
        let jn = self.truncation();
        let mut out = vec![vec![0.0; ts.len()]; jn];
        match &self.evaluator {
            Evaluator::TukeyHanningDemeaned => {
                let s = (0.5 - 4.0 / (PI * PI)).sqrt();
                for (i, &t) in ts.iter().enumerate() {
                    if jn > 0 {
                        out[0][i] = SQRT_2 * (PI * t).cos();
                    }
                    // Sign chosen so the value near t = 0 is positive.
                    if jn > 1 {
                        out[1][i] = (2.0 / PI - (PI * t).sin()) / s;
                    }
                }
            }
            Evaluator::Fourier(f) => {
                for (j, &(freq, sine)) in f.iter().enumerate() {
                    for (i, &t) in ts.iter().enumerate() {
                        let a = 2.0 * PI * freq as f64 * t;
                        out[j][i] = SQRT_2 * if sine { a.sin() } else { a.cos() };
                    }
                }
            }
            Evaluator::Nystrom { kernel, row_means, grand } => {
                let lam1 = self.eigenvalues.first().copied().unwrap_or(0.0);
                let mut row = vec![0.0; self.nodes.len()];
                for (i, &t) in ts.iter().enumerate() {
                    for (k, &x) in self.nodes.iter().enumerate() {
                        row[k] = kernel.eval_raw(t, x);
                    }
                    if kernel.demeaned {
                        let a_t: f64 = row.iter().zip(&self.weights).map(|(g, w)| g * w).sum();
                        for (k, g) in row.iter_mut().enumerate() {
                            *g += grand - a_t - row_means[k];
                        }
                    }
                    for j in 0..jn {
                        let lam = self.eigenvalues[j];
                        out[j][i] = if lam > 1e-10 * lam1 {
                            row.iter().zip(&self.weights).zip(&self.values[j]).map(|((g, w), p)| g * w * p).sum::<f64>() / lam
                        } else {
                            self.linear_interpolate(j, t)
                        };
                    }
                }
            }
        }
        out
    }

    /// φ_j(t).
    pub fn eval(&self, j: usize, t: f64) -> f64 {
        self.eval_grid(&[t])[j][0]
    }

    /// φ_j(i/T) for i = 1..=T; result indexed [j][i−1].
    pub fn on_series_grid(&self, t: usize) -> Vec<Vec<f64>> {
        let ts: Vec<f64> = (1..=t).map(|i| i as f64 / t as f64).collect();
        self.eval_grid(&ts)
    }

    fn linear_interpolate(&self, j: usize, t: f64) -> f64 {
        let x = &self.nodes;
        let v = &self.values[j];
        match x.partition_point(|&n| n < t) {
            0 => v[0],
            k if k == x.len() => v[k - 1],
            k => {
                let f = (t - x[k - 1]) / (x[k] - x[k - 1]);
                v[k - 1] * (1.0 - f) + v[k] * f
            }
        }
    }

    /// Σ_j λ_j φ_j(r) φ_j(t).
    pub fn reconstruct(&self, r: f64, t: f64) -> f64 {
        let g = self.eval_grid(&[r, t]);
        self.eigenvalues.iter().enumerate().map(|(j, l)| l * g[j][0] * g[j][1]).sum()
    }

    /// ∫φ_i φ_j by the stored quadrature.
    pub fn inner_product(&self, i: usize, j: usize) -> f64 {
        self.weights.iter().zip(&self.values[i]).zip(&self.values[j]).map(|((w, a), b)| w * a * b).sum()
    }

    /// ∫φ_j by the stored quadrature.
    pub fn integral(&self, j: usize) -> f64 {
        self.weights.iter().zip(&self.values[j]).map(|(w, a)| w * a).sum()
    }

    /// Text export: one line per j with λ_j followed by φ_j at the nodes.
    /// The first line lists the nodes, prefixed by `#`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# nodes");
        for x in &self.nodes {
            let _ = write!(s, " {x:.17e}");
        }
        s.push('\n');
        for (l, v) in self.eigenvalues.iter().zip(&self.values) {
            let _ = write!(s, "{l:.17e}");
            for p in v {
                let _ = write!(s, " {p:.17e}");
            }
            s.push('\n');
        }
        s
    }
}

fn apply_truncation(eigenvalues: &[f64], truncation: Truncation) -> Result<usize> {
    let lam1 = eigenvalues.first().copied().unwrap_or(0.0);
    match truncation {
        Truncation::Fixed(j) => {
            if j == 0 || j > eigenvalues.len() {
                return Err(invalid(format!("truncation {j} outside 1..={}", eigenvalues.len())));
            }
            Ok(j)
        }
        Truncation::Auto { ratio, cap } => {
            let cap = cap.min(eigenvalues.len());
            if lam1 <= 0.0 {
                return Ok(1);
            }
            match eigenvalues[..cap].iter().position(|l| l / lam1 <= ratio) {
                Some(p) => Ok(p + 1),
                None => Err(Error::TruncationTooCoarse { j: cap, ratio: eigenvalues[cap - 1] / lam1, limit: ratio }),
            }
        }
    }
}

/// Nyström eigendecomposition on an `n`-point grid.
pub fn nystrom_eigs(kernel: &KernelSpec, n: usize, truncation: Truncation) -> Result<EigenSystem> {
    if n < 64 {
        return Err(invalid(format!("need at least 64 quadrature nodes, got {n}")));
    }
    let rule = kernel.quadrature_rule(n);
    let n = rule.len();
    if let Truncation::Fixed(j) = truncation {
        if n < 4 * j {
            return Err(invalid(format!("need n >= 4J, got n = {n}, J = {j}")));
        }
    }
    let x = &rule.nodes;
    let w = &rule.weights;
    let mut g = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval_raw(x[i], x[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let mut row_means = vec![0.0; n];
    let mut grand = 0.0;
    if kernel.demeaned {
        for i in 0..n {
            row_means[i] = (0..n).map(|l| w[l] * g[(i, l)]).sum();
        }
        grand = row_means.iter().zip(w).map(|(a, wi)| a * wi).sum();
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] += grand - row_means[i] - row_means[j];
            }
        }
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] *= sw[i] * sw[j];
        }
    }
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lams = Vec::with_capacity(n);
    for &k in &order {
        let l = eig.eigenvalues[k];
        if l < -1e-8 {
            return Err(Error::NotPsd(format!("Nystrom eigenvalue {l:e} below -1e-8")));
        }
        lams.push(l.max(0.0));
    }
    // Keep n ≥ 4J so the retained pairs are resolved by the grid.
    let truncation = match truncation {
        Truncation::Auto { ratio, cap } => Truncation::Auto { ratio, cap: cap.min(n / 4) },
        t => t,
    };
    let jn = apply_truncation(&lams, truncation)?;
    let values: Vec<Vec<f64>> = order[..jn]
        .iter()
        .map(|&k| {
            let col = eig.eigenvectors.column(k);
            let mut v: Vec<f64> = (0..n).map(|i| col[i] / sw[i]).collect();
            let peak = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            if let Some(first) = v.iter().find(|a| a.abs() > 1e-8 * peak) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|a| *a = -*a);
                }
            }
            v
        })
        .collect();
    Ok(EigenSystem {
        eigenvalues: lams[..jn].to_vec(),
        nodes: rule.nodes.clone(),
        weights: rule.weights.clone(),
        values,
        evaluator: Evaluator::Nystrom { kernel: kernel.clone(), row_means, grand },
    })
}

/// Closed-form eigensystem where one is known: the demeaned Tukey–Hanning
/// kernel and cosine series, both at b = 1. Grid values use an `n`-point
/// Gauss–Legendre rule.
pub fn analytic_eigs(kernel: &KernelSpec, n: usize) -> Option<EigenSystem> {
    if kernel.b != 1.0 {
        return None;
    }
    let rule = Rule::unit(n);
    let (eigenvalues, evaluator) = match &kernel.form {
        KernelForm::Difference(DifferenceKernel::TukeyHanning) if kernel.demeaned => {
            (vec![0.25, 0.25 - 2.0 / (PI * PI)], Evaluator::TukeyHanningDemeaned)
        }
        KernelForm::CosineSeries(c) => {
            let mut pairs: Vec<(f64, usize, bool)> = Vec::new();
            for (j, &l) in c.iter().enumerate() {
                if l > 0.0 {
                    pairs.push((0.5 * l, j + 1, false));
                    pairs.push((0.5 * l, j + 1, true));
                }
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
            (pairs.iter().map(|p| p.0).collect(), Evaluator::Fourier(pairs.iter().map(|p| (p.1, p.2)).collect()))
        }
        _ => return None,
    };
    let mut sys = EigenSystem { eigenvalues, nodes: rule.nodes.clone(), weights: rule.weights, values: Vec::new(), evaluator };
    sys.values = sys.eval_grid(&rule.nodes);
    Some(sys)
}

/// Analytic eigensystem when available, Nyström otherwise.
pub fn eigensystem(kernel: &KernelSpec, n: usize, truncation: Truncation) -> Result<EigenSystem> {
    match analytic_eigs(kernel, n) {
        Some(sys) => {
            let j = match truncation {
                Truncation::Fixed(j) => j,
                Truncation::Auto { .. } => sys.truncation(),
            };
            Ok(sys.truncated(j))
        }
        None => nystrom_eigs(kernel, n, truncation),
    }
}

/// Least-squares slope of log λ_j against log j over j in `range` (1-based).
pub fn decay_slope(eigenvalues: &[f64], range: std::ops::RangeInclusive<usize>) -> f64 {
    let pts: Vec<(f64, f64)> = range.filter(|&j| j <= eigenvalues.len() && eigenvalues[j - 1] > 0.0).map(|j| ((j as f64).ln(), eigenvalues[j - 1].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th_demeaned() -> KernelSpec {
        KernelSpec::difference(DifferenceKernel::TukeyHanning, 1.0, true).unwrap()
    }

    #[test]
    fn bartlett_scaled_value() {
        let k = KernelSpec::difference(DifferenceKernel::Bartlett, 1.0, false).unwrap();
        let s = k.scale(0.5).unwrap();
        assert!((s.eval(0.2, 0.5) - 0.4).abs() < 1e-15);
        assert_eq!(k.scale(1.0).unwrap(), k);
    }

    #[test]
    fn partial_integrals_match_quadrature() {
        for k in DifferenceKernel::ALL {
            for &z in &[0.2, 0.5, 0.8, 1.0, 2.5, 7.0] {
                let oracle = quadrature::integrate(&|u: f64| k.eval(u), 0.0, z, 1e-13);
                assert!((k.partial_integral(z) - oracle).abs() < 1e-10, "{k} z={z}");
            }
        }
    }

    #[test]
    fn parzen_exponents_match_numeric_limits() {
        for k in DifferenceKernel::ALL {
            let p = k.parzen_exponent();
            for &x in &[1e-3, 1e-4] {
                let g = (1.0 - k.eval(x)) / x.powi(p.q as i32);
                assert!((g - p.g).abs() < 1e-2 * p.g, "{k}: {g} vs {}", p.g);
                // The next integer exponent diverges.
                let next = (1.0 - k.eval(x)) / x.powi(p.q as i32 + 1);
                assert!(next.abs() > 10.0 * p.g || p.q == 2 && next.abs() > 0.5 / x * p.g, "{k}");
            }
        }
        assert_eq!(DifferenceKernel::Bartlett.parzen_exponent().q, 1);
        assert_eq!(DifferenceKernel::Parzen.parzen_exponent().q, 2);
        assert_eq!(DifferenceKernel::QuadraticSpectral.parzen_exponent().q, 2);
    }

    #[test]
    fn kernel_constants() {
        let b = DifferenceKernel::Bartlett.constants();
        assert!((b.c1 - 1.0).abs() < 1e-10);
        assert!((b.c2 - 2.0 / 3.0).abs() < 1e-10);
        assert!((b.second_moment - 1.0 / 6.0).abs() < 1e-10);
        let p = DifferenceKernel::Parzen.constants();
        assert!((p.c1 - 0.75).abs() < 1e-10);
        assert!((p.c2 - 151.0 / 280.0).abs() < 1e-10);
        let t = DifferenceKernel::TukeyHanning.constants();
        assert!((t.c1 - 1.0).abs() < 1e-10);
        assert!((t.c2 - 0.75).abs() < 1e-10);
        let q = DifferenceKernel::QuadraticSpectral.constants();
        assert!((q.c1 - 1.25).abs() < 1e-10);
        assert!((q.c2 - 1.0).abs() < 1e-8);
        assert!((q.second_moment - 2.5 * 25.0 / (36.0 * PI * PI)).abs() < 1e-6);
        let d = DifferenceKernel::Daniell.constants();
        assert!((d.c1 - 1.0).abs() < 1e-12 && (d.c2 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn qs_spectral_constants_match_direct_integrals() {
        // Direct integration over a long range with an asymptotic tail: the
        // QS kernel decays like −3cos(z)/z², so ∫ beyond X is O(1/X²).
        let k = DifferenceKernel::QuadraticSpectral;
        let x_max = 400.0;
        let direct = 2.0 * k.partial_integral(x_max);
        assert!((direct - 1.25).abs() < 1e-4, "{direct}");
    }

    #[test]
    fn demeaned_rows_vanish() {
        for k in DifferenceKernel::ALL {
            for b in [1.0, 0.3] {
                let spec = KernelSpec::difference(k, b, true).unwrap();
                for &t in &[0.0, 0.13, 0.5, 0.97] {
                    let tol = 1e-11;
                    let row = quadrature::integrate(&|s: f64| spec.eval(s, t), 0.0, 1.0, tol);
                    assert!(row.abs() < 1e-8, "{k} b={b} t={t}: {row}");
                }
            }
        }
    }

    #[test]
    fn demean_is_idempotent() {
        let spec = KernelSpec::difference(DifferenceKernel::Parzen, 0.5, true).unwrap();
        assert_eq!(spec.demean(), spec);
        // Re-applying the four-term formula numerically changes nothing.
        let row = |t: f64| quadrature::integrate(&|s: f64| spec.eval(s, t), 0.0, 1.0, 1e-13);
        let grand = quadrature::integrate(&row, 0.0, 1.0, 1e-12);
        for &(r, t) in &[(0.1, 0.2), (0.5, 0.9), (0.0, 1.0)] {
            let again = spec.eval(r, t) - row(t) - row(r) + grand;
            assert!((again - spec.eval(r, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn cosine_series_demean_unchanged() {
        let spec = KernelSpec::cosine_series(vec![0.7, 0.2, 0.1]).unwrap();
        let d = spec.demean();
        for &(r, t) in &[(0.1, 0.2), (0.5, 0.9), (0.33, 0.0)] {
            assert!((spec.eval(r, t) - d.eval(r, t)).abs() < 1e-10);
        }
    }

    #[test]
    fn tukey_hanning_demeaned_eigenpairs() {
        let sys = nystrom_eigs(&th_demeaned(), 512, Truncation::default()).unwrap();
        assert!((sys.eigenvalues[0] - 0.25).abs() < 1e-3);
        assert!((sys.eigenvalues[1] - 0.0474).abs() < 1e-3);
        assert!(sys.eigenvalues.get(2).copied().unwrap_or(0.0) <= 1e-4);
        let exact = analytic_eigs(&th_demeaned(), 512).unwrap();
        for &t in &[0.05, 0.4, 0.77] {
            for j in 0..2 {
                assert!((sys.eval(j, t) - exact.eval(j, t)).abs() < 1e-8, "j={j} t={t}");
            }
        }
    }

    #[test]
    fn cosine_single_term_eigenpairs() {
        let spec = KernelSpec::cosine_series(vec![1.0]).unwrap();
        let sys = nystrom_eigs(&spec, 128, Truncation::Fixed(3)).unwrap();
        assert!((sys.eigenvalues[0] - 0.5).abs() < 1e-12);
        assert!((sys.eigenvalues[1] - 0.5).abs() < 1e-12);
        assert!(sys.eigenvalues[2].abs() < 1e-12);
        // Each eigenfunction lies in span{√2cos2πt, √2sin2πt}.
        for j in 0..2 {
            let c: f64 = sys.weights.iter().zip(&sys.nodes).zip(&sys.values[j]).map(|((w, x), p)| w * p * SQRT_2 * (2.0 * PI * x).cos()).sum();
            let s: f64 = sys.weights.iter().zip(&sys.nodes).zip(&sys.values[j]).map(|((w, x), p)| w * p * SQRT_2 * (2.0 * PI * x).sin()).sum();
            assert!((c * c + s * s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bartlett_decay_rate() {
        let spec = KernelSpec::difference(DifferenceKernel::Bartlett, 0.1, true).unwrap();
        let sys = nystrom_eigs(&spec, 512, Truncation::Fixed(40)).unwrap();
        let slope = decay_slope(&sys.eigenvalues, 2..=20);
        assert!((-2.5..=-1.5).contains(&slope), "slope {slope}");
    }

    #[test]
    fn bartlett_auto_truncation_too_coarse() {
        let spec = KernelSpec::difference(DifferenceKernel::Bartlett, 0.1, true).unwrap();
        assert!(matches!(nystrom_eigs(&spec, 128, Truncation::default()), Err(Error::TruncationTooCoarse { .. })));
    }

    #[test]
    fn knessl_keller_small_b() {
        let k = DifferenceKernel::QuadraticSpectral;
        let c = k.constants();
        let b = 0.05;
        let spec = KernelSpec::difference(k, b, false).unwrap();
        let sys = nystrom_eigs(&spec, 512, Truncation::Fixed(5)).unwrap();
        for j in 1..=3 {
            let approx = b * c.c1 - PI * PI * (j * j) as f64 * b.powi(3) / 2.0 * c.second_moment;
            let got = sys.eigenvalues[j - 1];
            assert!((got - approx).abs() <= 0.1 * approx, "j={j}: {got} vs {approx}");
        }
    }

    fn check_invariants(spec: &KernelSpec, sys: &EigenSystem) {
        for w in sys.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(sys.eigenvalues.iter().all(|&l| l >= 0.0));
        let lam1 = sys.eigenvalues[0];
        for i in 0..sys.truncation() {
            if sys.eigenvalues[i] <= 1e-10 * lam1 {
                continue;
            }
            for j in 0..sys.truncation() {
                if sys.eigenvalues[j] <= 1e-10 * lam1 {
                    continue;
                }
                let ip = sys.inner_product(i, j);
                assert!((ip - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6, "{} ({i},{j}) {ip}", spec.label());
            }
            if spec.demeaned {
                assert!(sys.integral(i).abs() < 1e-6);
            }
        }
        let diag = quadrature::integrate(&|r: f64| spec.eval(r, r), 0.0, 1.0, 1e-12);
        assert!(sys.trace() <= diag + 1e-6, "{} trace {} vs {diag}", spec.label(), sys.trace());
    }

    #[test]
    fn eigen_invariants_and_reconstruction() {
        let cases = [
            KernelSpec::difference(DifferenceKernel::QuadraticSpectral, 1.0, false).unwrap(),
            KernelSpec::difference(DifferenceKernel::QuadraticSpectral, 0.3, true).unwrap(),
            KernelSpec::difference(DifferenceKernel::Daniell, 0.5, true).unwrap(),
            th_demeaned(),
            KernelSpec::difference(DifferenceKernel::TukeyHanning, 1.0, false).unwrap(),
            KernelSpec::cosine_series(vec![0.5, 0.3, 0.2]).unwrap(),
        ];
        for spec in &cases {
            let sys = nystrom_eigs(spec, 512, Truncation::default()).unwrap();
            check_invariants(spec, &sys);
            let mut worst: f64 = 0.0;
            for a in 0..20 {
                for c in 0..20 {
                    let (r, t) = (a as f64 / 19.0, c as f64 / 19.0);
                    worst = worst.max((spec.eval(r, t) - sys.reconstruct(r, t)).abs());
                }
            }
            assert!(worst <= 1e-3, "{}: reconstruction error {worst}", spec.label());
        }
    }

    #[test]
    fn not_psd_rejected() {
        // Tukey–Hanning with b < 1 is not positive semi-definite on [0,1]².
        let spec = KernelSpec::difference(DifferenceKernel::TukeyHanning, 0.3, false).unwrap();
        assert!(matches!(nystrom_eigs(&spec, 256, Truncation::Fixed(10)), Err(Error::NotPsd(_))));
    }

    #[test]
    fn text_export_shape() {
        let sys = nystrom_eigs(&th_demeaned(), 64, Truncation::Fixed(2)).unwrap();
        let text = sys.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split_whitespace().count(), 1 + sys.quadrature_size());
        let lam: f64 = lines[1].split_whitespace().next().unwrap().parse().unwrap();
        assert!((lam - 0.25).abs() < 1e-3);
    }

    #[test]
    fn series_grid_values_match_analytic() {
        let sys = nystrom_eigs(&th_demeaned(), 512, Truncation::Fixed(2)).unwrap();
        let g = sys.on_series_grid(64);
        let exact = analytic_eigs(&th_demeaned(), 64).unwrap().on_series_grid(64);
        for j in 0..2 {
            for i in 0..64 {
                assert!((g[j][i] - exact[j][i]).abs() < 1e-8);
            }
        }
    }
}
