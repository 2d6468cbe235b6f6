//! Gauss–Legendre rules and adaptive 1-D integration.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess, refined by Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_and_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Quadrature rule on [0, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// `n`-point Gauss–Legendre rule mapped to [0, 1].
    pub fn unit(n: usize) -> Self {
        Self::panels(&[0.0, 1.0], n)
    }

    /// Composite rule: `per_panel` Gauss–Legendre nodes on each interval
    /// between consecutive `breaks`.
    pub fn panels(breaks: &[f64], per_panel: usize) -> Self {
        let (x, w) = gauss_legendre(per_panel);
        let mut nodes = Vec::with_capacity(per_panel * breaks.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pair in breaks.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(a + half * (xi + 1.0));
                weights.push(half * wi);
            }
        }
        Rule { nodes, weights }
    }

    /// Composite rule with about `n` nodes whose panel boundaries include
    /// every multiple of `b` inside (0, 1).
    pub fn kinked(n: usize, b: f64) -> Self {
        let mut breaks = vec![0.0];
        let mut k = 1.0;
        while k * b < 1.0 - 1e-12 {
            breaks.push(k * b);
            k += 1.0;
        }
        breaks.push(1.0);
        // Refine so no panel is wider than 1/16 of the interval.
        let mut refined = vec![0.0];
        for pair in breaks.windows(2) {
            let pieces = ((pair[1] - pair[0]) * 16.0).ceil().max(1.0) as usize;
            for p in 1..=pieces {
                refined.push(pair[0] + (pair[1] - pair[0]) * p as f64 / pieces as f64);
            }
        }
        let panels = refined.len() - 1;
        let per_panel = (n / panels).max(4);
        Self::panels(&refined, per_panel)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Adaptive Gauss–Legendre integration of `f` over [a, b] to absolute
/// tolerance `tol`.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (x, w) = gauss_legendre(15);
    let rule = |lo: f64, hi: f64| {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        half * x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>()
    };
    fn recurse(rule: &dyn Fn(f64, f64) -> f64, lo: f64, hi: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let mid = 0.5 * (lo + hi);
        let left = rule(lo, mid);
        let right = rule(mid, hi);
        if depth == 0 || (left + right - whole).abs() <= tol {
            return left + right;
        }
        recurse(rule, lo, mid, left, 0.5 * tol, depth - 1) + recurse(rule, mid, hi, right, 0.5 * tol, depth - 1)
    }
    recurse(&rule, a, b, rule(a, b), tol, 40)
}

/// Integral of `f` over [a, ∞) via the substitution x = a + t/(1−t).
pub fn integrate_to_infinity(f: &impl Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        f(a + t / s) / (s * s)
    };
    integrate(&g, 0.0, 1.0, tol)
}
