//! Gauss-Legendre rules and composite integration on finite intervals.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre quadrature with panel doubling.
#[derive(Clone, Debug)]
pub struct Composite {
    rule: GaussLegendre,
    pub initial_panels: usize,
    pub max_panels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

/// Converged integral plus the nodes/weights of the accepted rule.
#[derive(Clone, Debug)]
pub struct CompositeResult {
    pub value: f64,
    pub panels: usize,
    pub change: f64,
}

impl Composite {
    pub fn new(order: usize, rel_tol: f64) -> Self {
        Self {
            rule: GaussLegendre::new(order),
            initial_panels: 4,
            max_panels: 4096,
            rel_tol,
            abs_tol: 1e-300,
        }
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn rule(&self) -> &GaussLegendre {
        &self.rule
    }

    pub fn fixed(&self, a: f64, b: f64, panels: usize, f: &impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|p| {
                let lo = a + p as f64 * h;
                self.rule.integrate(lo, lo + h, f)
            })
            .sum()
    }

    /// Sample points of the fixed rule with `panels` panels.
    pub fn points(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        (0..panels)
            .flat_map(|p| {
                let lo = a + p as f64 * h;
                self.rule.mapped(lo, lo + h).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Doubles the number of panels until two successive estimates agree to
    /// `rel_tol` (or `abs_tol`).
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Result<CompositeResult> {
        if b <= a {
            return Ok(CompositeResult { value: 0.0, panels: 0, change: 0.0 });
        }
        let mut panels = self.initial_panels;
        let mut prev = self.fixed(a, b, panels, &f);
        while panels < self.max_panels {
            panels *= 2;
            let cur = self.fixed(a, b, panels, &f);
            let change = (cur - prev).abs();
            if change <= self.rel_tol * cur.abs() || change <= self.abs_tol {
                return Ok(CompositeResult { value: cur, panels, change });
            }
            prev = cur;
        }
        Err(Error::QuadratureNonConvergence(format!(
            "no {:.1e}-relative stability on [{a}, {b}] with {} panels",
            self.rel_tol, self.max_panels
        )))
    }
}
