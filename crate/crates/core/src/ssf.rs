//! Spectral shift function near a Landau level: the regularized derivative
//! `xi_2'` from the argument of the regularized determinant, the full
//! derivative `xi'`, the Breit-Wigner reconstruction from resonances and a
//! local trace formula check on self-adjoint truncations.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::birman_schwinger::BsModel;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::landau::{counting_function, ntilde_p, ToeplitzSpectrum};
use crate::linalg::dense;
use crate::quadrature::GaussLegendre;
use crate::resonances::ResonanceSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SSFSample {
    pub mu: f64,
    pub xi2_prime: f64,
    pub xi_prime: f64,
    pub epsilon_used: f64,
    /// `(1/pi) Im tr dT/dz`
    pub correction: f64,
    pub extrapolation_error: f64,
}

/// Result of extrapolating `epsilon -> 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub value: f64,
    pub error: f64,
    pub estimates: Vec<f64>,
}

/// Polynomial (Neville) extrapolation to `epsilon = 0`; with halving
/// steps the first column is order-1 Richardson.
pub fn richardson(eps: &[f64], values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mut table = values.to_vec();
    let mut prev_best = values[n - 1];
    let mut best = values[n - 1];
    for level in 1..n {
        for i in 0..n - level {
            let (e0, e1) = (eps[i], eps[i + level]);
            table[i] = (e0 * table[i + 1] - e1 * table[i]) / (e0 - e1);
        }
        prev_best = best;
        best = table[n - level - 1];
    }
    (best, (best - prev_best).abs())
}

fn extrapolate(mu: f64, eps: &[f64], estimates: Vec<f64>) -> Result<Extrapolated> {
    let scale = estimates.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let noise = 1e-9 * scale;
    let diffs: Vec<f64> = estimates.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > noise).collect();
    let monotone = diffs.iter().all(|d| *d > 0.0) || diffs.iter().all(|d| *d < 0.0);
    if !monotone {
        return Err(Error::Extrapolation { mu, estimates });
    }
    let (value, error) = richardson(eps, &estimates);
    Ok(Extrapolated { value, error, estimates })
}

fn check_epsilons(eps: &[f64]) -> Result<()> {
    if eps.len() < 3 || eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter("epsilon list must be positive, strictly decreasing, with at least 3 values".into()));
    }
    Ok(())
}

/// Refuses energies within `10 max(eps)` of a Landau level `2bj` or of a
/// threshold `2bj + lambda`.
pub fn check_energy(model: &BsModel, mu: f64, eps: &[f64]) -> Result<()> {
    let margin = 10.0 * eps.iter().cloned().fold(0.0, f64::max);
    for j in 0..=model.levels() {
        let foot = 2.0 * model.b * j as f64;
        for p in [foot, foot + model.lambda_min] {
            if (mu - p).abs() <= margin {
                return Err(Error::InvalidParameter(format!(
                    "energy {mu} lies within {margin:.1e} of the threshold {p}"
                )));
            }
        }
    }
    Ok(())
}

/// `xi_2'(mu) = (1/pi) Im d/dz ln det_2(...)` at `mu + i eps`, extrapolated
/// to `eps -> 0`. Also returns the extrapolated `(1/pi) Im tr T'`.
fn xi_parts(model: &BsModel, mu: f64, eps: &[f64]) -> Result<(Extrapolated, Extrapolated)> {
    check_epsilons(eps)?;
    check_energy(model, mu, eps)?;
    let mut xi2 = Vec::with_capacity(eps.len());
    let mut corr = Vec::with_capacity(eps.len());
    for &e in eps {
        let z = Complex64::new(mu, e);
        model.check_point(z)?;
        let v = model.evaluate(z, true)?;
        xi2.push(v.dlog_d.im / PI);
        corr.push(v.trace_t_prime.im / PI);
    }
    Ok((extrapolate(mu, eps, xi2)?, extrapolate(mu, eps, corr)?))
}

pub fn xi2_prime(model: &BsModel, mu: f64, eps: &[f64]) -> Result<Extrapolated> {
    Ok(xi_parts(model, mu, eps)?.0)
}

/// `xi'(mu) = xi_2'(mu) + (1/pi) Im tr dT/dz`, on a distorted model.
pub fn xi_prime(model: &BsModel, mu: f64, eps: &[f64]) -> Result<SSFSample> {
    if !(model.theta().im > 0.0) {
        return Err(Error::InvalidParameter("xi' on the real axis needs Im theta > 0".into()));
    }
    let (x2, c) = xi_parts(model, mu, eps)?;
    Ok(SSFSample {
        mu,
        xi2_prime: x2.value,
        xi_prime: x2.value + c.value,
        epsilon_used: eps[eps.len() - 1],
        correction: c.value,
        extrapolation_error: x2.error + c.error,
    })
}

/// `int_{mu_a}^{mu_b} xi'`, from the change of `(1/pi) arg d` along a path
/// through the upper half-plane at height `height` plus the endpoint values
/// of `(1/pi) Im tr T`.
pub fn integrated_xi_prime(model: &BsModel, mu_a: f64, mu_b: f64, height: f64) -> Result<f64> {
    let a = Complex64::new(mu_a, 0.0);
    let b = Complex64::new(mu_b, 0.0);
    let h = Complex64::new(0.0, height);
    let legs = [(a, a + h), (a + h, b + h), (b + h, b)];
    let rule = GaussLegendre::new(16);
    let mut prev: Option<f64> = None;
    let mut panels = 8;
    loop {
        let mut total = Complex64::new(0.0, 0.0);
        for (p, q) in legs {
            for k in 0..panels {
                let t0 = k as f64 / panels as f64;
                let t1 = (k + 1) as f64 / panels as f64;
                for (t, w) in rule.mapped(t0, t1) {
                    let z = p + (q - p) * t;
                    model.check_point(z)?;
                    total += model.evaluate(z, true)?.dlog_d * (q - p) * w;
                }
            }
        }
        let value = total.im / PI;
        if let Some(pv) = prev {
            if (value - pv).abs() < 1e-8 * (1.0 + value.abs()) {
                let ta = model.evaluate(a, false)?.trace_t.im;
                let tb = model.evaluate(b, false)?.trace_t.im;
                return Ok(value + (tb - ta) / PI);
            }
        }
        prev = Some(value);
        panels *= 2;
        if panels > 1024 {
            return Err(Error::QuadratureNonConvergence(format!(
                "path integral of xi' over [{mu_a}, {mu_b}] did not settle"
            )));
        }
    }
}

/// Real resonances count as eigenvalues when `|Im w|` is below this.
pub const REAL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BwWindow {
    pub q: usize,
    pub center: f64,
    pub r: f64,
    /// Rescaled interval `I`; energies are `center + r I`.
    pub interval: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BwOptions {
    pub epsilons: Vec<f64>,
    pub background_degree: usize,
    pub base_points: usize,
    /// Extra points per complex resonance, spread over `+-spread |Im w|`.
    pub peak_points: usize,
    pub spread: f64,
    /// Samples closer than this to a real resonance are masked.
    pub mask: f64,
}

impl Default for BwOptions {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-8, 5e-9, 2.5e-9],
            background_degree: 3,
            base_points: 200,
            peak_points: 121,
            spread: 40.0,
            mask: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BWDecomposition {
    pub window: BwWindow,
    pub samples: Vec<SSFSample>,
    /// `sum_w (-Im w) / (pi |mu - w|^2)` at each sample
    pub lorentzian_part: Vec<f64>,
    /// Real resonances inside the window, left out of the fit.
    pub delta_locations: Vec<f64>,
    pub complex_resonances: Vec<Complex64>,
    /// Polynomial in `(mu - center) / r`, lowest degree first.
    pub background: Vec<f64>,
    pub background_values: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Trapezoid weights of the samples.
    pub weights: Vec<f64>,
    pub residual: f64,
    pub xi_norm: f64,
    pub relative_residual: f64,
}

impl BWDecomposition {
    /// `-pi |Im w| xi'(Re w)` for the complex resonance nearest `w`: 1 for a
    /// pure Lorentzian peak.
    pub fn peak_ratio(&self, w: Complex64) -> Option<f64> {
        let k = self
            .samples
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.mu - w.re).abs().total_cmp(&(b.1.mu - w.re).abs()))?
            .0;
        Some(-self.samples[k].xi_prime * PI * w.im.abs())
    }
}

pub fn lorentzian(mu: f64, w: Complex64) -> f64 {
    -w.im / (PI * (mu - w).norm_sqr())
}

fn sample_grid(window: &BwWindow, peaks: &[Complex64], reals: &[f64], opts: &BwOptions) -> Vec<f64> {
    let lo = window.center + window.r * window.interval.0;
    let hi = window.center + window.r * window.interval.1;
    let mut mu: Vec<f64> = (0..opts.base_points)
        .map(|k| lo + (hi - lo) * k as f64 / (opts.base_points - 1) as f64)
        .collect();
    for w in peaks {
        let half = (opts.peak_points / 2) as f64;
        let smax = opts.spread.asinh();
        for k in 0..opts.peak_points {
            // sinh spacing: dense at the peak, sparse in the tails
            let s = (smax * (k as f64 - half) / half).sinh();
            let x = w.re + s * w.im.abs();
            if x > lo && x < hi {
                mu.push(x);
            }
        }
    }
    mu.retain(|x| reals.iter().all(|r| (x - r).abs() > opts.mask));
    mu.sort_by(f64::total_cmp);
    mu.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    mu
}

fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { x[i] - x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] - x[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Weighted least-squares polynomial fit, lowest degree first.
pub fn polyfit(x: &[f64], y: &[f64], w: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    let p = degree + 1;
    if n < p {
        return Err(Error::InsufficientData(format!("{n} samples for a degree-{degree} fit")));
    }
    let a = Mat::from_fn(n, p, |i, j| w[i].sqrt() * x[i].powi(j as i32));
    let b = Mat::from_fn(n, 1, |i, _| w[i].sqrt() * y[i]);
    let qr = a.qr();
    let sol = faer::linalg::solvers::SolveLstsq::solve_lstsq(&qr, &b);
    Ok((0..p).map(|j| sol[(j, 0)]).collect())
}

pub fn polyval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Samples `xi'` over `center + r I`, subtracts the Lorentzian sum of all
/// complex resonances of the set and fits the remainder by a polynomial.
pub fn breit_wigner_reconstruct(
    model: &BsModel,
    window: &BwWindow,
    set: &ResonanceSet,
    opts: &BwOptions,
    exec: Execution,
) -> Result<BWDecomposition> {
    let lo = window.center + window.r * window.interval.0;
    let hi = window.center + window.r * window.interval.1;
    for x in [lo, hi] {
        if !set.region.contains(Complex64::new(x, 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "window end {x} lies outside the searched region; the resonance set would be incomplete"
            )));
        }
    }
    let complex: Vec<Complex64> =
        set.items.iter().filter(|r| r.z.im < -REAL_TOLERANCE).flat_map(|r| vec![r.z; r.multiplicity]).collect();
    let reals: Vec<f64> =
        set.items.iter().filter(|r| r.z.im.abs() <= REAL_TOLERANCE).map(|r| r.z.re).collect();
    let delta_locations: Vec<f64> = reals.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    let peaks: Vec<Complex64> = complex.iter().copied().filter(|w| w.re > lo && w.re < hi).collect();
    let mu = sample_grid(window, &peaks, &reals, opts);
    let samples = exec
        .map(&mu, |&m| xi_prime(model, m, &opts.epsilons))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let lorentzian_part: Vec<f64> = mu.iter().map(|&m| complex.iter().map(|&w| lorentzian(m, w)).sum()).collect();
    let x: Vec<f64> = mu.iter().map(|m| (m - window.center) / window.r).collect();
    let remainder: Vec<f64> = samples.iter().zip(&lorentzian_part).map(|(s, l)| s.xi_prime + l).collect();
    let weights = trapezoid_weights(&mu);
    let background = polyfit(&x, &remainder, &weights, opts.background_degree)?;
    let background_values: Vec<f64> = x.iter().map(|&t| polyval(&background, t)).collect();
    let residuals: Vec<f64> = remainder.iter().zip(&background_values).map(|(r, b)| r - b).collect();
    let l2 = |v: &[f64]| v.iter().zip(&weights).map(|(a, w)| a * a * w).sum::<f64>().sqrt();
    let residual = l2(&residuals);
    let xi: Vec<f64> = samples.iter().map(|s| s.xi_prime).collect();
    let xi_norm = l2(&xi);
    Ok(BWDecomposition {
        window: window.clone(),
        samples,
        lorentzian_part,
        delta_locations,
        complex_resonances: peaks,
        background,
        background_values,
        residuals,
        weights,
        residual,
        xi_norm,
        relative_residual: if xi_norm > 0.0 { residual / xi_norm } else { 0.0 },
    })
}

/// Eigenvalues of the self-adjoint truncations of `H` and `H_0`, per sector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorSpectra {
    pub m: Vec<i64>,
    pub h: Vec<Vec<f64>>,
    pub h0: Vec<Vec<f64>>,
}

impl SectorSpectra {
    /// `(#{spec H <= mu}, #{spec H_0 <= mu})`
    pub fn count_below(&self, mu: f64) -> (usize, usize) {
        let c = |v: &Vec<Vec<f64>>| v.iter().map(|s| s.iter().filter(|&&e| e <= mu).count()).sum();
        (c(&self.h), c(&self.h0))
    }
}

/// Needs a model built with `theta = 0`.
pub fn self_adjoint_spectra(model: &BsModel, exec: Execution) -> Result<SectorSpectra> {
    if model.theta() != Complex64::new(0.0, 0.0) {
        return Err(Error::InvalidParameter("self-adjoint spectra need an undistorted model".into()));
    }
    let n = model.axis.n();
    let h = model.axis.dense();
    let axis_ev = dense::symmetric_eigenvalues(&Mat::from_fn(n, n, |i, j| 0.5 * (h[(i, j)].re + h[(j, i)].re)))?;
    let ms = model.m_values();
    let per = exec.map(&ms, |&m| -> Result<(Vec<f64>, Vec<f64>)> {
        let hm = model.hamiltonian_sector(m)?;
        let d = hm.nrows();
        let ev = dense::symmetric_eigenvalues(&Mat::from_fn(d, d, |i, j| 0.5 * (hm[(i, j)].re + hm[(j, i)].re)))?;
        let mut ev0: Vec<f64> = (0..=model.levels() as i64)
            .filter(|&j| m >= -j)
            .flat_map(|j| axis_ev.iter().map(move |e| e + 2.0 * model.b * j as f64))
            .collect();
        ev0.sort_by(f64::total_cmp);
        Ok((ev, ev0))
    });
    let mut out = SectorSpectra { m: ms.clone(), h: Vec::new(), h0: Vec::new() };
    for p in per {
        let (a, b) = p?;
        out.h.push(a);
        out.h0.push(b);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `sum_k c_k x^k`
    Polynomial { coeffs: Vec<f64> },
    /// `p(x) / (x - pole)`
    Rational { coeffs: Vec<f64>, pole: Complex64 },
}

impl TestFunction {
    pub fn eval(&self, x: Complex64) -> Complex64 {
        let p = |c: &[f64]| c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &k| acc * x + k);
        match self {
            TestFunction::Polynomial { coeffs } => p(coeffs),
            TestFunction::Rational { coeffs, pole } => p(coeffs) / (x - pole),
        }
    }
}

/// Rescaled windows: `Omega~ = [x0, x1] x [-height, height]` and `Omega`,
/// `width` wider on each side and twice as high. The cutoff is 1 on
/// `[x0, x1]` and falls to 0 over `width` by a quintic smoothstep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceWindow {
    pub x0: f64,
    pub x1: f64,
    pub height: f64,
    pub width: f64,
}

impl TraceWindow {
    pub fn cutoff(&self, x: f64) -> f64 {
        let step = |t: f64| {
            let t = t.clamp(0.0, 1.0);
            t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
        };
        if x < self.x0 {
            step((x - (self.x0 - self.width)) / self.width)
        } else if x > self.x1 {
            step(((self.x1 + self.width) - x) / self.width)
        } else {
            1.0
        }
    }

    pub fn in_inner(&self, z: Complex64) -> bool {
        z.re >= self.x0 && z.re <= self.x1 && z.im.abs() <= self.height
    }

    /// `sup |f|` over the lower half of `Omega \ Omega~`.
    pub fn sup_outside(&self, f: &TestFunction) -> f64 {
        let (a, b) = (self.x0 - self.width, self.x1 + self.width);
        let h = 2.0 * self.height;
        let mut best: f64 = 0.0;
        for i in 0..=200 {
            for j in 0..=100 {
                let z = Complex64::new(a + (b - a) * i as f64 / 200.0, -h * j as f64 / 100.0);
                if !self.in_inner(z) || z.re == self.x0 || z.re == self.x1 || z.im == -self.height {
                    best = best.max(f.eval(z).norm());
                }
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFormulaResult {
    pub r: f64,
    pub lhs: f64,
    pub rhs: Complex64,
    pub error: f64,
    pub n_q: f64,
    pub sup_f: f64,
    pub bound_ratio: f64,
    /// Relative change of `lhs` against the refined truncation.
    pub refinement_change: f64,
}

fn trace_lhs(spectra: &SectorSpectra, center: f64, r: f64, window: &TraceWindow, f: &TestFunction) -> f64 {
    let sum = |v: &Vec<Vec<f64>>| -> f64 {
        v.iter()
            .flatten()
            .map(|&e| {
                let x = (e - center) / r;
                let c = window.cutoff(x);
                if c == 0.0 {
                    0.0
                } else {
                    c * f.eval(Complex64::new(x, 0.0)).re
                }
            })
            .sum()
    };
    sum(&spectra.h) - sum(&spectra.h0)
}

/// `N_q(r) = n_+(r, nu p_q W p_q) |ln r| + ntilde_1(r/nu) + ntilde_2(r/nu)`.
pub fn n_q(r: f64, nu: f64, spectrum: &ToeplitzSpectrum) -> Result<f64> {
    let n_plus = counting_function(r, &spectrum.scaled(nu)) as f64;
    let t1 = ntilde_p(r / nu, spectrum, 1)?.value;
    let t2 = ntilde_p(r / nu, spectrum, 2)?.value;
    Ok(n_plus * r.ln().abs() + t1 + t2)
}

/// Compares `tr (phi f)((H - c)/r) - (phi f)((H_0 - c)/r)` with the sum of
/// `f((w - c)/r)` over resonances in `c + r Omega~`.
#[allow(clippy::too_many_arguments)]
pub fn trace_formula_check(
    spectra: &SectorSpectra,
    refined: &SectorSpectra,
    center: f64,
    r: f64,
    window: &TraceWindow,
    f: &TestFunction,
    set: &ResonanceSet,
    spectrum: &ToeplitzSpectrum,
    nu: f64,
) -> Result<TraceFormulaResult> {
    let far = Complex64::new(center + r * (window.x1 + window.width), -2.0 * r * window.height);
    if !set.region.contains(far) || !set.region.contains(Complex64::new(center + r * (window.x0 - window.width), 0.0)) {
        return Err(Error::InvalidParameter(format!("the window for r = {r} leaves the searched region")));
    }
    let lhs = trace_lhs(spectra, center, r, window, f);
    let lhs_refined = trace_lhs(refined, center, r, window, f);
    let refinement_change = (lhs - lhs_refined).abs() / lhs_refined.abs().max(1.0);
    if refinement_change > 0.01 {
        return Err(Error::TraceNotConverged(format!(
            "trace changes by {:.2}% on refinement at r = {r}",
            100.0 * refinement_change
        )));
    }
    let rhs: Complex64 = set
        .items
        .iter()
        .map(|w| {
            let x = (w.z - center) / r;
            if window.in_inner(x) {
                f.eval(x) * w.multiplicity as f64
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .sum();
    let error = (Complex64::new(lhs_refined, 0.0) - rhs).norm();
    let nq = n_q(r, nu, spectrum)?;
    let sup_f = window.sup_outside(f);
    Ok(TraceFormulaResult {
        r,
        lhs: lhs_refined,
        rhs,
        error,
        n_q: nq,
        sup_f,
        bound_ratio: error / (sup_f * nq),
        refinement_change,
    })
}
