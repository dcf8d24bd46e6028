//! Landau levels in the symmetric gauge and Toeplitz operators `p_q W p_q`
//! for radial `W`.
//!
//! With `t = b rho^2 / 2`, the level-`q`, angular-momentum-`m` state has the
//! radial density `f(t) = n!/(n+k)! t^k e^{-t} (L_n^k(t))^2` (integrating to
//! one in `dt`), where `(n, k) = (q, m)` for `m >= 0` and `(q - |m|, |m|)`
//! for `-q <= m < 0`. Radial `W` is diagonal in `m`, so the Toeplitz
//! eigenvalues are the integrals `mu_{q,m} = int W f dt`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::dense;
use crate::quadrature::Composite;

/// Transverse potential family, always radial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TransverseFamily {
    /// `<rho>^{-alpha} = (1 + rho^2)^{-alpha/2}`
    PowerLaw { alpha: f64 },
    /// `exp(-(rho / scale)^2)`
    Gaussian { scale: f64 },
    /// indicator of `rho < radius`
    CompactSupport { radius: f64 },
    /// `W = 1`; diagnostic only, not a valid potential.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransversePotential {
    #[serde(flatten)]
    pub family: TransverseFamily,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl TransversePotential {
    pub fn power_law(alpha: f64) -> Result<Self> {
        if !(alpha > 2.0) {
            return Err(Error::InvalidParameter(format!("power-law exponent must exceed 2, got {alpha}")));
        }
        Ok(Self { family: TransverseFamily::PowerLaw { alpha }, amplitude: 1.0 })
    }

    pub fn gaussian(scale: f64) -> Self {
        Self { family: TransverseFamily::Gaussian { scale }, amplitude: 1.0 }
    }

    pub fn compact_support(radius: f64) -> Self {
        Self { family: TransverseFamily::CompactSupport { radius }, amplitude: 1.0 }
    }

    pub fn constant() -> Self {
        Self { family: TransverseFamily::Constant, amplitude: 1.0 }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.amplitude *= c;
        self
    }

    pub fn eval(&self, rho: f64) -> f64 {
        self.amplitude * self.shape(rho)
    }

    fn shape(&self, rho: f64) -> f64 {
        match self.family {
            TransverseFamily::PowerLaw { alpha } => (1.0 + rho * rho).powf(-0.5 * alpha),
            TransverseFamily::Gaussian { scale } => (-(rho / scale).powi(2)).exp(),
            TransverseFamily::CompactSupport { radius } => {
                if rho < radius {
                    1.0
                } else {
                    0.0
                }
            }
            TransverseFamily::Constant => 1.0,
        }
    }

    /// Decay exponent `delta_perp`; infinite for the fast-decaying families.
    pub fn delta_perp(&self) -> f64 {
        match self.family {
            TransverseFamily::PowerLaw { alpha } => alpha,
            TransverseFamily::Constant => 0.0,
            _ => f64::INFINITY,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.amplitude.abs()
    }

    /// `int_0^inf W dt` with `t = b rho^2 / 2`, i.e. `tr(p_0 W p_0)`.
    pub fn trace_integral(&self, b: f64) -> Result<f64> {
        match self.family {
            TransverseFamily::Constant => Ok(f64::INFINITY),
            TransverseFamily::CompactSupport { radius } => Ok(self.amplitude * b * radius * radius / 2.0),
            _ => {
                // rho in [0, inf) through rho = u / (1 - u)
                let quad = Composite::new(20, 1e-12);
                let v = quad.integrate(0.0, 1.0, |u| {
                    if u >= 1.0 {
                        return 0.0;
                    }
                    let rho = u / (1.0 - u);
                    b * rho * self.eval(rho) / (1.0 - u).powi(2)
                })?;
                Ok(v.value)
            }
        }
    }
}

/// Landau level data for field strength `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandauBasis {
    pub b: f64,
    /// Highest Landau level index `J`.
    pub q_max: usize,
    /// Highest angular momentum `M`.
    pub m_max: i64,
    pub quadrature_order: usize,
    pub rel_tol: f64,
}

impl LandauBasis {
    pub fn new(b: f64, q_max: usize, m_max: i64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::InvalidParameter(format!("field strength b must be positive, got {b}")));
        }
        Ok(Self { b, q_max, m_max, quadrature_order: 24, rel_tol: 1e-10 })
    }

    pub fn level_energy(&self, q: usize) -> f64 {
        2.0 * self.b * q as f64
    }

    /// `(n, k)` Laguerre indices of the state `(q, m)`, if it exists.
    pub fn laguerre_indices(q: usize, m: i64) -> Option<(usize, usize)> {
        if m >= 0 {
            Some((q, m as usize))
        } else if (-m) as usize <= q {
            Some((q - (-m) as usize, (-m) as usize))
        } else {
            None
        }
    }

    pub fn t_of_rho(&self, rho: f64) -> f64 {
        0.5 * self.b * rho * rho
    }

    pub fn rho_of_t(&self, t: f64) -> f64 {
        (2.0 * t.max(0.0) / self.b).sqrt()
    }

    /// Signed radial amplitude `chi_{n,k}(t)`, with `chi^2 = f`.
    pub fn radial(n: usize, k: usize, t: f64) -> f64 {
        let (log_abs, sign) = log_radial(n, k, t);
        sign * log_abs.exp()
    }

    /// `int W chi_{n1,k} chi_{n2,k} dt` over the bulk of both functions.
    pub fn radial_overlap(&self, w: &TransversePotential, n1: usize, n2: usize, k: usize) -> Result<f64> {
        let nmax = n1.max(n2) as f64;
        let kf = k as f64;
        let centre = kf + 2.0 * nmax + 1.0;
        let spread = 14.0 * centre.sqrt() + 4.0 * nmax;
        let mut lo = (kf + 1.0 - spread).max(0.0);
        let mut hi = centre + spread + 40.0;
        let mut breaks = Vec::new();
        if let TransverseFamily::CompactSupport { radius } = w.family {
            let tr = self.t_of_rho(radius);
            if tr <= lo {
                lo = 0.0;
            }
            hi = hi.min(tr);
            if hi <= lo {
                return Ok(0.0);
            }
        }
        if let TransverseFamily::PowerLaw { .. } = w.family {
            // W varies on the scale t ~ b/2
            if lo < self.b {
                breaks.push(self.b.min(hi));
            }
        }
        let mut quad = Composite::new(self.quadrature_order, self.rel_tol);
        if n1 != n2 {
            // off-diagonal overlaps may vanish
            quad = quad.with_abs_tol(1e-13 * w.sup_norm());
        }
        let integrand = |t: f64| {
            if t <= 0.0 && k > 0 {
                return 0.0;
            }
            let (l1, s1) = log_radial(n1, k, t);
            let (l2, s2) = log_radial(n2, k, t);
            s1 * s2 * (l1 + l2).exp() * w.eval(self.rho_of_t(t))
        };
        let mut edges = vec![lo];
        edges.extend(breaks.into_iter().filter(|&x| x > lo && x < hi));
        edges.push(hi);
        let mut total = 0.0;
        for pair in edges.windows(2) {
            total += quad
                .integrate(pair[0], pair[1], integrand)
                .map_err(|e| Error::QuadratureNonConvergence(format!("(n={n1},{n2}, k={k}): {e}")))?
                .value;
        }
        Ok(total)
    }

    /// `mu_{q,m} = <phi_{q,m}, W phi_{q,m}>`.
    pub fn toeplitz_entry(&self, q: usize, m: i64, w: &TransversePotential) -> Result<f64> {
        let (n, k) = Self::laguerre_indices(q, m)
            .ok_or_else(|| Error::InvalidParameter(format!("no state with q = {q}, m = {m}")))?;
        if let TransverseFamily::Constant = w.family {
            return Ok(w.amplitude);
        }
        self.radial_overlap(w, n, n, k)
    }

    /// Gram matrix `G_{jj'}(m) = int W chi_j chi_j' dt` over the levels
    /// `j = max(0, -m) ..= q_max`, returned with the list of levels.
    pub fn level_gram(&self, m: i64, w: &TransversePotential) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let first = if m < 0 { (-m) as usize } else { 0 };
        let levels: Vec<usize> = (first..=self.q_max).collect();
        let nl = levels.len();
        let mut g = vec![vec![0.0; nl]; nl];
        for a in 0..nl {
            for c in a..nl {
                let (na, k) = Self::laguerre_indices(levels[a], m).expect("level exists");
                let (nc, _) = Self::laguerre_indices(levels[c], m).expect("level exists");
                let v = if let TransverseFamily::Constant = w.family {
                    if a == c { w.amplitude } else { 0.0 }
                } else {
                    self.radial_overlap(w, na, nc, k)?
                };
                g[a][c] = v;
                g[c][a] = v;
            }
        }
        Ok((levels, g))
    }
}

/// `ln |chi_{n,k}(t)|` and its sign.
fn log_radial(n: usize, k: usize, t: f64) -> (f64, f64) {
    let l = laguerre(n, k as f64, t);
    if t <= 0.0 {
        if k == 0 {
            let lf = 0.5 * (ln_gamma(n as f64 + 1.0) - ln_gamma((n + k) as f64 + 1.0));
            return (lf + l.abs().ln(), l.signum());
        }
        return (f64::NEG_INFINITY, 1.0);
    }
    let log_norm = ln_gamma(n as f64 + 1.0) - ln_gamma((n + k) as f64 + 1.0);
    let lf = 0.5 * (log_norm + k as f64 * t.ln() - t) + l.abs().ln();
    (lf, if l < 0.0 { -1.0 } else { 1.0 })
}

/// Generalized Laguerre polynomial `L_n^k(t)` by three-term recurrence.
pub fn laguerre(n: usize, k: f64, t: f64) -> f64 {
    let mut p0 = 1.0;
    if n == 0 {
        return p0;
    }
    let mut p1 = 1.0 + k - t;
    for i in 1..n {
        let fi = i as f64;
        let p2 = ((2.0 * fi + 1.0 + k - t) * p1 - (fi + k) * p0) / (fi + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Eigenvalues of `p_q W p_q` for one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzSpectrum {
    pub q: usize,
    /// Eigenvalues sorted in descending order.
    pub mu: Vec<f64>,
    /// Angular momentum of each entry of `mu`.
    pub m_of: Vec<i64>,
    /// `mu` in angular-momentum order, starting at `m = -q`.
    pub by_m: Vec<f64>,
    /// First angular momentum from which `by_m` is non-increasing.
    pub monotone_from: i64,
}

impl ToeplitzSpectrum {
    pub fn from_by_m(q: usize, by_m: Vec<f64>) -> Self {
        let m0 = -(q as i64);
        let mut order: Vec<usize> = (0..by_m.len()).collect();
        order.sort_by(|&a, &b| by_m[b].total_cmp(&by_m[a]).then(a.cmp(&b)));
        let mu = order.iter().map(|&i| by_m[i]).collect();
        let m_of = order.iter().map(|&i| m0 + i as i64).collect();
        let mut start = by_m.len().saturating_sub(1);
        while start > 0 && by_m[start - 1] >= by_m[start] {
            start -= 1;
        }
        Self { q, mu, m_of, by_m, monotone_from: m0 + start as i64 }
    }

    pub fn m_max(&self) -> i64 {
        self.by_m.len() as i64 - 1 - self.q as i64
    }

    pub fn mu_at(&self, m: i64) -> Option<f64> {
        let idx = m + self.q as i64;
        (idx >= 0).then(|| self.by_m.get(idx as usize).copied()).flatten()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_by_m(self.q, self.by_m.iter().map(|v| v * c).collect())
    }
}

pub fn toeplitz_eigenvalues(
    q: usize,
    w: &TransversePotential,
    basis: &LandauBasis,
    exec: Execution,
) -> Result<ToeplitzSpectrum> {
    let m0 = -(q as i64);
    let count = (basis.m_max - m0 + 1).max(0) as usize;
    let values = exec.map_range(0..count, |i| basis.toeplitz_entry(q, m0 + i as i64, w));
    let by_m = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ToeplitzSpectrum::from_by_m(q, by_m))
}

/// Smallest `M` such that every `mu_{q,m}` with `m > M` in the decaying tail
/// is below `1e-2 * r_min`, found by doubling followed by bisection.
pub fn choose_m_max(q: usize, w: &TransversePotential, basis: &LandauBasis, r_min: f64) -> Result<i64> {
    let threshold = 1e-2 * r_min;
    let mu = |m: i64| basis.toeplitz_entry(q, m, w);
    let mut hi = 8i64;
    let limit = 1i64 << 22;
    while mu(hi)? >= threshold {
        hi *= 2;
        if hi > limit {
            return Err(Error::TruncationTooSmall(format!(
                "mu_(q={q}) stays above {threshold:.3e} up to m = {limit}"
            )));
        }
    }
    let mut lo = hi / 2;
    if mu(lo)? < threshold {
        return Ok(lo);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if mu(mid)? >= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `n_+(r) = #{m : mu_{q,m} > r}`.
pub fn counting_function(r: f64, spectrum: &ToeplitzSpectrum) -> usize {
    if spectrum.mu.iter().any(|&m| (m - r).abs() < 1e-12) {
        log::warn!("r = {r} lies within 1e-12 of a Toeplitz eigenvalue; the count is unstable");
    }
    spectrum.mu.partition_point(|&m| m > r)
}

/// Counting function of an arbitrary list of eigenvalues.
pub fn count_above(r: f64, values: &[f64]) -> usize {
    values.iter().filter(|&&v| v > r).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NTilde {
    pub value: f64,
    /// Estimated contribution of the discarded angular momenta.
    pub tail_bound: f64,
}

/// `sum_{mu <= r} (mu / r)^p` over the truncated spectrum, plus a bound on
/// the discarded tail.
pub fn ntilde_p(r: f64, spectrum: &ToeplitzSpectrum, p: u32) -> Result<NTilde> {
    let NTilde { value, tail_bound } = ntilde_p_truncated(r, spectrum, p)?;
    if !(tail_bound < 1e-6) {
        return Err(Error::TruncationTooSmall(format!(
            "discarded tail of ntilde_{p}({r:.3e}) is bounded only by {tail_bound:.3e}; increase M"
        )));
    }
    Ok(NTilde { value, tail_bound })
}

/// Like [`ntilde_p`] but returns the truncated sum whatever the tail bound.
pub fn ntilde_p_truncated(r: f64, spectrum: &ToeplitzSpectrum, p: u32) -> Result<NTilde> {
    if !(p == 1 || p == 2) || !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("ntilde_p needs p in {{1, 2}} and r > 0 (p = {p}, r = {r})")));
    }
    let value: f64 = spectrum.mu.iter().filter(|&&m| m <= r).map(|&m| (m / r).powi(p as i32)).sum();
    let tail_bound = tail_estimate(&spectrum.by_m, r, p);
    Ok(NTilde { value, tail_bound })
}

fn tail_estimate(by_m: &[f64], r: f64, p: u32) -> f64 {
    let len = by_m.len();
    if len < 3 {
        return f64::INFINITY;
    }
    let last = by_m[len - 1];
    let prev = by_m[len - 2];
    if last <= 0.0 {
        return 0.0;
    }
    if last > r || prev <= last {
        return f64::INFINITY;
    }
    let pf = p as f64;
    let big_m = len as f64;
    let lead = (last / r).powf(pf);
    let ratio = (last / prev).powf(pf);
    let geometric = lead * ratio / (1.0 - ratio);
    let s = (prev / last).ln() / (big_m / (big_m - 1.0)).ln();
    let power = if pf * s > 1.0 { lead * big_m / (pf * s - 1.0) } else { f64::INFINITY };
    geometric.max(power)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingLaw {
    /// `ln n_+` against `ln(1/r)`; slope should approach `2 / alpha`.
    PowerLaw,
    /// `n_+` against `|ln r|`.
    Logarithmic,
    /// `n_+ ln|ln r| / |ln r|` should stay bounded.
    LogOverLogLog,
}

impl CountingLaw {
    pub fn for_family(family: &TransverseFamily) -> Self {
        match family {
            TransverseFamily::PowerLaw { .. } => CountingLaw::PowerLaw,
            TransverseFamily::Gaussian { .. } => CountingLaw::Logarithmic,
            _ => CountingLaw::LogOverLogLog,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingFit {
    pub law: CountingLaw,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual relative to the mean of the fitted values.
    pub relative_residual: f64,
    pub r: Vec<f64>,
    pub counts: Vec<usize>,
    /// Envelope quantity per grid point (`n_+ ln|ln r| / |ln r|` for the
    /// compact-support law, the fitted ordinate otherwise).
    pub envelope: Vec<f64>,
}

pub fn fit_counting_asymptotics(
    family: &TransverseFamily,
    spectrum: &ToeplitzSpectrum,
    r_grid: &[f64],
) -> Result<CountingFit> {
    let law = CountingLaw::for_family(family);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rs = Vec::new();
    let mut counts = Vec::new();
    let mut envelope = Vec::new();
    for &r in r_grid {
        let n = counting_function(r, spectrum);
        if n == 0 || !(r > 0.0 && r < 1.0) {
            continue;
        }
        let lr = -r.ln();
        let (x, y, env) = match law {
            CountingLaw::PowerLaw => (lr, (n as f64).ln(), (n as f64).ln()),
            CountingLaw::Logarithmic => (lr, n as f64, n as f64),
            CountingLaw::LogOverLogLog => {
                if lr <= 1.0 {
                    continue;
                }
                (lr, n as f64, n as f64 * lr.ln() / lr)
            }
        };
        xs.push(x);
        ys.push(y);
        rs.push(r);
        counts.push(n);
        envelope.push(env);
    }
    if xs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} usable r values, at least 5 are needed",
            xs.len()
        )));
    }
    let (slope, intercept, rms) = linear_fit(&xs, &ys);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    Ok(CountingFit {
        law,
        slope,
        intercept,
        relative_residual: rms / mean.abs().max(f64::MIN_POSITIVE),
        r: rs,
        counts,
        envelope,
    })
}

/// Least squares `y = slope x + intercept`; returns the RMS residual too.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Eigenvalues of a truncated realization of `B_q = W^{1/2} p_q W^{1/2}`.
///
/// Each angular-momentum sector is discretized on its own Gauss-Legendre
/// grid in `t` (independent of the Toeplitz quadrature) and diagonalized as
/// a dense symmetric matrix.
pub fn b_q_eigenvalues(
    q: usize,
    w: &TransversePotential,
    basis: &LandauBasis,
    points_per_sector: usize,
    exec: Execution,
) -> Result<Vec<f64>> {
    let m0 = -(q as i64);
    let count = (basis.m_max - m0 + 1).max(0) as usize;
    let sectors = exec.map_range(0..count, |i| -> Result<Vec<f64>> {
        let m = m0 + i as i64;
        let (n, k) = LandauBasis::laguerre_indices(q, m).expect("state exists");
        let kf = k as f64;
        let centre = kf + 2.0 * n as f64 + 1.0;
        let spread = 14.0 * centre.sqrt() + 4.0 * n as f64;
        let lo = (kf + 1.0 - spread).max(0.0);
        let mut hi = centre + spread + 40.0;
        if let TransverseFamily::CompactSupport { radius } = w.family {
            hi = hi.min(basis.t_of_rho(radius));
        }
        let panels = points_per_sector.div_ceil(16).max(1);
        let nodes = Composite::new(16, 1e-10).points(lo.min(hi), hi, panels);
        let v: Vec<f64> = nodes
            .iter()
            .map(|&(t, wt)| wt.sqrt() * w.eval(basis.rho_of_t(t)).max(0.0).sqrt() * LandauBasis::radial(n, k, t))
            .collect();
        let dim = v.len();
        let mat = faer::Mat::<f64>::from_fn(dim, dim, |a, c| v[a] * v[c]);
        dense::symmetric_eigenvalues(&mat)
    });
    let mut all = Vec::new();
    for s in sectors {
        all.extend(s?);
    }
    all.sort_by(|a, b| b.total_cmp(a));
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(m_max: i64) -> LandauBasis {
        LandauBasis::new(2.0, 3, m_max).unwrap()
    }

    #[test]
    fn laguerre_low_orders() {
        let t = 0.7;
        let k = 2.0;
        assert!((laguerre(1, k, t) - (1.0 + k - t)).abs() < 1e-15);
        let l2 = 0.5 * (t * t - 2.0 * (k + 2.0) * t + (k + 1.0) * (k + 2.0));
        assert!((laguerre(2, k, t) - l2).abs() < 1e-14);
    }

    #[test]
    fn radial_functions_are_orthonormal() {
        let bs = basis(0);
        let w = TransversePotential::constant();
        for k in [0usize, 3, 40] {
            for n1 in 0..4 {
                for n2 in 0..4 {
                    let v = bs.radial_overlap(&w, n1, n2, k).unwrap();
                    let expect = if n1 == n2 { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-10, "n1={n1} n2={n2} k={k}: {v}");
                }
            }
        }
    }

    #[test]
    fn gaussian_lowest_level_closed_form() {
        let bs = basis(30);
        let spec = toeplitz_eigenvalues(0, &TransversePotential::gaussian(1.0), &bs, Execution::Sequential).unwrap();
        for m in 0..=30 {
            let expect = 0.5f64.powi(m as i32 + 1);
            let got = spec.mu_at(m).unwrap();
            assert!((got - expect).abs() < 1e-10 * expect, "m={m}");
        }
        assert_eq!(counting_function(0.1, &spec), 3);
        assert_eq!(spec.monotone_from, 0);
    }

    #[test]
    fn gaussian_first_level_closed_form() {
        let bs = basis(12);
        let spec = toeplitz_eigenvalues(1, &TransversePotential::gaussian(1.0), &bs, Execution::Sequential).unwrap();
        assert!((spec.mu_at(-1).unwrap() - 0.25).abs() < 1e-12);
        for m in 0..=12 {
            let expect = (m as f64 + 2.0) / 2f64.powi(m as i32 + 3);
            assert!((spec.mu_at(m).unwrap() - expect).abs() < 1e-10 * expect);
        }
    }

    #[test]
    fn constant_potential_gives_unit_eigenvalues() {
        let spec =
            toeplitz_eigenvalues(0, &TransversePotential::constant(), &basis(10), Execution::Sequential).unwrap();
        assert!(spec.mu.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn gram_diagonal_matches_toeplitz() {
        let bs = basis(5);
        let w = TransversePotential::gaussian(1.0);
        let (levels, g) = bs.level_gram(-1, &w).unwrap();
        assert_eq!(levels, vec![1, 2, 3]);
        for (a, &j) in levels.iter().enumerate() {
            let mu = bs.toeplitz_entry(j, -1, &w).unwrap();
            assert!((g[a][a] - mu).abs() < 1e-13);
        }
        assert!((g[0][1] - g[1][0]).abs() == 0.0);
    }

    #[test]
    fn trace_matches_sum_of_lowest_level() {
        let bs = basis(80);
        let w = TransversePotential::power_law(4.0).unwrap();
        let spec = toeplitz_eigenvalues(0, &w, &bs, Execution::Sequential).unwrap();
        let partial: f64 = spec.by_m.iter().sum();
        // mu_m ~ (m + 1)^{-2}: tail beyond M is about 1 / (M + 1)
        let tail = 1.0 / (bs.m_max as f64 + 1.5);
        let total = w.trace_integral(bs.b).unwrap();
        assert!((partial + tail - total).abs() < 2e-3 * total, "{partial} + {tail} vs {total}");
        let gauss = TransversePotential::gaussian(1.0);
        let spec = toeplitz_eigenvalues(0, &gauss, &bs, Execution::Sequential).unwrap();
        let sum: f64 = spec.by_m.iter().sum();
        assert!((sum - gauss.trace_integral(bs.b).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn compact_support_matches_incomplete_gamma() {
        let bs = basis(20);
        let w = TransversePotential::compact_support(1.5);
        let tr = bs.t_of_rho(1.5);
        for m in [0i64, 1, 5, 20] {
            let got = bs.toeplitz_entry(0, m, &w).unwrap();
            let expect = statrs::function::gamma::gamma_lr(m as f64 + 1.0, tr);
            assert!((got - expect).abs() < 1e-10 * expect.max(1e-300), "m={m}: {got} vs {expect}");
        }
    }

    #[test]
    fn counting_and_ntilde_on_geometric_spectrum() {
        let by_m: Vec<f64> = (0..60).map(|m| 0.5f64.powi(m + 1)).collect();
        let spec = ToeplitzSpectrum::from_by_m(0, by_m);
        assert_eq!(counting_function(0.6, &spec), 0);
        assert_eq!(counting_function(0.1, &spec), 3);
        // closed interval [0, r] includes mu = r itself
        let n1 = ntilde_p(0.25, &spec, 1).unwrap();
        assert!((n1.value - 2.0).abs() < 1e-12);
        let n1 = ntilde_p(0.2499, &spec, 1).unwrap();
        assert!((n1.value - 0.125 * 2.0 / 0.2499).abs() < 1e-12);
        let n2 = ntilde_p(0.2499, &spec, 2).unwrap();
        assert!(n2.value <= n1.value);
        assert_eq!(ntilde_p_truncated(1e-30, &spec, 1).unwrap().value, 0.0);
        assert!(ntilde_p(1e-30, &spec, 1).is_err());
    }

    #[test]
    fn ntilde_requests_more_momenta_for_slow_tails() {
        let by_m: Vec<f64> = (0..50).map(|m| (m as f64 + 1.0).powf(-1.5)).collect();
        let spec = ToeplitzSpectrum::from_by_m(0, by_m);
        assert!(matches!(ntilde_p(0.1, &spec, 1), Err(Error::TruncationTooSmall(_))));
    }

    #[test]
    fn fit_needs_five_points() {
        let spec = ToeplitzSpectrum::from_by_m(0, vec![0.5, 0.25, 0.125]);
        let fam = TransverseFamily::Gaussian { scale: 1.0 };
        assert!(matches!(
            fit_counting_asymptotics(&fam, &spec, &[0.3, 0.2, 0.1]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn choose_m_max_for_gaussian() {
        let bs = basis(0);
        let m = choose_m_max(0, &TransversePotential::gaussian(1.0), &bs, 1e-3).unwrap();
        // 2^{-(m+1)} < 1e-5 first at m = 16
        assert_eq!(m, 16);
    }

    #[test]
    fn b_q_counts_match_toeplitz() {
        let bs = basis(25);
        let w = TransversePotential::gaussian(1.0);
        let spec = toeplitz_eigenvalues(1, &w, &bs, Execution::Sequential).unwrap();
        let bq = b_q_eigenvalues(1, &w, &bs, 160, Execution::Sequential).unwrap();
        for r in [0.2, 0.07, 0.01, 3e-4] {
            assert_eq!(count_above(r, &bq), counting_function(r, &spec));
        }
    }
}
