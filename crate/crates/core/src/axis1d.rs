//! One-dimensional axis operator `-d^2/dx^2 + v0` under exterior complex
//! distortion `x -> phi(x) = x + theta g(x)`.
//!
//! The distorted operator is discretized in contour form,
//! `-(1/phi') d/dx ((1/phi') d/dx) + v0(phi(x))`, which is similar to the
//! unitary-conjugated operator and therefore has the same eigenvalues.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense, Banded};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Interpolation used for `g` between `R0` and `K`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionShape {
    /// `g(x) = x S(t)` with the quintic smoothstep `S`; `g` is C^2.
    #[default]
    Quintic,
    /// `g(x) = x S(t)` with the `exp(-1/t)` partition of unity; `g` is C^inf.
    Smooth,
}

impl TransitionShape {
    /// `S(t), S'(t), S''(t)` for `t` in `[0, 1]`.
    fn step(self, t: f64) -> (f64, f64, f64) {
        if t <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if t >= 1.0 {
            return (1.0, 0.0, 0.0);
        }
        match self {
            TransitionShape::Quintic => (
                t * t * t * (10.0 - 15.0 * t + 6.0 * t * t),
                30.0 * t * t * (1.0 - t) * (1.0 - t),
                60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
            ),
            TransitionShape::Smooth => {
                let s = t;
                let u = 1.0 - t;
                // S = 1 / (1 + exp(1/s - 1/u))
                let e = (1.0 / s - 1.0 / u).clamp(-700.0, 700.0);
                let big_s = 1.0 / (1.0 + e.exp());
                let h = 1.0 / (s * s) + 1.0 / (u * u);
                let dh = -2.0 / (s * s * s) + 2.0 / (u * u * u);
                let s1 = big_s * (1.0 - big_s) * h;
                let s2 = s1 * (1.0 - 2.0 * big_s) * h + big_s * (1.0 - big_s) * dh;
                (big_s, s1, s2)
            }
        }
    }
}

/// The map `phi_theta(x) = x + theta g(x)` with `g = 0` on `[-R0, R0]` and
/// `g(x) = x` for `|x| >= K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionProfile {
    pub r0: f64,
    pub k: f64,
    pub theta: Complex64,
    pub shape: TransitionShape,
    /// `sup |g'|` over the transition zone.
    pub slope_max: f64,
    /// `g(x) = x` everywhere (complex dilation).
    pub dilation: bool,
}

impl DistortionProfile {
    pub fn new(r0: f64, k: f64, theta: Complex64, shape: TransitionShape) -> Result<Self> {
        if !(r0 > 0.0 && r0 < k) {
            return Err(Error::InvalidParameter(format!(
                "distortion radii must satisfy 0 < R0 < K (R0 = {r0}, K = {k})"
            )));
        }
        let slope_max = transition_slope_max(r0, k, shape);
        let profile = Self { r0, k, theta, shape, slope_max, dilation: false };
        profile.check_invertible()?;
        Ok(profile)
    }

    /// Pure complex dilation, the `R0 -> 0`, `K -> 0` limit.
    pub fn dilation(theta: Complex64) -> Result<Self> {
        let profile = Self {
            r0: 0.0,
            k: 0.0,
            theta,
            shape: TransitionShape::Quintic,
            slope_max: 1.0,
            dilation: true,
        };
        profile.check_invertible()?;
        Ok(profile)
    }

    pub fn with_theta(&self, theta: Complex64) -> Result<Self> {
        let p = Self { theta, ..self.clone() };
        p.check_invertible()?;
        Ok(p)
    }

    fn check_invertible(&self) -> Result<()> {
        let q = self.theta.norm() * self.slope_max;
        if q >= 1.0 {
            return Err(Error::NonInvertibleContour(q));
        }
        Ok(())
    }

    /// `g, g', g''` at `x`.
    pub fn g(&self, x: f64) -> (f64, f64, f64) {
        if self.dilation {
            return (x, 1.0, 0.0);
        }
        let a = x.abs();
        if a <= self.r0 {
            return (0.0, 0.0, 0.0);
        }
        if a >= self.k {
            return (x, 1.0, 0.0);
        }
        let w = self.k - self.r0;
        let (s, s1, s2) = self.shape.step((a - self.r0) / w);
        let g = x * s;
        let g1 = s + a * s1 / w;
        let g2 = x.signum() * (2.0 * s1 / w + a * s2 / (w * w));
        (g, g1, g2)
    }

    pub fn phi(&self, x: f64) -> Complex64 {
        x + self.theta * self.g(x).0
    }

    /// `phi(x), phi'(x), phi''(x)`.
    pub fn phi_derivatives(&self, x: f64) -> (Complex64, Complex64, Complex64) {
        let (g, g1, g2) = self.g(x);
        (x + self.theta * g, ONE + self.theta * g1, self.theta * g2)
    }

    /// Direction of the rotated essential-spectrum ray, `(1 + theta)^{-2}`.
    pub fn ray_direction(&self) -> Complex64 {
        (ONE + self.theta).powi(-2)
    }

    /// Largest `|theta|` keeping the contour invertible.
    pub fn max_theta_modulus(&self) -> f64 {
        1.0 / self.slope_max
    }
}

fn transition_slope_max(r0: f64, k: f64, shape: TransitionShape) -> f64 {
    let w = k - r0;
    let samples = 20_000;
    (0..=samples)
        .map(|i| {
            let t = i as f64 / samples as f64;
            let (s, s1, _) = shape.step(t);
            (s + (r0 + t * w) * s1 / w).abs()
        })
        .fold(1.0, f64::max)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Fd4,
    Chebyshev,
}

/// Dirichlet grid on `[-L, L]`; the nodes are the interior unknowns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub half_length: f64,
    pub n_points: usize,
    pub scheme: Scheme,
    pub nodes: Vec<f64>,
}

impl Grid1D {
    pub fn new(half_length: f64, n_points: usize, scheme: Scheme) -> Result<Self> {
        if n_points < 64 {
            return Err(Error::InvalidParameter(format!("grid needs at least 64 points, got {n_points}")));
        }
        if half_length <= 0.0 {
            return Err(Error::InvalidParameter("grid half-length must be positive".into()));
        }
        let nodes = match scheme {
            Scheme::Fd4 => {
                let h = 2.0 * half_length / (n_points as f64 + 1.0);
                (0..n_points).map(|i| -half_length + (i as f64 + 1.0) * h).collect()
            }
            Scheme::Chebyshev => {
                let big_n = n_points + 1;
                (1..big_n)
                    .map(|j| -half_length * (PI * j as f64 / big_n as f64).cos())
                    .collect()
            }
        };
        Ok(Self { half_length, n_points, scheme, nodes })
    }

    pub fn fd4(half_length: f64, n_points: usize) -> Result<Self> {
        Self::new(half_length, n_points, Scheme::Fd4)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / (self.n_points as f64 + 1.0)
    }

    /// Quadrature weights for grid functions (uniform `h` for FD4,
    /// Clenshaw-Curtis for Chebyshev).
    pub fn weights(&self) -> Vec<f64> {
        match self.scheme {
            Scheme::Fd4 => vec![self.spacing(); self.n_points],
            Scheme::Chebyshev => clenshaw_curtis_interior(self.n_points + 1)
                .into_iter()
                .map(|w| w * self.half_length)
                .collect(),
        }
    }
}

fn clenshaw_curtis_interior(big_n: usize) -> Vec<f64> {
    // weights for nodes x_j = -cos(j pi / N), j = 1..N-1 on [-1, 1]
    let nf = big_n as f64;
    (1..big_n)
        .map(|j| {
            let theta = PI * j as f64 / nf;
            let mut v = 1.0;
            let half = big_n / 2;
            for k in 1..=half {
                let b = if 2 * k == big_n { 1.0 } else { 2.0 };
                v -= b * (2.0 * k as f64 * theta).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
            2.0 * v / nf
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisFamily {
    /// `-depth * sech^2(x / width)`
    #[default]
    PoschlTeller,
    /// `-depth * exp(-(x / width)^2)`
    GaussianWell,
    Zero,
}

/// Model potential along the field axis, evaluable at complex arguments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisPotential {
    pub family: AxisFamily,
    pub depth: f64,
    pub width: f64,
    /// Declared power-law decay exponent; both nonzero families decay
    /// exponentially in the sector, so any value above 1 is honest.
    pub delta0: f64,
}

impl AxisPotential {
    pub fn zero() -> Self {
        Self { family: AxisFamily::Zero, depth: 0.0, width: 1.0, delta0: 2.0 }
    }

    pub fn poschl_teller(depth: f64, width: f64) -> Self {
        Self { family: AxisFamily::PoschlTeller, depth, width, delta0: 2.0 }
    }

    pub fn gaussian_well(depth: f64, width: f64) -> Self {
        Self { family: AxisFamily::GaussianWell, depth, width, delta0: 2.0 }
    }

    /// `None` where the continuation is singular.
    pub fn eval(&self, z: Complex64) -> Option<Complex64> {
        match self.family {
            AxisFamily::Zero => Some(Complex64::new(0.0, 0.0)),
            AxisFamily::PoschlTeller => {
                let c = (z / self.width).cosh();
                if c.norm() < 1e-8 {
                    None
                } else {
                    Some(-self.depth / (c * c))
                }
            }
            AxisFamily::GaussianWell => {
                let u = z / self.width;
                Some(-self.depth * (-u * u).exp())
            }
        }
    }

    /// Exact ground-state energy of the Poschl-Teller well, if bound.
    pub fn poschl_teller_ground_state(&self) -> Option<f64> {
        if self.family != AxisFamily::PoschlTeller || self.depth <= 0.0 {
            return None;
        }
        let s = 0.5 * (-1.0 + (1.0 + 4.0 * self.depth * self.width * self.width).sqrt());
        Some(-(s / self.width).powi(2))
    }
}

#[derive(Clone, Debug)]
pub enum AxisMatrix {
    Banded(Banded),
    Dense(Mat<Complex64>),
}

/// Discretized `H_{0,par}(theta)` together with its construction data.
#[derive(Clone, Debug)]
pub struct AxisOperator {
    pub profile: DistortionProfile,
    pub grid: Grid1D,
    pub potential: AxisPotential,
    pub matrix: AxisMatrix,
    /// `phi(x_i)` at the grid nodes.
    pub contour: Vec<Complex64>,
}

impl AxisOperator {
    pub fn n(&self) -> usize {
        self.grid.n_points
    }

    pub fn theta(&self) -> Complex64 {
        self.profile.theta
    }

    pub fn banded(&self) -> Option<&Banded> {
        match &self.matrix {
            AxisMatrix::Banded(b) => Some(b),
            AxisMatrix::Dense(_) => None,
        }
    }

    pub fn dense(&self) -> Mat<Complex64> {
        match &self.matrix {
            AxisMatrix::Banded(b) => b.to_dense(),
            AxisMatrix::Dense(m) => m.clone(),
        }
    }

    /// Evaluates `f(phi(x_i))` on the contour.
    pub fn on_contour(&self, f: impl Fn(Complex64) -> Complex64) -> Vec<Complex64> {
        self.contour.iter().map(|&z| f(z)).collect()
    }

    /// Largest real eigenvalue magnitude the grid can represent reliably.
    pub fn resolved_energy(&self) -> f64 {
        let h = match self.grid.scheme {
            Scheme::Fd4 => self.grid.spacing(),
            Scheme::Chebyshev => PI * self.grid.half_length / (self.grid.n_points as f64 + 1.0),
        };
        let scale = if self.profile.dilation { 1.0 } else { (ONE + self.profile.theta).norm() };
        (PI / (4.0 * h * scale)).powi(2)
    }
}

pub fn build_distortion(r0: f64, k: f64, theta: Complex64, shape: TransitionShape) -> Result<DistortionProfile> {
    DistortionProfile::new(r0, k, theta, shape)
}

const FD4_D2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const FD4_D1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];

pub fn assemble_axis_operator(
    profile: &DistortionProfile,
    grid: &Grid1D,
    v0: &AxisPotential,
) -> Result<AxisOperator> {
    if !profile.dilation && grid.half_length <= profile.k {
        return Err(Error::InvalidParameter(format!(
            "grid half-length {} must exceed the distortion radius K = {}",
            grid.half_length, profile.k
        )));
    }
    let n = grid.n_points;
    let mut a = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut contour = Vec::with_capacity(n);
    for (i, &x) in grid.nodes.iter().enumerate() {
        let (phi, d1, d2) = profile.phi_derivatives(x);
        let pot = v0.eval(phi).ok_or(Error::ContourSingularity { index: i, x, phi })?;
        a.push(d1.powi(-2));
        c.push(d2 * d1.powi(-3));
        v.push(pot);
        contour.push(phi);
    }

    let matrix = match grid.scheme {
        Scheme::Fd4 => {
            let h = grid.spacing();
            let mut m = Banded::zeros(n, 2, 2);
            for i in 0..n {
                for (s, d) in (-2i64..=2).enumerate() {
                    let coef = -a[i] * FD4_D2[s] / (12.0 * h * h) + c[i] * FD4_D1[s] / (12.0 * h);
                    let j = i as i64 + d;
                    if (0..n as i64).contains(&j) {
                        m.add_to(i, j as usize, coef);
                    } else if j == -2 {
                        // odd reflection through the Dirichlet node at -L
                        m.add_to(i, 0, -coef);
                    } else if j == n as i64 + 1 {
                        m.add_to(i, n - 1, -coef);
                    }
                }
                m.add_to(i, i, v[i]);
            }
            AxisMatrix::Banded(m)
        }
        Scheme::Chebyshev => {
            let (d1m, d2m) = chebyshev_matrices(n + 1, grid.half_length);
            let m = Mat::from_fn(n, n, |i, j| {
                let mut e = -a[i] * d2m[(i + 1, j + 1)] + c[i] * d1m[(i + 1, j + 1)];
                if i == j {
                    e += v[i];
                }
                e
            });
            AxisMatrix::Dense(m)
        }
    };

    Ok(AxisOperator {
        profile: profile.clone(),
        grid: grid.clone(),
        potential: v0.clone(),
        matrix,
        contour,
    })
}

/// First and second Chebyshev differentiation matrices on the ascending
/// Gauss-Lobatto nodes `x_j = -L cos(j pi / N)`, `j = 0..N`.
fn chebyshev_matrices(big_n: usize, half_length: f64) -> (Mat<f64>, Mat<f64>) {
    let n1 = big_n + 1;
    let x: Vec<f64> = (0..n1).map(|j| -(PI * j as f64 / big_n as f64).cos()).collect();
    let cw: Vec<f64> = (0..n1)
        .map(|j| {
            let base = if j == 0 || j == big_n { 2.0 } else { 1.0 };
            if j % 2 == 0 { base } else { -base }
        })
        .collect();
    let mut d = Mat::<f64>::zeros(n1, n1);
    for i in 0..n1 {
        for j in 0..n1 {
            if i != j {
                d[(i, j)] = cw[i] / cw[j] / (x[i] - x[j]);
            }
        }
    }
    for i in 0..n1 {
        let s: f64 = (0..n1).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    let d = d * faer::Scale(1.0 / half_length);
    let d2 = &d * &d;
    (d, d2)
}

/// Real bound state `lambda` with eigenfunction `psi` (grid-normalized).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundState {
    pub lambda: Complex64,
    pub psi: Vec<Complex64>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct AxisSpectrum {
    pub eigenvalues: Vec<Complex64>,
    pub ray_origin: Complex64,
    pub ray_direction: Complex64,
    /// Eigenvalues off the ray (and within the resolved energy window).
    pub discrete: Vec<Complex64>,
    pub bound_state: Option<BoundState>,
    /// Number of negative eigenvalues at `theta = 0`.
    pub bound_state_count: usize,
    pub theta: Complex64,
}

impl AxisSpectrum {
    pub fn require_bound_state(&self) -> Result<&BoundState> {
        self.bound_state.as_ref().ok_or(Error::NoBoundState)
    }

    /// Fraction of eigenvalues within `tol * (1 + |z|)` of the ray.
    pub fn fraction_on_ray(&self, tol: f64) -> f64 {
        let on = self
            .eigenvalues
            .iter()
            .filter(|&&z| distance_to_ray(z, self.ray_origin, self.ray_direction) <= tol * (1.0 + z.norm()))
            .count();
        on as f64 / self.eigenvalues.len().max(1) as f64
    }
}

/// Euclidean distance from `z` to the half-line `origin + direction [0, inf)`.
pub fn distance_to_ray(z: Complex64, origin: Complex64, direction: Complex64) -> f64 {
    let d = z - origin;
    let t = (d * direction.conj()).re / direction.norm_sqr();
    if t <= 0.0 {
        d.norm()
    } else {
        (d - direction * t).norm()
    }
}

pub const DEFAULT_RAY_TOLERANCE: f64 = 1e-3;

pub fn classify_spectrum(op: &AxisOperator, ray_tolerance: f64) -> Result<AxisSpectrum> {
    let dense_m = op.dense();
    let mut eigenvalues = dense::eigenvalues(&dense_m)?;
    dense::sort_complex(&mut eigenvalues);
    let dir = op.profile.ray_direction();
    let origin = Complex64::new(0.0, 0.0);
    let resolved = op.resolved_energy();
    let discrete: Vec<Complex64> = eigenvalues
        .iter()
        .copied()
        .filter(|&z| z.norm() <= resolved)
        .filter(|&z| distance_to_ray(z, origin, dir) > ray_tolerance * (1.0 + z.norm()))
        .collect();

    let undistorted = op.theta().norm() == 0.0;
    let mut bound_state = None;
    let mut bound_state_count = 0;
    if undistorted {
        let negatives: Vec<f64> = eigenvalues.iter().filter(|z| z.re < 0.0).map(|z| z.re).collect();
        bound_state_count = negatives.len();
        if bound_state_count > 1 {
            log::warn!("axis operator has {bound_state_count} bound states; each is processed independently");
        }
        if let Some(lowest) = negatives.iter().copied().reduce(f64::min) {
            bound_state = Some(bound_state_near(op, Complex64::new(lowest, 0.0))?);
        }
    }
    Ok(AxisSpectrum {
        eigenvalues,
        ray_origin: origin,
        ray_direction: dir,
        discrete,
        bound_state,
        bound_state_count,
        theta: op.theta(),
    })
}

/// Lowest eigenvalue of the undistorted (real symmetric) operator.
pub fn lowest_eigenvalue(op: &AxisOperator) -> Result<f64> {
    if op.theta().norm() != 0.0 {
        return Err(Error::InvalidParameter("lowest_eigenvalue needs theta = 0".into()));
    }
    let d = op.dense();
    let n = op.n();
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (d[(i, j)].re + d[(j, i)].re));
    let ev = dense::symmetric_eigenvalues(&sym)?;
    Ok(ev[0])
}

/// Shifted inverse iteration with shift updates, for the eigenvalue closest
/// to `shift`. Works for both banded and dense discretizations.
pub fn bound_state_near(op: &AxisOperator, shift: Complex64) -> Result<BoundState> {
    let n = op.n();
    let w = op.grid.weights();
    let mut sigma = shift;
    let mut x: Vec<Complex64> = op
        .grid
        .nodes
        .iter()
        .map(|&t| Complex64::new((-t * t / 8.0).exp() + 1e-3 * (t * 0.37).sin(), 0.0))
        .collect();
    let solve = |sigma: Complex64, b: &[Complex64]| -> Vec<Complex64> {
        match &op.matrix {
            AxisMatrix::Banded(m) => m.shifted(sigma).lu().solve(b),
            AxisMatrix::Dense(m) => {
                let mut s = m.clone();
                for i in 0..n {
                    s[(i, i)] -= sigma;
                }
                let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
                let sol = s.partial_piv_lu().solve(&rhs);
                (0..n).map(|i| sol[(i, 0)]).collect()
            }
        }
    };
    let norm = |v: &[Complex64]| v.iter().zip(&w).map(|(a, wi)| a.norm_sqr() * wi).sum::<f64>().sqrt();
    let mut lambda = sigma;
    let mut iterations = 0;
    for it in 0..60 {
        iterations = it + 1;
        let y = solve(sigma, &x);
        let ny = norm(&y);
        if !ny.is_finite() || ny == 0.0 {
            // shift landed on an eigenvalue; nudge it
            sigma += Complex64::new(1e-10 * (1.0 + sigma.norm()), 0.0);
            continue;
        }
        // rho -> 1 / (lambda - sigma)
        let num: Complex64 = x.iter().zip(&y).zip(&w).map(|((a, b), wi)| a.conj() * b * wi).sum();
        let den: f64 = x.iter().zip(&w).map(|(a, wi)| a.norm_sqr() * wi).sum();
        let rho = num / den;
        let new_lambda = sigma + rho.inv();
        x = y.iter().map(|v| v / ny).collect();
        let step = (new_lambda - lambda).norm();
        lambda = new_lambda;
        if step < 1e-14 * (1.0 + lambda.norm()) && it > 2 {
            break;
        }
        if it >= 2 && it % 2 == 0 {
            sigma = lambda + Complex64::new(1e-9 * (1.0 + lambda.norm()), 0.0);
        }
    }
    // fix the phase so that psi is real and positive at its largest entry
    let (imax, _) = x
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (i, v)| if v.norm() > best.1 { (i, v.norm()) } else { best });
    let phase = x[imax].conj() / x[imax].norm();
    let nx = norm(&x);
    let psi: Vec<Complex64> = x.iter().map(|v| v * phase / nx).collect();
    Ok(BoundState { lambda, psi, iterations })
}

/// `inf sigma(H_{0,par}) > -2b`, using the real eigenvalues and the
/// threshold 0.
pub fn inf_spectrum_check(spectrum: &AxisSpectrum, b: f64) -> bool {
    let inf = spectrum
        .eigenvalues
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * (1.0 + z.norm()))
        .map(|z| z.re)
        .fold(0.0, f64::min);
    inf > -2.0 * b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_at_zero_theta() {
        let p = build_distortion(1.0, 3.0, c(0.0, 0.0), TransitionShape::Quintic).unwrap();
        for x in [-7.0, -2.0, 0.3, 1.5, 2.9, 10.0] {
            assert_eq!(p.phi(x), c(x, 0.0));
        }
    }

    #[test]
    fn inner_region_is_undistorted_and_outer_is_scaled() {
        let p = build_distortion(1.0, 3.0, c(0.0, 0.1), TransitionShape::Quintic).unwrap();
        assert_eq!(p.phi(0.5), c(0.5, 0.0));
        assert!((p.phi(6.0) - c(6.0, 0.6)).norm() < 1e-15);
        assert!((p.phi(-6.0) - c(-6.0, -0.6)).norm() < 1e-15);
    }

    #[test]
    fn g_is_odd_and_c2_at_the_junctions() {
        for shape in [TransitionShape::Quintic, TransitionShape::Smooth] {
            let p = build_distortion(1.0, 3.0, c(0.0, 0.1), shape).unwrap();
            for x in [1.3, 2.0, 2.7] {
                let (g, g1, g2) = p.g(x);
                let (gm, g1m, g2m) = p.g(-x);
                assert!((g + gm).abs() < 1e-15 && (g1 - g1m).abs() < 1e-15 && (g2 + g2m).abs() < 1e-15);
            }
            let e = 1e-7;
            for (x, g_exp, g1_exp) in [(1.0, 0.0, 0.0), (3.0, 3.0, 1.0)] {
                let (gl, g1l, g2l) = p.g(x - e);
                let (gr, g1r, g2r) = p.g(x + e);
                assert!((gl - g_exp).abs() < 1e-5 && (gr - g_exp).abs() < 1e-5);
                assert!((g1l - g1_exp).abs() < 1e-5 && (g1r - g1_exp).abs() < 1e-5);
                assert!(g2l.abs() < 1e-4 && g2r.abs() < 1e-4);
            }
            // g' against a centered difference inside the transition
            let x = 2.2;
            let fd = (p.g(x + 1e-6).0 - p.g(x - 1e-6).0) / 2e-6;
            assert!((fd - p.g(x).1).abs() < 1e-7);
            let fd2 = (p.g(x + 1e-5).1 - p.g(x - 1e-5).1) / 2e-5;
            assert!((fd2 - p.g(x).2).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_radii_and_large_theta() {
        assert!(build_distortion(3.0, 3.0, c(0.0, 0.1), TransitionShape::Quintic).is_err());
        let p = build_distortion(1.0, 3.0, c(0.0, 0.0), TransitionShape::Quintic).unwrap();
        let too_big = 1.01 / p.slope_max;
        assert!(matches!(
            build_distortion(1.0, 3.0, c(0.0, too_big), TransitionShape::Quintic),
            Err(Error::NonInvertibleContour(_))
        ));
    }

    #[test]
    fn free_laplacian_is_real_and_nonnegative() {
        let p = DistortionProfile::new(1.0, 3.0, c(0.0, 0.0), TransitionShape::Quintic).unwrap();
        let g = Grid1D::fd4(8.0, 100).unwrap();
        let op = assemble_axis_operator(&p, &g, &AxisPotential::zero()).unwrap();
        let s = classify_spectrum(&op, DEFAULT_RAY_TOLERANCE).unwrap();
        assert!(s.eigenvalues.iter().all(|z| z.im.abs() < 1e-10 && z.re > 0.0));
        assert!(s.discrete.is_empty());
        assert!(s.bound_state.is_none());
        assert!(inf_spectrum_check(&s, 1.0));
    }

    #[test]
    fn dilated_free_spectrum_lies_on_the_ray() {
        let p = DistortionProfile::dilation(c(0.0, 0.2)).unwrap();
        let g = Grid1D::fd4(10.0, 128).unwrap();
        let op = assemble_axis_operator(&p, &g, &AxisPotential::zero()).unwrap();
        let s = classify_spectrum(&op, DEFAULT_RAY_TOLERANCE).unwrap();
        assert_eq!(s.fraction_on_ray(DEFAULT_RAY_TOLERANCE), 1.0);
        assert!(s.discrete.is_empty());
    }

    #[test]
    fn poschl_teller_singularity_is_reported() {
        let v = AxisPotential::poschl_teller(2.0, 1.0);
        assert!(v.eval(c(0.0, PI / 2.0)).is_none());
        assert!(v.eval(c(0.5, 0.3)).is_some());
    }

    #[test]
    fn poschl_teller_ground_state_formula() {
        let v = AxisPotential::poschl_teller(2.0, 1.0);
        assert!((v.poschl_teller_ground_state().unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn inf_spectrum_gate() {
        let p = DistortionProfile::new(1.0, 3.0, c(0.0, 0.0), TransitionShape::Quintic).unwrap();
        let g = Grid1D::fd4(12.0, 400).unwrap();
        let op = assemble_axis_operator(&p, &g, &AxisPotential::poschl_teller(2.0, 1.0)).unwrap();
        let s = classify_spectrum(&op, DEFAULT_RAY_TOLERANCE).unwrap();
        assert!(inf_spectrum_check(&s, 2.0));
        assert!(!inf_spectrum_check(&s, 0.4));
    }

    #[test]
    fn bound_state_is_even_and_normalized() {
        let p = DistortionProfile::new(1.0, 3.0, c(0.0, 0.0), TransitionShape::Quintic).unwrap();
        let g = Grid1D::fd4(15.0, 600).unwrap();
        let op = assemble_axis_operator(&p, &g, &AxisPotential::poschl_teller(2.0, 1.0)).unwrap();
        let s = classify_spectrum(&op, DEFAULT_RAY_TOLERANCE).unwrap();
        let bs = s.require_bound_state().unwrap();
        assert!((bs.lambda.re + 1.0).abs() < 1e-6);
        assert_eq!(s.bound_state_count, 1);
        let h = g.spacing();
        let norm: f64 = bs.psi.iter().map(|v| v.norm_sqr() * h).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        let first_moment: f64 = bs.psi.iter().zip(&g.nodes).map(|(v, x)| v.norm_sqr() * x * h).sum();
        assert!(first_moment.abs() < 1e-10);
        // psi proportional to sech, real at theta = 0
        let scale = bs.psi[g.n_points / 2].re / (1.0 / g.nodes[g.n_points / 2].cosh());
        for (v, &x) in bs.psi.iter().zip(&g.nodes).step_by(37) {
            assert!(v.im.abs() < 1e-12);
            assert!((v.re - scale / x.cosh()).abs() < 1e-5);
        }
    }

    #[test]
    fn missing_bound_state_is_an_error() {
        let p = DistortionProfile::new(1.0, 3.0, c(0.0, 0.0), TransitionShape::Quintic).unwrap();
        let g = Grid1D::fd4(8.0, 100).unwrap();
        let op = assemble_axis_operator(&p, &g, &AxisPotential::zero()).unwrap();
        let s = classify_spectrum(&op, DEFAULT_RAY_TOLERANCE).unwrap();
        assert!(matches!(s.require_bound_state(), Err(Error::NoBoundState)));
    }

    #[test]
    fn grid_must_extend_past_k() {
        let p = DistortionProfile::new(1.0, 3.0, c(0.0, 0.1), TransitionShape::Quintic).unwrap();
        let g = Grid1D::fd4(2.5, 100).unwrap();
        assert!(assemble_axis_operator(&p, &g, &AxisPotential::zero()).is_err());
        assert!(Grid1D::fd4(10.0, 32).is_err());
    }
}
