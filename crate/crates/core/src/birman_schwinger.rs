//! Regularized Birman-Schwinger determinant `d(z) = det_2(I + V_theta (H_{0,theta} - z)^{-1})`
//! for separable `V = kappa W(|X_perp|) w(x_3)`.
//!
//! Radial `W` keeps every angular-momentum sector `m` invariant, so
//! `d = prod_m d_m`. Within a sector the truncated operator acts on
//! `(Landau level j, axis node i)` and
//!
//! ```text
//! ln d_m = ln det(A + kappa G (x) w) - sum_j ln det A_j - tr T_m,
//! A_j    = H_par(theta) + 2 b j - z,
//! ```
//!
//! where `G_{jj'}` is the level Gram matrix of `W` in the sector. The fast
//! path evaluates all three pieces, and their `z`-derivatives, with
//! recursive Green's function sweeps in `O(n)`. Explicit dense operators
//! (sandwiched and unsandwiched) are available for small grids.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::axis1d::{distance_to_ray, AxisOperator};
use crate::error::{Error, Result};
use crate::landau::{LandauBasis, TransversePotential};
use crate::linalg::{dense, Banded, BlockTridiagonal};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxialFamily {
    /// `exp(-(x / width)^2)`
    #[default]
    Gaussian,
    /// `sech^2(x / width)`
    Sech2,
    /// `(1 + (x / width)^2)^{-delta_par / 2}`
    Power,
}

/// Axial factor `w(x_3)` of the perturbation, analytic in the sector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxialFactor {
    pub family: AxialFamily,
    pub width: f64,
    /// Declared decay exponent `delta_par`; the exponent itself for `Power`.
    pub delta_par: f64,
}

impl AxialFactor {
    pub fn gaussian(width: f64) -> Self {
        Self { family: AxialFamily::Gaussian, width, delta_par: 2.0 }
    }

    pub fn eval(&self, z: Complex64) -> Option<Complex64> {
        let u = z / self.width;
        match self.family {
            AxialFamily::Gaussian => Some((-u * u).exp()),
            AxialFamily::Sech2 => {
                let c = u.cosh();
                (c.norm() > 1e-8).then(|| (c * c).inv())
            }
            AxialFamily::Power => {
                let base = 1.0 + u * u;
                (base.norm() > 1e-12).then(|| base.powf(-0.5 * self.delta_par))
            }
        }
    }
}

/// `V(x) = kappa W(|X_perp|) w(x_3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparablePotential {
    pub kappa: f64,
    pub transverse: TransversePotential,
    pub axial: AxialFactor,
}

impl SeparablePotential {
    pub fn sup_norm(&self) -> f64 {
        self.kappa.abs() * self.transverse.sup_norm()
    }

    pub fn is_zero(&self) -> bool {
        self.kappa == 0.0 || self.transverse.amplitude == 0.0
    }
}

/// Explicit truncated Birman-Schwinger operator, one dense block per
/// angular momentum.
#[derive(Clone, Debug)]
pub struct BSOperator {
    pub z: Complex64,
    pub theta: Complex64,
    pub form: BsForm,
    pub blocks: Vec<(i64, Mat<Complex64>)>,
    pub tail_norm_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsForm {
    /// `V_theta (H_{0,theta} - z)^{-1}`
    Unsandwiched,
    /// `C (H_{0,theta} - z)^{-1} B` with `V = B C` split symmetrically.
    Sandwiched,
}

impl BSOperator {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(_, b)| b.nrows()).sum()
    }

    /// Block-diagonal matrix of all sectors.
    pub fn to_dense(&self) -> Mat<Complex64> {
        let n = self.dim();
        let mut out = Mat::<Complex64>::zeros(n, n);
        let mut off = 0;
        for (_, b) in &self.blocks {
            for i in 0..b.nrows() {
                for j in 0..b.ncols() {
                    out[(off + i, off + j)] = b[(i, j)];
                }
            }
            off += b.nrows();
        }
        out
    }

    /// Spectral-norm upper bound via the Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|(_, b)| (0..b.nrows()).flat_map(move |i| (0..b.ncols()).map(move |j| b[(i, j)].norm_sqr())))
            .sum::<f64>()
            .sqrt()
    }
}

/// Value of a regularized determinant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Det2Value {
    pub value: Complex64,
    pub log_abs: f64,
    /// Argument; continuous along a path after [`unwrap_arguments`].
    pub arg_branch: f64,
    /// Number of eigenvalues exactly equal to `-1`.
    pub zero_multiplicity: usize,
}

impl Det2Value {
    pub fn from_log(log: Complex64) -> Self {
        Self { value: log.exp(), log_abs: log.re, arg_branch: log.im, zero_multiplicity: 0 }
    }

    pub fn log(&self) -> Complex64 {
        Complex64::new(self.log_abs, self.arg_branch)
    }

    fn combine(self, other: Self) -> Self {
        let mut out = Self::from_log(self.log() + other.log());
        out.zero_multiplicity = self.zero_multiplicity + other.zero_multiplicity;
        if out.zero_multiplicity > 0 {
            out.value = ZERO;
        }
        out
    }
}

/// Shifts `arg_branch` by multiples of `2 pi` so it varies continuously.
pub fn unwrap_arguments(values: &mut [Det2Value]) {
    for k in 1..values.len() {
        let prev = values[k - 1].arg_branch;
        let mut a = values[k].arg_branch;
        while a - prev > PI {
            a -= 2.0 * PI;
        }
        while a - prev < -PI {
            a += 2.0 * PI;
        }
        values[k].arg_branch = a;
    }
}

/// `det_2(I + A) = prod (1 + l_i) exp(-l_i)` over the eigenvalues of `A`.
pub fn det2_matrix(a: &Mat<Complex64>) -> Result<Det2Value> {
    let ev = dense::eigenvalues(a)?;
    let mut log = ZERO;
    let mut zeros = 0;
    for l in ev {
        let f = 1.0 + l;
        if f == ZERO {
            zeros += 1;
            log -= l;
        } else {
            log += f.ln() - l;
        }
    }
    let mut out = Det2Value::from_log(log);
    if zeros > 0 {
        out.value = ZERO;
        out.log_abs = f64::NEG_INFINITY;
        out.zero_multiplicity = zeros;
    }
    Ok(out)
}

/// `det(I + A) exp(-tr A)` through an LU factorization.
pub fn det_times_exp_trace(a: &Mat<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut ia = a.clone();
    let mut tr = ZERO;
    for i in 0..n {
        tr += a[(i, i)];
        ia[(i, i)] += 1.0;
    }
    ia.determinant() * (-tr).exp()
}

pub fn det2(op: &BSOperator) -> Result<Det2Value> {
    let mut acc = Det2Value::from_log(ZERO);
    for (_, b) in &op.blocks {
        acc = acc.combine(det2_matrix(b)?);
    }
    Ok(acc)
}

/// `||V||_inf / dist(z, 2b(J+1) + min(0, lambda) + [0, inf))`, the bound on
/// the Birman-Schwinger operator restricted to the discarded levels.
pub fn tail_norm_bound(z: Complex64, v_sup: f64, b: f64, lambda_min: f64, levels: usize) -> f64 {
    let foot = 2.0 * b * (levels as f64 + 1.0) + lambda_min.min(0.0);
    let dist = if z.re >= foot { z.im.abs() } else { (z - foot).norm() };
    v_sup / dist
}

/// Smallest level cutoff `J` with the tail bound below 1/8 at every `z`.
pub fn choose_levels(zs: &[Complex64], v_sup: f64, b: f64, lambda_min: f64) -> usize {
    let mut j = 0;
    while zs.iter().any(|&z| tail_norm_bound(z, v_sup, b, lambda_min, j) >= 0.125) && j < 10_000 {
        j += 1;
    }
    j
}

/// Per-level quantities at one `z`, shared by every sector.
#[derive(Clone, Debug)]
pub struct LevelData {
    pub z: Complex64,
    /// `ln det A_j`
    pub log_det: Vec<Complex64>,
    /// `tr A_j^{-1}`
    pub trace: Vec<Complex64>,
    /// `sum_i w_i (A_j^{-1})_ii`
    pub weighted: Vec<Complex64>,
    /// `sum_i w_i (A_j^{-2})_ii`
    pub weighted_derivative: Vec<Complex64>,
}

/// `ln d_m` and friends at one `z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorValue {
    pub m: i64,
    pub log_d: Complex64,
    /// `d/dz ln d_m`; zero when not requested.
    pub dlog_d: Complex64,
    pub trace_t: Complex64,
    pub trace_t_prime: Complex64,
    /// Cheap lower estimate of the condition number of `I + T_m`.
    pub condition: f64,
}

/// Sum over sectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetValue {
    pub z: Complex64,
    pub log_d: Complex64,
    pub dlog_d: Complex64,
    pub trace_t: Complex64,
    pub trace_t_prime: Complex64,
    pub condition: f64,
}

#[derive(Clone, Debug)]
struct Sector {
    m: i64,
    levels: Vec<usize>,
    gram: Vec<Vec<f64>>,
    x0: BlockTridiagonal,
    x0_norm: f64,
}

/// Everything needed to evaluate `d_theta(z)` at a fixed distortion and
/// truncation. Immutable after construction.
#[derive(Clone, Debug)]
pub struct BsModel {
    pub b: f64,
    pub potential: SeparablePotential,
    pub basis: LandauBasis,
    pub axis: AxisOperator,
    pub lambda_min: f64,
    /// `w(phi(x_i))`
    pub w_theta: Vec<Complex64>,
    /// Minimal relative distance from a ray accepted by `check_point`.
    pub ray_margin: f64,
    axis_rgf: BlockTridiagonal,
    sectors: Vec<Sector>,
}

impl BsModel {
    /// `basis.q_max` is the level cutoff `J`, `basis.m_max` the angular one.
    pub fn new(
        potential: SeparablePotential,
        basis: LandauBasis,
        axis: AxisOperator,
        lambda_min: f64,
    ) -> Result<Self> {
        let h = axis
            .banded()
            .ok_or_else(|| Error::InvalidParameter("the determinant engine needs a banded (FD4) axis grid".into()))?
            .clone();
        let n = axis.n();
        let w_theta = axis
            .contour
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                potential.axial.eval(z).ok_or(Error::ContourSingularity { index: i, x: axis.grid.nodes[i], phi: z })
            })
            .collect::<Result<Vec<_>>>()?;
        let axis_rgf = BlockTridiagonal::from_banded(&h, h.lower().max(h.upper()).max(1));
        let b = basis.b;
        let j_max = basis.q_max as i64;
        let mut sectors = Vec::new();
        for m in -j_max..=basis.m_max {
            let (levels, gram) = basis.level_gram(m, &potential.transverse)?;
            let nl = levels.len();
            let bw = h.lower().max(h.upper());
            let mut x0 = Banded::zeros(n * nl, bw * nl, bw * nl);
            for i in 0..n {
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(n - 1);
                for i2 in lo..=hi {
                    let v = h.get(i, i2);
                    if v != ZERO {
                        for a in 0..nl {
                            x0.add_to(i * nl + a, i2 * nl + a, v);
                        }
                    }
                }
                for a in 0..nl {
                    x0.add_to(i * nl + a, i * nl + a, Complex64::new(2.0 * b * levels[a] as f64, 0.0));
                    for c in 0..nl {
                        let g = gram[a][c];
                        if g != 0.0 {
                            x0.add_to(i * nl + a, i * nl + c, potential.kappa * g * w_theta[i]);
                        }
                    }
                }
            }
            let x0_norm = (0..n * nl)
                .map(|r| {
                    let lo = r.saturating_sub(x0.lower());
                    let hi = (r + x0.upper()).min(n * nl - 1);
                    (lo..=hi).map(|c| x0.get(r, c).norm()).sum::<f64>()
                })
                .fold(0.0, f64::max);
            let block = (bw * nl).max(nl);
            sectors.push(Sector { m, levels, gram, x0: BlockTridiagonal::from_banded(&x0, block), x0_norm });
        }
        Ok(Self { b, potential, basis, axis, lambda_min, w_theta, ray_margin: 1e-8, axis_rgf, sectors })
    }

    pub fn theta(&self) -> Complex64 {
        self.axis.theta()
    }

    pub fn levels(&self) -> usize {
        self.basis.q_max
    }

    pub fn m_values(&self) -> Vec<i64> {
        self.sectors.iter().map(|s| s.m).collect()
    }

    pub fn tail_norm_bound(&self, z: Complex64) -> f64 {
        tail_norm_bound(z, self.potential.sup_norm(), self.b, self.lambda_min, self.levels())
    }

    /// Rejects `z` on a rotated ray `2bj + (1 + theta)^{-2} [0, inf)` and
    /// tail bounds of 1/8 or more.
    pub fn check_point(&self, z: Complex64) -> Result<()> {
        let dir = self.axis.profile.ray_direction();
        for j in 0..=self.levels() {
            let origin = Complex64::new(2.0 * self.b * j as f64, 0.0);
            if distance_to_ray(z, origin, dir) <= self.ray_margin * (1.0 + z.norm()) {
                return Err(Error::RayCollision { z, level: j });
            }
        }
        let bound = self.tail_norm_bound(z);
        if bound >= 0.125 {
            return Err(Error::IncreaseLevels { bound, levels: self.levels() });
        }
        Ok(())
    }

    pub fn level_data(&self, z: Complex64, derivative: bool) -> Result<LevelData> {
        let nj = self.levels() + 1;
        let mut out = LevelData {
            z,
            log_det: Vec::with_capacity(nj),
            trace: Vec::with_capacity(nj),
            weighted: Vec::with_capacity(nj),
            weighted_derivative: Vec::with_capacity(nj),
        };
        for j in 0..nj {
            let shift = z - 2.0 * self.b * j as f64;
            let g = self
                .axis_rgf
                .sweep(shift, derivative)
                .ok_or(Error::RayCollision { z, level: j })?;
            out.log_det.push(g.log_det);
            out.trace.push(g.trace());
            out.weighted.push(g.weighted_trace(&self.w_theta));
            out.weighted_derivative.push(g.weighted_trace_derivative(&self.w_theta).unwrap_or(ZERO));
        }
        Ok(out)
    }

    fn sector_index(&self, m: i64) -> Result<usize> {
        self.sectors
            .iter()
            .position(|s| s.m == m)
            .ok_or_else(|| Error::InvalidParameter(format!("angular momentum {m} is outside the truncation")))
    }

    pub fn sector_value(&self, m: i64, levels: &LevelData, derivative: bool) -> Result<SectorValue> {
        let s = &self.sectors[self.sector_index(m)?];
        let z = levels.z;
        let kappa = self.potential.kappa;
        let mut trace_t = ZERO;
        let mut trace_t_prime = ZERO;
        let mut level_log_det = ZERO;
        let mut level_trace = ZERO;
        for (a, &j) in s.levels.iter().enumerate() {
            trace_t += kappa * s.gram[a][a] * levels.weighted[j];
            trace_t_prime += kappa * s.gram[a][a] * levels.weighted_derivative[j];
            level_log_det += levels.log_det[j];
            level_trace += levels.trace[j];
        }
        if self.potential.is_zero() {
            return Ok(SectorValue { m, log_d: ZERO, dlog_d: ZERO, trace_t, trace_t_prime, condition: 1.0 });
        }
        let (log_det_x, dlog_det_x, max_g) =
            s.x0.log_det(z, derivative).ok_or(Error::NearSingular { z, condition: f64::INFINITY })?;
        let log_d = log_det_x - level_log_det - trace_t;
        let dlog_d = if derivative { dlog_det_x + level_trace - trace_t_prime } else { ZERO };
        Ok(SectorValue {
            m,
            log_d,
            dlog_d,
            trace_t,
            trace_t_prime,
            condition: max_g * (s.x0_norm + z.norm()),
        })
    }

    /// `ln d_m(z)` and its derivative for one sector.
    pub fn sector_at(&self, m: i64, z: Complex64, derivative: bool) -> Result<SectorValue> {
        let levels = self.level_data(z, derivative)?;
        self.sector_value(m, &levels, derivative)
    }

    /// Sum over all sectors of the truncation.
    pub fn evaluate(&self, z: Complex64, derivative: bool) -> Result<DetValue> {
        let levels = self.level_data(z, derivative)?;
        let mut out =
            DetValue { z, log_d: ZERO, dlog_d: ZERO, trace_t: ZERO, trace_t_prime: ZERO, condition: 0.0 };
        for s in &self.sectors {
            let v = self.sector_value(s.m, &levels, derivative)?;
            out.log_d += v.log_d;
            out.dlog_d += v.dlog_d;
            out.trace_t += v.trace_t;
            out.trace_t_prime += v.trace_t_prime;
            out.condition = out.condition.max(v.condition);
        }
        Ok(out)
    }

    pub fn det2(&self, z: Complex64) -> Result<Det2Value> {
        self.check_point(z)?;
        Ok(Det2Value::from_log(self.evaluate(z, false)?.log_d))
    }

    /// `d/dz ln det_2(I + T(z))`, refusing nearly singular points.
    pub fn log_derivative(&self, z: Complex64) -> Result<Complex64> {
        self.check_point(z)?;
        let v = self.evaluate(z, true)?;
        if v.condition > 1e12 {
            return Err(Error::NearSingular { z, condition: v.condition });
        }
        Ok(v.dlog_d)
    }

    /// Dense `blockdiag_j(H_par + 2bj) + kappa G (x) diag(w_theta)` for one
    /// sector, the truncated distorted Hamiltonian.
    pub fn hamiltonian_sector(&self, m: i64) -> Result<Mat<Complex64>> {
        let s = &self.sectors[self.sector_index(m)?];
        let h = self.axis.dense();
        let n = self.axis.n();
        let nl = s.levels.len();
        let kappa = self.potential.kappa;
        Ok(Mat::from_fn(n * nl, n * nl, |r, c| {
            let (a, i) = (r / n, r % n);
            let (a2, i2) = (c / n, c % n);
            let mut v = ZERO;
            if a == a2 {
                v += h[(i, i2)];
                if i == i2 {
                    v += 2.0 * self.b * s.levels[a] as f64;
                }
            }
            if i == i2 {
                v += kappa * s.gram[a][a2] * self.w_theta[i];
            }
            v
        }))
    }

    /// Dense `(H_par + 2bj - z)^{-1}` for each level of a sector.
    fn dense_resolvents(&self, levels: &[usize], z: Complex64) -> Vec<Mat<Complex64>> {
        let h = self.axis.dense();
        let n = self.axis.n();
        levels
            .iter()
            .map(|&j| {
                let mut a = h.clone();
                for i in 0..n {
                    a[(i, i)] += 2.0 * self.b * j as f64 - z;
                }
                dense::inverse(&a)
            })
            .collect()
    }

    /// Explicit truncated operator for the sectors `ms` (all when empty).
    pub fn assemble_t(&self, z: Complex64, ms: &[i64], form: BsForm) -> Result<BSOperator> {
        self.check_point(z)?;
        let n = self.axis.n();
        let kappa = self.potential.kappa;
        let delta3 = 0.5 * self.potential.axial.delta_par;
        let weight: Vec<Complex64> = self
            .axis
            .contour
            .iter()
            .map(|&p| (1.0 + p * p).powf(-0.5 * delta3))
            .collect();
        let chosen: Vec<&Sector> = if ms.is_empty() {
            self.sectors.iter().collect()
        } else {
            ms.iter().map(|&m| self.sector_index(m).map(|i| &self.sectors[i])).collect::<Result<_>>()?
        };
        let mut blocks = Vec::new();
        for s in chosen {
            let nl = s.levels.len();
            let res = self.dense_resolvents(&s.levels, z);
            let block = match form {
                BsForm::Unsandwiched => Mat::from_fn(nl * n, nl * n, |r, c| {
                    let (a, i) = (r / n, r % n);
                    let (a2, i2) = (c / n, c % n);
                    kappa * s.gram[a][a2] * self.w_theta[i] * res[a2][(i, i2)]
                }),
                BsForm::Sandwiched => {
                    let g = Mat::<f64>::from_fn(nl, nl, |a, c| s.gram[a][c]);
                    let root = dense::symmetric_sqrt(&g)?;
                    Mat::from_fn(nl * n, nl * n, |r, c| {
                        let (a, i) = (r / n, r % n);
                        let (a2, i2) = (c / n, c % n);
                        let mut acc = ZERO;
                        for l in 0..nl {
                            acc += root[(a, l)] * res[l][(i, i2)] * root[(l, a2)];
                        }
                        kappa * acc * self.w_theta[i] / weight[i] * weight[i2]
                    })
                }
            };
            blocks.push((s.m, block));
        }
        Ok(BSOperator { z, theta: self.theta(), form, blocks, tail_norm_bound: self.tail_norm_bound(z) })
    }

    /// `tr((I + T)^{-1} T') - tr T'` from dense matrices; a reference for
    /// the sweep-based derivative.
    pub fn dense_log_derivative(&self, z: Complex64, m: i64) -> Result<Complex64> {
        let s = &self.sectors[self.sector_index(m)?];
        let n = self.axis.n();
        let nl = s.levels.len();
        let kappa = self.potential.kappa;
        let res = self.dense_resolvents(&s.levels, z);
        let res2: Vec<Mat<Complex64>> = res.iter().map(|r| r * r).collect();
        let t = Mat::from_fn(nl * n, nl * n, |r, c| {
            let (a, i) = (r / n, r % n);
            let (a2, i2) = (c / n, c % n);
            kappa * s.gram[a][a2] * self.w_theta[i] * res[a2][(i, i2)]
        });
        let tp = Mat::from_fn(nl * n, nl * n, |r, c| {
            let (a, i) = (r / n, r % n);
            let (a2, i2) = (c / n, c % n);
            kappa * s.gram[a][a2] * self.w_theta[i] * res2[a2][(i, i2)]
        });
        let mut ipt = t.clone();
        for i in 0..nl * n {
            ipt[(i, i)] += 1.0;
        }
        let inv = dense::inverse(&ipt);
        let prod = &inv * &tp;
        let mut out = ZERO;
        for i in 0..nl * n {
            out += prod[(i, i)] - tp[(i, i)];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axis1d::{assemble_axis_operator, AxisPotential, DistortionProfile, Grid1D, TransitionShape};
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn model(theta: f64, kappa: f64, n: usize, m_max: i64) -> BsModel {
        let p = DistortionProfile::new(2.0, 5.0, c(0.0, theta), TransitionShape::Smooth).unwrap();
        let g = Grid1D::fd4(10.0, n).unwrap();
        let axis = assemble_axis_operator(&p, &g, &AxisPotential::poschl_teller(2.0, 1.0)).unwrap();
        let pot = SeparablePotential {
            kappa,
            transverse: TransversePotential::gaussian(1.0),
            axial: AxialFactor::gaussian(1.0),
        };
        let basis = LandauBasis::new(2.0, 2, m_max).unwrap();
        BsModel::new(pot, basis, axis, -1.0).unwrap()
    }

    fn random_matrix(n: usize, seed: u64, scale: f64) -> Mat<Complex64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(n, n, |_, _| c(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
    }

    #[test]
    fn det2_of_zero_and_rank_one() {
        let z = Mat::<Complex64>::zeros(6, 6);
        assert!((det2_matrix(&z).unwrap().value - 1.0).norm() < 1e-15);
        let u: Vec<Complex64> = (0..6).map(|i| c(0.3 * i as f64, -0.1)).collect();
        let v: Vec<Complex64> = (0..6).map(|i| c(0.2, 0.05 * i as f64)).collect();
        let a = Mat::from_fn(6, 6, |i, j| u[i] * v[j]);
        let lam: Complex64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
        let expect = (1.0 + lam) * (-lam).exp();
        assert!((det2_matrix(&a).unwrap().value - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn det2_matches_det_exp_trace() {
        for seed in 0..10 {
            let a = random_matrix(20, seed, 0.3);
            let d1 = det2_matrix(&a).unwrap().value;
            let d2 = det_times_exp_trace(&a);
            assert!((d1 - d2).norm() < 1e-10 * d2.norm());
        }
    }

    #[test]
    fn unwrap_makes_arguments_continuous() {
        let mut vals: Vec<Det2Value> =
            (0..40).map(|k| Det2Value::from_log(c(0.0, 0.3 * k as f64))).map(|mut d| {
                d.arg_branch = d.value.arg();
                d
            }).collect();
        unwrap_arguments(&mut vals);
        for k in 0..40 {
            assert!((vals[k].arg_branch - 0.3 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_potential_gives_unit_determinant() {
        let m = model(0.1, 0.0, 80, 2);
        let z = c(3.2, -0.05);
        let v = m.evaluate(z, true).unwrap();
        assert_eq!(v.log_d, ZERO);
        assert_eq!(v.dlog_d, ZERO);
        let op = m.assemble_t(z, &[], BsForm::Unsandwiched).unwrap();
        assert_eq!(op.frobenius_norm(), 0.0);
        assert!((det2(&op).unwrap().value - 1.0).norm() < 1e-15);
    }

    #[test]
    fn fast_path_matches_dense_det2() {
        let m = model(0.15, 0.3, 80, 2);
        for z in [c(3.2, -0.05), c(1.1, 0.4), c(5.0, -0.2)] {
            let op = m.assemble_t(z, &[], BsForm::Unsandwiched).unwrap();
            let dense_log = det2(&op).unwrap().log();
            let fast = m.evaluate(z, false).unwrap().log_d;
            assert!((dense_log.exp() - fast.exp()).norm() < 1e-10 * fast.exp().norm(), "{z}");
        }
    }

    #[test]
    fn sandwiched_and_unsandwiched_agree() {
        let m = model(0.15, 0.3, 80, 1);
        let z = c(3.1, -0.1);
        let a = det2(&m.assemble_t(z, &[], BsForm::Unsandwiched).unwrap()).unwrap().value;
        let b = det2(&m.assemble_t(z, &[], BsForm::Sandwiched).unwrap()).unwrap().value;
        assert!((a - b).norm() < 1e-8 * a.norm());
    }

    #[test]
    fn derivative_matches_dense_and_finite_difference() {
        let m = model(0.15, 0.3, 80, 1);
        let z = c(3.15, -0.08);
        for mm in [-2, 0, 1] {
            let fast = m.sector_at(mm, z, true).unwrap().dlog_d;
            let dense_d = m.dense_log_derivative(z, mm).unwrap();
            assert!((fast - dense_d).norm() < 1e-8 * (1.0 + dense_d.norm()), "m={mm}: {fast} vs {dense_d}");
            let h = 1e-6;
            let fd = (m.sector_at(mm, z + h, false).unwrap().log_d - m.sector_at(mm, z - h, false).unwrap().log_d)
                / (2.0 * h);
            assert!((fd - fast).norm() < 1e-4 * (1.0 + fast.norm()));
        }
    }

    #[test]
    fn large_imaginary_part_makes_t_small() {
        let m = model(0.0, 0.3, 80, 1);
        let op = m.assemble_t(c(4.0, 1e3), &[], BsForm::Unsandwiched).unwrap();
        assert!(op.frobenius_norm() <= 1e-2);
    }

    #[test]
    fn schwarz_reflection_at_zero_theta() {
        let m = model(0.0, 0.3, 80, 1);
        for z in [c(3.3, 0.2), c(-0.5, 0.7), c(6.0, 0.05)] {
            let a = m.evaluate(z, false).unwrap().log_d.exp();
            let b = m.evaluate(z.conj(), false).unwrap().log_d.exp();
            assert!((a - b.conj()).norm() < 1e-10 * a.norm());
        }
    }

    #[test]
    fn cauchy_riemann_residual_is_small() {
        let m = model(0.15, 0.3, 80, 1);
        let z = c(3.4, -0.1);
        let h = 1e-5;
        let f = |w: Complex64| m.evaluate(w, false).unwrap().log_d.exp();
        let dx = (f(z + h) - f(z - h)) / (2.0 * h);
        let dy = (f(z + c(0.0, h)) - f(z - c(0.0, h))) / (2.0 * h);
        // d/dy = i d/dx for holomorphic f
        assert!((dy - c(0.0, 1.0) * dx).norm() < 1e-6 * (1.0 + dx.norm()));
    }

    #[test]
    fn ray_collision_and_level_cutoff() {
        let m = model(0.1, 0.3, 80, 1);
        let dir = m.axis.profile.ray_direction();
        let on_ray = 4.0 + dir * 2.0;
        assert!(matches!(m.check_point(on_ray), Err(Error::RayCollision { level: 1, .. })));
        assert!(matches!(m.check_point(c(11.5, -0.3)), Err(Error::IncreaseLevels { .. })));
        assert_eq!(choose_levels(&[c(3.0, -0.1)], 0.1, 2.0, -1.0), 1);
    }
}
