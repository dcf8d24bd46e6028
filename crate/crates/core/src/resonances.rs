//! Resonances as zeros of the regularized determinant, located per
//! angular-momentum sector by the argument principle and Newton's method,
//! and cross-checked against eigenvalues of the truncated distorted
//! Hamiltonian.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::axis1d::distance_to_ray;
use crate::birman_schwinger::BsModel;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::landau::{counting_function, ToeplitzSpectrum};
use crate::linalg::dense;
use crate::quadrature::GaussLegendre;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Half-line `origin + direction [0, inf)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub level: usize,
    pub origin: Complex64,
    pub direction: Complex64,
}

impl Ray {
    pub fn distance(&self, z: Complex64) -> f64 {
        distance_to_ray(z, self.origin, self.direction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionShape {
    Disc { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    /// Offsets from the centre.
    Box { re_min: f64, re_max: f64, im_min: f64, im_max: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub center: Complex64,
    pub shape: RegionShape,
    pub q: usize,
    pub excluded_rays: Vec<Ray>,
}

impl SearchRegion {
    /// Builds the region and checks it keeps `ray_tolerance (1 + |z|)` away
    /// from every ray `2bj + (1 + theta)^{-2} [0, inf)`, `j <= levels`.
    pub fn new(
        center: Complex64,
        shape: RegionShape,
        q: usize,
        b: f64,
        theta: Complex64,
        levels: usize,
        ray_tolerance: f64,
    ) -> Result<Self> {
        let direction = (1.0 + theta).powi(-2);
        let excluded_rays = (0..=levels)
            .map(|j| Ray { level: j, origin: Complex64::new(2.0 * b * j as f64, 0.0), direction })
            .collect();
        let region = Self { center, shape, q, excluded_rays };
        match shape {
            RegionShape::Disc { radius } if !(radius > 0.0) => {
                return Err(Error::InvalidParameter("disc radius must be positive".into()))
            }
            RegionShape::Annulus { inner, outer } if !(inner > 0.0 && inner < outer) => {
                return Err(Error::InvalidParameter("annulus needs 0 < inner < outer".into()))
            }
            RegionShape::Box { re_min, re_max, im_min, im_max } if !(re_min < re_max && im_min < im_max) => {
                return Err(Error::InvalidParameter("box bounds are inverted".into()))
            }
            _ => {}
        }
        for ray in &region.excluded_rays {
            let gap = region.distance_to(ray);
            let margin = ray_tolerance * (1.0 + center.norm() + region.extent());
            if gap <= margin {
                return Err(Error::ContourReposition(format!(
                    "search region comes within {gap:.3e} of the ray of level {}",
                    ray.level
                )));
            }
        }
        Ok(region)
    }

    /// Largest distance from the centre to a point of the region.
    pub fn extent(&self) -> f64 {
        match self.shape {
            RegionShape::Disc { radius } => radius,
            RegionShape::Annulus { outer, .. } => outer,
            RegionShape::Box { re_min, re_max, im_min, im_max } => {
                re_min.abs().max(re_max.abs()).hypot(im_min.abs().max(im_max.abs()))
            }
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        let d = z - self.center;
        match self.shape {
            RegionShape::Disc { radius } => d.norm() < radius,
            RegionShape::Annulus { inner, outer } => d.norm() > inner && d.norm() < outer,
            RegionShape::Box { re_min, re_max, im_min, im_max } => {
                d.re > re_min && d.re < re_max && d.im > im_min && d.im < im_max
            }
        }
    }

    /// Distance between the region and a ray (0 when they intersect).
    fn distance_to(&self, ray: &Ray) -> f64 {
        match self.shape {
            RegionShape::Disc { radius } | RegionShape::Annulus { outer: radius, .. } => {
                (ray.distance(self.center) - radius).max(0.0)
            }
            RegionShape::Box { .. } => {
                // sample the boundary and the ray near the box
                let pts = self.boundary_samples(400);
                let mut best = pts.iter().map(|&z| ray.distance(z)).fold(f64::INFINITY, f64::min);
                let ext = self.extent() + self.center.norm();
                for k in 0..=4000 {
                    let z = ray.origin + ray.direction * (2.0 * ext * k as f64 / 4000.0);
                    if self.contains(z) {
                        best = 0.0;
                    }
                }
                best
            }
        }
    }

    fn boundary_samples(&self, n: usize) -> Vec<Complex64> {
        self.initial_cells().iter().flat_map(|c| c.edges()).flat_map(|e| {
            (0..n).map(move |k| e.point(k as f64 / n as f64).0)
        }).collect()
    }

    /// Cells covering the region, none of which contains the centre for
    /// disc or annulus shapes (the centre may be singular).
    pub fn initial_cells(&self) -> Vec<Cell> {
        // sector boundaries are rotated off the real axis, where resonances
        // of weak coupling accumulate
        let phi0 = -0.5 * PI + 0.1;
        let sectors = |r0: f64, r1: f64| -> Vec<Cell> {
            (0..4)
                .map(|k| Cell::AnnularSector {
                    center: self.center,
                    r0,
                    r1,
                    phi0: phi0 + k as f64 * 0.5 * PI,
                    phi1: phi0 + (k + 1) as f64 * 0.5 * PI,
                })
                .collect()
        };
        match self.shape {
            RegionShape::Disc { radius } => sectors(0.0, radius),
            RegionShape::Annulus { inner, outer } => sectors(inner, outer),
            RegionShape::Box { re_min, re_max, im_min, im_max } => vec![Cell::Rect {
                re0: self.center.re + re_min,
                re1: self.center.re + re_max,
                im0: self.center.im + im_min,
                im1: self.center.im + im_max,
            }],
        }
    }
}

/// Straight segment or circular arc, parametrized over `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Edge {
    Line(Complex64, Complex64),
    Arc { center: Complex64, radius: f64, phi0: f64, phi1: f64 },
}

impl Edge {
    /// `z(t)` and `z'(t)`.
    pub fn point(&self, t: f64) -> (Complex64, Complex64) {
        match *self {
            Edge::Line(a, b) => (a + (b - a) * t, b - a),
            Edge::Arc { center, radius, phi0, phi1 } => {
                let phi = phi0 + (phi1 - phi0) * t;
                let e = Complex64::from_polar(radius, phi);
                (center + e, I * e * (phi1 - phi0))
            }
        }
    }
}

/// Subdivision cell for the argument principle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    Rect { re0: f64, re1: f64, im0: f64, im1: f64 },
    AnnularSector { center: Complex64, r0: f64, r1: f64, phi0: f64, phi1: f64 },
}

impl Cell {
    /// Positively oriented boundary.
    pub fn edges(&self) -> Vec<Edge> {
        match *self {
            Cell::Rect { re0, re1, im0, im1 } => {
                let a = Complex64::new(re0, im0);
                let b = Complex64::new(re1, im0);
                let c = Complex64::new(re1, im1);
                let d = Complex64::new(re0, im1);
                vec![Edge::Line(a, b), Edge::Line(b, c), Edge::Line(c, d), Edge::Line(d, a)]
            }
            Cell::AnnularSector { center, r0, r1, phi0, phi1 } => {
                let p = |r: f64, phi: f64| center + Complex64::from_polar(r, phi);
                let mut e = vec![
                    Edge::Line(p(r0, phi0), p(r1, phi0)),
                    Edge::Arc { center, radius: r1, phi0, phi1 },
                    Edge::Line(p(r1, phi1), p(r0, phi1)),
                ];
                if r0 > 0.0 {
                    e.push(Edge::Arc { center, radius: r0, phi0: phi1, phi1: phi0 });
                }
                e
            }
        }
    }

    pub fn split(&self) -> [Cell; 4] {
        match *self {
            Cell::Rect { re0, re1, im0, im1 } => {
                let rm = 0.5 * (re0 + re1);
                let im = 0.5 * (im0 + im1);
                [
                    Cell::Rect { re0, re1: rm, im0, im1: im },
                    Cell::Rect { re0: rm, re1, im0, im1: im },
                    Cell::Rect { re0, re1: rm, im0: im, im1 },
                    Cell::Rect { re0: rm, re1, im0: im, im1 },
                ]
            }
            Cell::AnnularSector { center, r0, r1, phi0, phi1 } => {
                let rm = if r0 > 0.0 { (r0 * r1).sqrt() } else { 0.5 * r1 };
                let pm = 0.5 * (phi0 + phi1);
                [
                    Cell::AnnularSector { center, r0, r1: rm, phi0, phi1: pm },
                    Cell::AnnularSector { center, r0: rm, r1, phi0, phi1: pm },
                    Cell::AnnularSector { center, r0, r1: rm, phi0: pm, phi1 },
                    Cell::AnnularSector { center, r0: rm, r1, phi0: pm, phi1 },
                ]
            }
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        match *self {
            Cell::Rect { re0, re1, im0, im1 } => z.re > re0 && z.re < re1 && z.im > im0 && z.im < im1,
            Cell::AnnularSector { center, r0, r1, phi0, phi1 } => {
                let d = z - center;
                let r = d.norm();
                if !(r > r0 && r < r1) {
                    return false;
                }
                let mut phi = d.arg();
                while phi < phi0 {
                    phi += 2.0 * PI;
                }
                while phi > phi0 + 2.0 * PI {
                    phi -= 2.0 * PI;
                }
                phi < phi1
            }
        }
    }

    pub fn centre(&self) -> Complex64 {
        match *self {
            Cell::Rect { re0, re1, im0, im1 } => Complex64::new(0.5 * (re0 + re1), 0.5 * (im0 + im1)),
            Cell::AnnularSector { center, r0, r1, phi0, phi1 } => {
                center + Complex64::from_polar(0.5 * (r0 + r1), 0.5 * (phi0 + phi1))
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Cell::Rect { re0, re1, im0, im1 } => (re1 - re0).hypot(im1 - im0),
            Cell::AnnularSector { r0, r1, phi0, phi1, .. } => (r1 - r0).max(r1 * (phi1 - phi0)),
        }
    }
}

/// `(ln f(z), f'(z)/f(z))`; the logarithm only feeds the `|f|` check.
pub trait LogDerivative: Sync {
    fn eval(&self, z: Complex64) -> Result<(Complex64, Complex64)>;
}

impl<F> LogDerivative for F
where
    F: Fn(Complex64) -> Result<(Complex64, Complex64)> + Sync,
{
    fn eval(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        self(z)
    }
}

/// One angular-momentum sector of a determinant model.
pub struct SectorFunction<'a> {
    pub model: &'a BsModel,
    pub m: i64,
}

impl LogDerivative for SectorFunction<'_> {
    fn eval(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        self.model.check_point(z)?;
        let v = self.model.sector_at(self.m, z, true)?;
        Ok((v.log_d, v.dlog_d))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winding {
    pub value: f64,
    pub count: i64,
    /// `|value - count|`
    pub rounding_error: f64,
    pub points: usize,
    /// `(1/2 pi i) oint z f'/f dz`: the sum of enclosed zeros minus poles.
    pub first_moment: Complex64,
    pub min_abs: f64,
    pub origin: Complex64,
    /// `(1/2 pi i) oint (z - origin)^p f'/f dz` for `p = 1..=POWER_SUMS`
    /// (circles only).
    pub power_sums: Vec<Complex64>,
}

/// Number of power sums carried by circle windings.
pub const POWER_SUMS: usize = 6;

impl Winding {
    /// Zeros enclosed, from the power sums by Newton's identities, when the
    /// contour encloses no poles or singularities.
    pub fn zeros_from_power_sums(&self) -> Option<Vec<Complex64>> {
        let k = usize::try_from(self.count).ok()?;
        if k == 0 || k > self.power_sums.len() {
            return None;
        }
        let s = &self.power_sums;
        // elementary symmetric polynomials
        let mut e = vec![Complex64::new(1.0, 0.0)];
        for j in 1..=k {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 1..=j {
                let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
                acc += e[j - i] * s[i - 1] * sign;
            }
            e.push(acc / j as f64);
        }
        // companion matrix of x^k - e1 x^{k-1} + e2 x^{k-2} - ...
        let comp = faer::Mat::from_fn(k, k, |i, j| {
            if i == 0 {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                e[j + 1] * sign
            } else if j + 1 == i {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let roots = dense::eigenvalues(&comp).ok()?;
        Some(roots.into_iter().map(|r| r + self.origin).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourOptions {
    pub base_points: usize,
    pub max_points: usize,
    pub stability: f64,
    pub integer_tolerance: f64,
    pub min_abs: f64,
}

impl Default for ContourOptions {
    fn default() -> Self {
        Self { base_points: 128, max_points: 1 << 16, stability: 0.05, integer_tolerance: 0.1, min_abs: 1e-8 }
    }
}

fn finish(
    value: Complex64,
    moment: Complex64,
    points: usize,
    min_abs: f64,
    origin: Complex64,
    power_sums: Vec<Complex64>,
    opts: &ContourOptions,
    what: &str,
) -> Result<Winding> {
    let v = value.re;
    let count = v.round() as i64;
    let err = (v - count as f64).abs().max(value.im.abs());
    if err > opts.integer_tolerance {
        return Err(Error::NonIntegerWinding { value: v, context: what.to_string() });
    }
    if min_abs < opts.min_abs {
        return Err(Error::ContourReposition(format!("|d| = {min_abs:.3e} on the {what}")));
    }
    Ok(Winding { value: v, count, rounding_error: err, points, first_moment: moment, min_abs, origin, power_sums })
}

/// Trapezoid rule on a positively oriented circle with point doubling.
pub fn winding_on_circle(
    f: &dyn LogDerivative,
    center: Complex64,
    radius: f64,
    opts: &ContourOptions,
) -> Result<Winding> {
    let fam = Single(f);
    let mut w = windings_on_circle(&fam, center, radius, opts, Execution::Sequential)?;
    Ok(w.remove(0))
}

/// Several functions sampled at shared points, e.g. all angular-momentum
/// sectors of a model, which share the level sweeps.
pub trait LogDerivativeFamily: Sync {
    fn len(&self) -> usize;
    fn eval_all(&self, z: Complex64) -> Result<Vec<(Complex64, Complex64)>>;
}

struct Single<'a>(&'a dyn LogDerivative);

impl LogDerivativeFamily for Single<'_> {
    fn len(&self) -> usize {
        1
    }
    fn eval_all(&self, z: Complex64) -> Result<Vec<(Complex64, Complex64)>> {
        Ok(vec![self.0.eval(z)?])
    }
}

/// Every sector of a determinant model.
pub struct AllSectors<'a> {
    pub model: &'a BsModel,
    pub ms: Vec<i64>,
}

impl LogDerivativeFamily for AllSectors<'_> {
    fn len(&self) -> usize {
        self.ms.len()
    }
    fn eval_all(&self, z: Complex64) -> Result<Vec<(Complex64, Complex64)>> {
        self.model.check_point(z)?;
        let levels = self.model.level_data(z, true)?;
        self.ms
            .iter()
            .map(|&m| self.model.sector_value(m, &levels, true).map(|v| (v.log_d, v.dlog_d)))
            .collect()
    }
}

/// Trapezoid rule on a positively oriented circle with point doubling,
/// for every member of a family at once.
pub fn windings_on_circle(
    f: &dyn LogDerivativeFamily,
    center: Complex64,
    radius: f64,
    opts: &ContourOptions,
    exec: Execution,
) -> Result<Vec<Winding>> {
    let nf = f.len();
    let zero = Complex64::new(0.0, 0.0);
    // sums[i][0] is the winding, sums[i][p] the p-th power sum about the centre
    let mut sums = vec![vec![zero; POWER_SUMS + 1]; nf];
    let mut min_abs = vec![f64::INFINITY; nf];
    let mut add = |ks: Vec<usize>, n: usize, sums: &mut Vec<Vec<Complex64>>| -> Result<()> {
        let vals = exec.map(&ks, |&k| {
            let e = Complex64::from_polar(radius, 2.0 * PI * k as f64 / n as f64);
            f.eval_all(center + e).map(|v| (e, v))
        });
        for v in vals {
            let (e, v) = v?;
            for (i, (l, d)) in v.into_iter().enumerate() {
                // dz = i e dphi; (1/2 pi i) * i e * 2 pi / n = e / n
                let mut term = d * e;
                for s in sums[i].iter_mut() {
                    *s += term;
                    term *= e;
                }
                min_abs[i] = min_abs[i].min(l.re.exp());
            }
        }
        Ok(())
    };
    let mut n = opts.base_points;
    add((0..n).collect(), n, &mut sums)?;
    let mut prev: Vec<Complex64> = sums.iter().map(|s| s[0] / n as f64).collect();
    let what = format!("circle |z - {center}| = {radius}");
    while n < opts.max_points {
        let n2 = 2 * n;
        add((1..n2).step_by(2).collect(), n2, &mut sums)?;
        n = n2;
        let cur: Vec<Complex64> = sums.iter().map(|s| s[0] / n as f64).collect();
        let settled = cur.iter().zip(&prev).all(|(c, p)| {
            let near_int = (c.re - c.re.round()).abs() <= opts.integer_tolerance && c.im.abs() <= opts.integer_tolerance;
            (c - p).norm() < opts.stability && near_int
        });
        if settled {
            return (0..nf)
                .map(|i| {
                    let power_sums: Vec<Complex64> = sums[i][1..].iter().map(|s| s / n as f64).collect();
                    let moment = power_sums[0] + center * cur[i].re.round();
                    finish(cur[i], moment, n, min_abs[i], center, power_sums, opts, &what)
                })
                .collect();
        }
        prev = cur;
    }
    let worst = prev.iter().map(|c| c.re).fold(f64::NAN, f64::max);
    Err(Error::NonIntegerWinding { value: worst, context: format!("{what} did not stabilize") })
}

/// Composite Gauss-Legendre on the edges of a cell with panel doubling.
pub fn winding_on_cell(f: &dyn LogDerivative, cell: &Cell, opts: &ContourOptions) -> Result<Winding> {
    let rule = GaussLegendre::new(16);
    let edges = cell.edges();
    let integrate = |panels: usize| -> Result<(Complex64, Complex64, f64)> {
        let mut s = Complex64::new(0.0, 0.0);
        let mut m = Complex64::new(0.0, 0.0);
        let mut min_abs = f64::INFINITY;
        for e in &edges {
            for p in 0..panels {
                let a = p as f64 / panels as f64;
                let b = (p + 1) as f64 / panels as f64;
                for (t, w) in rule.mapped(a, b) {
                    let (z, dz) = e.point(t);
                    let (l, d) = f.eval(z)?;
                    s += d * dz * w;
                    m += z * d * dz * w;
                    min_abs = min_abs.min(l.re.exp());
                }
            }
        }
        let scale = 1.0 / (2.0 * PI * I);
        Ok((s * scale, m * scale, min_abs))
    };
    let mut panels = 2;
    let mut prev = integrate(panels)?;
    let max_panels = (opts.max_points / 16).max(4);
    while panels < max_panels {
        panels *= 2;
        let cur = integrate(panels)?;
        let near_int = (cur.0.re - cur.0.re.round()).abs() <= opts.integer_tolerance;
        if (cur.0 - prev.0).norm() < 1e-3 && near_int {
            let what = format!("cell {cell:?}");
            return finish(cur.0, cur.1, panels * 16 * edges.len(), cur.2, cell.centre(), Vec::new(), opts, &what);
        }
        prev = cur;
    }
    Err(Error::NonIntegerWinding { value: prev.0.re, context: format!("cell {cell:?} did not stabilize") })
}

/// Winding number of `f` around the boundary of a region.
pub fn count_zeros_contour(f: &dyn LogDerivative, region: &SearchRegion, opts: &ContourOptions) -> Result<Winding> {
    let mut w = count_zeros_family(&Single(f), region, opts, Execution::Sequential)?;
    Ok(w.remove(0))
}

/// Winding numbers of every member of a family around a region boundary.
pub fn count_zeros_family(
    f: &dyn LogDerivativeFamily,
    region: &SearchRegion,
    opts: &ContourOptions,
    exec: Execution,
) -> Result<Vec<Winding>> {
    match region.shape {
        RegionShape::Disc { radius } => windings_on_circle(f, region.center, radius, opts, exec),
        RegionShape::Annulus { inner, outer } => {
            let outer = windings_on_circle(f, region.center, outer, opts, exec)?;
            let inner = windings_on_circle(f, region.center, inner, opts, exec)?;
            Ok(outer
                .into_iter()
                .zip(inner)
                .map(|(o, i)| Winding {
                    value: o.value - i.value,
                    count: o.count - i.count,
                    rounding_error: o.rounding_error + i.rounding_error,
                    points: o.points + i.points,
                    first_moment: o.first_moment - i.first_moment,
                    min_abs: o.min_abs.min(i.min_abs),
                    origin: region.center,
                    power_sums: o.power_sums.iter().zip(&i.power_sums).map(|(a, b)| a - b).collect(),
                })
                .collect())
        }
        RegionShape::Box { .. } => {
            let cell = region.initial_cells()[0];
            (0..f.len())
                .map(|k| {
                    let g = |z: Complex64| f.eval_all(z).map(|v| v[k]);
                    winding_on_cell(&g, &cell, opts)
                })
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonanceSource {
    #[default]
    Det2Zero,
    DirectEigen,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub z: Complex64,
    pub multiplicity: usize,
    pub newton_residual: f64,
    pub theta_used: Complex64,
    pub source: ResonanceSource,
    /// Angular momentum sector the zero belongs to.
    pub m: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Iterates farther than this from the seed count as divergence.
    pub capture_radius: f64,
    pub multiplicity_radius: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iterations: 50, step_tolerance: 1e-10, capture_radius: 1e-2, multiplicity_radius: 1e-4 }
    }
}

/// Newton's method `z <- z - f/f'` followed by a multiplicity winding.
pub fn refine_zero(
    f: &dyn LogDerivative,
    z_init: Complex64,
    theta: Complex64,
    m: i64,
    newton: &NewtonOptions,
    contour: &ContourOptions,
) -> Result<Resonance> {
    let mut z = z_init;
    let mut trajectory = vec![z];
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    for _ in 0..newton.max_iterations {
        let (_, d) = f.eval(z)?;
        let step = d.inv();
        if !step.re.is_finite() || !step.im.is_finite() {
            // landed exactly on the zero
            converged = true;
            last_step = 0.0;
            break;
        }
        z -= step;
        trajectory.push(z);
        last_step = step.norm();
        if (z - z_init).norm() > newton.capture_radius || !z.re.is_finite() {
            return Err(Error::NewtonDivergence { trajectory });
        }
        if last_step < newton.step_tolerance * (1.0 + z.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NewtonDivergence { trajectory });
    }
    // the zero itself makes |f| small near the circle only for tiny radii
    let opts = ContourOptions { min_abs: 0.0, base_points: 32, ..*contour };
    let w = winding_on_circle(f, z, newton.multiplicity_radius, &opts)?;
    if w.count < 1 {
        return Err(Error::NonIntegerWinding {
            value: w.value,
            context: format!("multiplicity circle around {z} encloses no zero"),
        });
    }
    Ok(Resonance {
        z,
        multiplicity: w.count as usize,
        newton_residual: last_step,
        theta_used: theta,
        source: ResonanceSource::Det2Zero,
        m,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seeding {
    #[default]
    Subdivision,
    DirectEigen,
}

/// Cell whose zeros could not be isolated within the depth limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub m: i64,
    pub cell: Cell,
    pub winding: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorCount {
    pub m: i64,
    pub winding: i64,
    pub found: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub items: Vec<Resonance>,
    pub region: SearchRegion,
    pub total_count: i64,
    pub unresolved: Vec<Cluster>,
    pub sectors: Vec<SectorCount>,
    pub theta: Complex64,
    /// Largest distance between matched resonances across distortion
    /// angles, when measured.
    pub theta_stability: Option<f64>,
}

impl ResonanceSet {
    pub fn count_where(&self, pred: impl Fn(Complex64) -> bool) -> usize {
        self.items.iter().filter(|r| pred(r.z)).map(|r| r.multiplicity).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub contour: ContourOptions,
    pub newton: NewtonOptions,
    pub max_depth: usize,
    /// Largest sector dimension for which direct seeding diagonalizes.
    pub max_direct_dim: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            contour: ContourOptions::default(),
            newton: NewtonOptions::default(),
            max_depth: 12,
            max_direct_dim: 2500,
        }
    }
}

/// Zeros of one analytic function inside a list of cells, by recursive
/// quadrisection. Cells with a single zero seed Newton with their first
/// moment, which is the zero itself up to quadrature error.
pub fn subdivide(
    f: &dyn LogDerivative,
    cells: &[Cell],
    theta: Complex64,
    m: i64,
    opts: &SearchOptions,
) -> Result<(Vec<Resonance>, Vec<Cluster>)> {
    let mut found = Vec::new();
    let mut clusters = Vec::new();
    let mut stack: Vec<(Cell, usize)> = cells.iter().map(|&c| (c, 0)).collect();
    while let Some((cell, depth)) = stack.pop() {
        let w = winding_on_cell(f, &cell, &opts.contour)?;
        if w.count <= 0 {
            continue;
        }
        if w.count == 1 {
            let newton = NewtonOptions { capture_radius: cell.diameter().max(1e-6), ..opts.newton };
            let seed = if cell.contains(w.first_moment) { w.first_moment } else { cell.centre() };
            match refine_zero(f, seed, theta, m, &newton, &opts.contour) {
                Ok(r) if cell.contains(r.z) => {
                    found.push(r);
                    continue;
                }
                _ => {}
            }
        }
        if depth >= opts.max_depth {
            clusters.push(Cluster { m, cell, winding: w.count });
            continue;
        }
        for child in cell.split() {
            stack.push((child, depth + 1));
        }
    }
    Ok((found, clusters))
}

/// Eigenvalues of the truncated distorted Hamiltonian of one sector.
pub fn direct_eigenvalues(model: &BsModel, m: i64) -> Result<Vec<Complex64>> {
    let h = model.hamiltonian_sector(m)?;
    let mut ev = dense::eigenvalues(&h)?;
    dense::sort_complex(&mut ev);
    Ok(ev)
}

/// Direct eigenvalues inside the region for every sector, reported as
/// resonances of source `DirectEigen` (multiplicity by coincidence within
/// `1e-8`).
pub fn direct_resonances(model: &BsModel, region: &SearchRegion, exec: Execution) -> Result<Vec<Resonance>> {
    let ms = model.m_values();
    let per = exec.map(&ms, |&m| -> Result<Vec<Resonance>> {
        let ev = direct_eigenvalues(model, m)?;
        let inside: Vec<Complex64> = ev.into_iter().filter(|&z| region.contains(z)).collect();
        Ok(group(inside)
            .into_iter()
            .map(|(z, mult)| Resonance {
                z,
                multiplicity: mult,
                newton_residual: 0.0,
                theta_used: model.theta(),
                source: ResonanceSource::DirectEigen,
                m,
            })
            .collect())
    });
    let mut all = Vec::new();
    for p in per {
        all.extend(p?);
    }
    sort_resonances(&mut all);
    Ok(all)
}

fn group(mut zs: Vec<Complex64>) -> Vec<(Complex64, usize)> {
    dense::sort_complex(&mut zs);
    let mut out: Vec<(Complex64, usize)> = Vec::new();
    for z in zs {
        match out.last_mut() {
            Some((w, k)) if (*w - z).norm() < 1e-8 * (1.0 + z.norm()) => *k += 1,
            _ => out.push((z, 1)),
        }
    }
    out
}

pub fn sort_resonances(v: &mut [Resonance]) {
    v.sort_by(|a, b| {
        a.z.re.total_cmp(&b.z.re).then(a.z.im.total_cmp(&b.z.im)).then(a.m.cmp(&b.m))
    });
}

fn polish_seeds(
    f: &dyn LogDerivative,
    seeds: &[Complex64],
    region: &SearchRegion,
    theta: Complex64,
    m: i64,
    opts: &SearchOptions,
) -> Vec<Resonance> {
    let mut found: Vec<Resonance> = Vec::new();
    for &s in seeds {
        if let Ok(r) = refine_zero(f, s, theta, m, &opts.newton, &opts.contour) {
            if region.contains(r.z) && !found.iter().any(|o| (o.z - r.z).norm() < 1e-8 * (1.0 + r.z.norm())) {
                found.push(r);
            }
        }
    }
    found
}

/// All zeros of `d_theta` in the region, sector by sector. Seeds come from
/// direct eigenvalues or from the contour power sums; when they do not
/// account for the winding number the region is subdivided.
pub fn find_resonances(
    model: &BsModel,
    region: &SearchRegion,
    seeding: Seeding,
    opts: &SearchOptions,
    exec: Execution,
) -> Result<ResonanceSet> {
    let theta = model.theta();
    let ms = model.m_values();
    let windings = count_zeros_family(&AllSectors { model, ms: ms.clone() }, region, &opts.contour, exec)?;
    let jobs: Vec<(i64, Winding)> = ms.iter().copied().zip(windings).collect();
    let per = exec.map(&jobs, |(m, w)| -> Result<(Vec<Resonance>, Vec<Cluster>, SectorCount)> {
        let m = *m;
        if w.count <= 0 {
            return Ok((Vec::new(), Vec::new(), SectorCount { m, winding: w.count, found: 0 }));
        }
        let f = SectorFunction { model, m };
        let mut clusters = Vec::new();
        let seeds = match seeding {
            Seeding::DirectEigen => {
                let dim = model.axis.n() * (model.levels() + 1);
                if dim > opts.max_direct_dim {
                    return Err(Error::InvalidParameter(format!(
                        "direct seeding would diagonalize a {dim}x{dim} matrix; use subdivision"
                    )));
                }
                direct_eigenvalues(model, m)?.into_iter().filter(|&z| region.contains(z)).collect()
            }
            Seeding::Subdivision => w.zeros_from_power_sums().unwrap_or_default(),
        };
        let mut found = polish_seeds(&f, &seeds, region, theta, m, opts);
        let total: usize = found.iter().map(|r| r.multiplicity).sum();
        if total as i64 != w.count {
            log::debug!("sector m = {m}: seeds gave {total} zeros, winding says {}; subdividing", w.count);
            let (f_found, f_clusters) = subdivide(&f, &region.initial_cells(), theta, m, opts)?;
            found = f_found;
            clusters = f_clusters;
        }
        let total: i64 =
            found.iter().map(|r| r.multiplicity as i64).sum::<i64>() + clusters.iter().map(|c| c.winding).sum::<i64>();
        if total != w.count {
            return Err(Error::NonIntegerWinding {
                value: total as f64,
                context: format!("sector m = {m}: zeros found do not add up to the region winding {}", w.count),
            });
        }
        let n_found = found.len();
        Ok((found, clusters, SectorCount { m, winding: w.count, found: n_found }))
    });
    let mut items = Vec::new();
    let mut unresolved = Vec::new();
    let mut sectors = Vec::new();
    for p in per {
        let (f, c, s) = p?;
        items.extend(f);
        unresolved.extend(c);
        sectors.push(s);
    }
    sort_resonances(&mut items);
    let total_count = sectors.iter().map(|s| s.winding).sum();
    Ok(ResonanceSet { items, region: region.clone(), total_count, unresolved, sectors, theta, theta_stability: None })
}

/// Pairs each item of `a` with its nearest unused item of `b` (same
/// sector), returning the pairs and the largest distance.
pub fn match_sets(a: &[Resonance], b: &[Resonance]) -> (Vec<(Resonance, Option<Resonance>)>, f64) {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    let mut pairs = Vec::new();
    for r in a {
        let best = b
            .iter()
            .enumerate()
            .filter(|(k, o)| !used[*k] && o.m == r.m)
            .min_by(|x, y| (x.1.z - r.z).norm().total_cmp(&(y.1.z - r.z).norm()));
        match best {
            Some((k, o)) => {
                used[k] = true;
                worst = worst.max((o.z - r.z).norm());
                pairs.push((*r, Some(*o)));
            }
            None => {
                worst = f64::INFINITY;
                pairs.push((*r, None));
            }
        }
    }
    if used.iter().any(|u| !u) {
        worst = f64::INFINITY;
    }
    (pairs, worst)
}

/// Marks determinant zeros confirmed by a direct eigenvalue within `tol`.
pub fn merge_sources(det: &[Resonance], direct: &[Resonance], tol: f64) -> Vec<Resonance> {
    let (pairs, _) = match_sets(det, direct);
    pairs
        .into_iter()
        .map(|(mut r, o)| {
            if let Some(o) = o {
                if (o.z - r.z).norm() < tol * (1.0 + r.z.norm()) && o.multiplicity == r.multiplicity {
                    r.source = ResonanceSource::Both;
                }
            }
            r
        })
        .collect()
}

/// Half the distance from `center` to the nearest other spectral feature:
/// ray feet `2bj`, the rays themselves, and the points `2bj + z_k` built
/// from the discrete eigenvalues `z_k` of the distorted axis operator.
pub fn estimate_r0(center: Complex64, rays: &[Ray], axis_discrete: &[Complex64], b: f64) -> f64 {
    let mut best = f64::INFINITY;
    for ray in rays {
        best = best.min((ray.origin - center).norm()).min(ray.distance(center));
        for &zk in axis_discrete {
            let p = ray.origin + zk;
            let d = (p - center).norm();
            if d > 1e-6 * (1.0 + center.norm()) {
                best = best.min(d);
            }
        }
    }
    let _ = b;
    0.5 * best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusRow {
    pub r: f64,
    /// Resonances with `r < |z - c| < 2r`.
    pub count: usize,
    /// Resonances with `|z - c| < 2r`.
    pub disc_count: usize,
    /// `n_+(r, nu p_q W p_q)`
    pub n_plus: usize,
    /// `n_+ |ln r|`
    pub envelope: f64,
    pub ratio: f64,
    pub note: Option<String>,
}

/// Counts from a resonance set that is complete in the region covering all
/// annuli.
pub fn annulus_count_experiment(
    set: &ResonanceSet,
    spectrum: &ToeplitzSpectrum,
    r_list: &[f64],
    nu: f64,
) -> Result<Vec<AnnulusRow>> {
    for w in r_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidParameter("r_list must be strictly decreasing".into()));
        }
    }
    let c = set.region.center;
    let scaled = spectrum.scaled(nu);
    Ok(r_list
        .iter()
        .map(|&r| {
            let crossing = set.region.excluded_rays.iter().find(|ray| ray.distance(c) <= 2.0 * r);
            let n_plus = counting_function(r, &scaled);
            let envelope = n_plus as f64 * r.ln().abs();
            if let Some(ray) = crossing {
                return AnnulusRow {
                    r,
                    count: 0,
                    disc_count: 0,
                    n_plus,
                    envelope,
                    ratio: f64::NAN,
                    note: Some(format!("annulus meets the ray of level {}", ray.level)),
                };
            }
            let count = set.count_where(|z| {
                let d = (z - c).norm();
                d > r && d < 2.0 * r
            });
            let disc_count = set.count_where(|z| (z - c).norm() < 2.0 * r);
            let ratio = if envelope > 0.0 { count as f64 / envelope } else { f64::NAN };
            AnnulusRow { r, count, disc_count, n_plus, envelope, ratio, note: None }
        })
        .collect())
}

/// Least-squares slope of `ln y` against `ln(1/r)`; positive values mean
/// growth as `r` shrinks.
pub fn trend_exponent(r: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = r
        .iter()
        .zip(y)
        .filter(|(r, y)| **r > 0.0 && y.is_finite() && **y > 0.0)
        .map(|(r, y)| (-r.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Some(crate::landau::linear_fit(&xs, &ys).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn poly(zeros: Vec<Complex64>) -> impl Fn(Complex64) -> Result<(Complex64, Complex64)> {
        move |z: Complex64| {
            let l: Complex64 = zeros.iter().map(|w| (z - w).ln()).sum();
            let d: Complex64 = zeros.iter().map(|w| (z - w).inv()).sum();
            Ok((l, d))
        }
    }

    #[test]
    fn circle_winding_of_a_linear_function() {
        let f = poly(vec![c(0.3, -0.2)]);
        let w = winding_on_circle(&f, c(0.0, 0.0), 1.0, &ContourOptions::default()).unwrap();
        assert_eq!(w.count, 1);
        assert!((w.zeros_from_power_sums().unwrap()[0] - c(0.3, -0.2)).norm() < 1e-10);
        assert!((w.first_moment - c(0.3, -0.2)).norm() < 1e-10);
        let w = winding_on_circle(&f, c(3.0, 0.0), 1.0, &ContourOptions::default()).unwrap();
        assert_eq!(w.count, 0);
    }

    #[test]
    fn cell_children_windings_add_up() {
        let f = poly(vec![c(0.3, -0.2), c(-0.5, 0.1), c(0.31, -0.22)]);
        let cell = Cell::Rect { re0: -1.0, re1: 1.0, im0: -1.0, im1: 1.0 };
        let opts = ContourOptions::default();
        let parent = winding_on_cell(&f, &cell, &opts).unwrap().count;
        let kids: i64 = cell.split().iter().map(|k| winding_on_cell(&f, k, &opts).unwrap().count).sum();
        assert_eq!(parent, 3);
        assert_eq!(kids, parent);
        let sector = Cell::AnnularSector { center: c(0.0, 0.0), r0: 0.1, r1: 1.0, phi0: -PI, phi1: 0.0 };
        assert_eq!(winding_on_cell(&f, &sector, &opts).unwrap().count, 2);
        let kids: i64 = sector.split().iter().map(|k| winding_on_cell(&f, k, &opts).unwrap().count).sum();
        assert_eq!(kids, 2);
    }

    #[test]
    fn power_sums_recover_zeros_in_an_annulus() {
        // a pole inside the inner circle must not disturb the result
        let zeros = vec![c(3.1, -0.01), c(2.9, 0.05), c(3.0, 0.2)];
        let f = {
            let zeros = zeros.clone();
            move |z: Complex64| -> Result<(Complex64, Complex64)> {
                let p = z - c(3.0, 0.0);
                let l: Complex64 = zeros.iter().map(|w| (z - w).ln()).sum::<Complex64>() - p.ln() + (0.01 / p);
                let d: Complex64 = zeros.iter().map(|w| (z - w).inv()).sum::<Complex64>() - p.inv() - 0.01 / (p * p);
                Ok((l, d))
            }
        };
        let region = SearchRegion {
            center: c(3.0, 0.0),
            shape: RegionShape::Annulus { inner: 0.02, outer: 0.3 },
            q: 1,
            excluded_rays: Vec::new(),
        };
        let w = count_zeros_contour(&f, &region, &ContourOptions::default()).unwrap();
        assert_eq!(w.count, 3);
        let got = w.zeros_from_power_sums().unwrap();
        for z in zeros {
            assert!(got.iter().any(|g| (g - z).norm() < 1e-8), "{z}");
        }
    }

    #[test]
    fn subdivision_finds_clustered_zeros() {
        let zeros = vec![c(0.3, -0.2), c(-0.5, 0.1), c(0.31, -0.22), c(0.9, 0.9)];
        let f = poly(zeros.clone());
        let cell = Cell::Rect { re0: -1.0, re1: 0.95, im0: -1.0, im1: 0.95 };
        let (found, clusters) = subdivide(&f, &[cell], c(0.0, 0.1), 0, &SearchOptions::default()).unwrap();
        assert!(clusters.is_empty());
        assert_eq!(found.len(), 4);
        for z in zeros {
            assert!(found.iter().any(|r| (r.z - z).norm() < 1e-12 && r.multiplicity == 1));
        }
    }

    #[test]
    fn double_zero_has_multiplicity_two() {
        let f = poly(vec![c(0.2, 0.1), c(0.2, 0.1)]);
        let r = refine_zero(&f, c(0.21, 0.1), c(0.0, 0.1), 0, &NewtonOptions::default(), &ContourOptions::default());
        // Newton converges linearly on a double zero; the step test still
        // triggers well inside the capture radius
        let r = r.unwrap();
        assert_eq!(r.multiplicity, 2);
    }

    #[test]
    fn newton_from_exact_zero_stops_immediately() {
        let f = poly(vec![c(0.2, 0.1)]);
        let r = refine_zero(&f, c(0.2, 0.1), c(0.0, 0.1), 0, &NewtonOptions::default(), &ContourOptions::default())
            .unwrap();
        assert!(r.newton_residual == 0.0);
        assert_eq!(r.multiplicity, 1);
    }

    #[test]
    fn newton_divergence_is_reported() {
        let f = |z: Complex64| -> Result<(Complex64, Complex64)> { Ok((z, Complex64::new(1.0, 0.0))) };
        let e = refine_zero(&f, c(0.0, 0.0), c(0.0, 0.1), 0, &NewtonOptions::default(), &ContourOptions::default());
        assert!(matches!(e, Err(Error::NewtonDivergence { .. })));
    }

    #[test]
    fn region_rejects_rays() {
        let theta = c(0.0, 0.1);
        assert!(SearchRegion::new(c(3.0, 0.0), RegionShape::Annulus { inner: 0.01, outer: 0.3 }, 1, 2.0, theta, 1, 1e-3).is_ok());
        assert!(SearchRegion::new(c(3.0, 0.0), RegionShape::Disc { radius: 1.5 }, 1, 2.0, theta, 1, 1e-3).is_err());
        let b = RegionShape::Box { re_min: -1.0, re_max: 1.5, im_min: -0.2, im_max: 0.2 };
        assert!(SearchRegion::new(c(3.0, 0.0), b, 1, 2.0, theta, 1, 1e-3).is_err());
    }

    #[test]
    fn trend_of_decreasing_ratios_is_negative() {
        let t = trend_exponent(&[0.1, 0.05, 0.025], &[1.0, 0.8, 0.7]).unwrap();
        assert!(t < 0.0);
    }
}
