//! Run configuration: TOML parsing, hypothesis checks and model assembly.
//!
//! [`validate_config`] never stops at the first problem; every violated
//! hypothesis is reported by name so a config can be fixed in one pass.

use serde::{Deserialize, Serialize};

use crate::axis1d::{
    assemble_axis_operator, lowest_eigenvalue, AxisOperator, AxisPotential, DistortionProfile, Grid1D,
    TransitionShape,
};
use crate::birman_schwinger::{AxialFactor, AxialFamily, BsModel, SeparablePotential};
use crate::error::{Error, Result};
use crate::landau::{LandauBasis, TransversePotential};
use crate::resonances::{RegionShape, SearchRegion};
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    SpectrumMap,
    ResonanceSearch,
    Counting,
    SsfWindow,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::SpectrumMap, Experiment::ResonanceSearch, Experiment::Counting, Experiment::SsfWindow];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::SpectrumMap => "spectrum_map",
            Experiment::ResonanceSearch => "resonance_search",
            Experiment::Counting => "counting",
            Experiment::SsfWindow => "ssf_window",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::SpectrumMap => "eigenvalues of the distorted axis operator, rays and embedded levels",
            Experiment::ResonanceSearch => "zeros of the regularized determinant in a region near 2bq + lambda",
            Experiment::Counting => "Toeplitz eigenvalues mu_(q,m), n_+(r) and the asymptotic fit",
            Experiment::SsfWindow => "spectral shift derivative near 2bq + lambda and its Breit-Wigner split",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AxisPotentialSpec {
    PoschlTeller { depth: f64, width: f64 },
    GaussianWell { depth: f64, width: f64 },
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransverseSpec {
    PowerLaw {
        alpha: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Gaussian {
        scale: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    CompactSupport {
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        #[serde(default = "one")]
        amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AxialSpec {
    Gaussian { width: f64 },
    Sech2 { width: f64 },
    Power { width: f64, delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSpec {
    /// Pure complex dilation instead of an exterior distortion.
    #[serde(default)]
    pub dilation: bool,
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub shape: TransitionShape,
    /// `[re, im]` pairs; the first one drives the run, the others are
    /// cross-checks.
    pub theta: Vec<[f64; 2]>,
}

impl DistortionSpec {
    pub fn thetas(&self) -> Vec<Complex64> {
        self.theta.iter().map(|t| Complex64::new(t[0], t[1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    /// Landau level cutoff `J`.
    pub levels: usize,
    /// Angular momentum cutoff `M`.
    pub m_max: i64,
    /// Interior grid points on the axis.
    pub n: usize,
    /// Half-length `L` of the axis box.
    pub half_length: f64,
}

/// Search region; `center` defaults to `2bq + lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Disc { center: Option<[f64; 2]>, radius: f64 },
    Annulus { center: Option<[f64; 2]>, inner: f64, outer: f64 },
    Box { center: Option<[f64; 2]>, re_min: f64, re_max: f64, im_min: f64, im_max: f64 },
}

impl RegionSpec {
    pub fn center(&self) -> Option<Complex64> {
        let c = match self {
            RegionSpec::Disc { center, .. } | RegionSpec::Annulus { center, .. } | RegionSpec::Box { center, .. } => {
                center
            }
        };
        c.map(|c| Complex64::new(c[0], c[1]))
    }

    pub fn shape(&self) -> RegionShape {
        match *self {
            RegionSpec::Disc { radius, .. } => RegionShape::Disc { radius },
            RegionSpec::Annulus { inner, outer, .. } => RegionShape::Annulus { inner, outer },
            RegionSpec::Box { re_min, re_max, im_min, im_max, .. } => RegionShape::Box { re_min, re_max, im_min, im_max },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    /// Seed Newton from direct eigenvalues instead of contour moments.
    #[serde(default)]
    pub direct_seeding: bool,
    /// Also diagonalize the truncated Hamiltonian and match both sets.
    #[serde(default)]
    pub verify_direct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
    /// Angular cutoff for the Toeplitz spectrum; chosen from `r_min` when
    /// absent.
    #[serde(default)]
    pub m_max: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsfSpec {
    /// Half-width of the disc whose resonances form the Lorentzian part.
    pub r: f64,
    /// Energy window as offsets `[a, b]` in units of `r` from the centre.
    pub interval: [f64; 2],
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_degree")]
    pub background_degree: usize,
    #[serde(default = "default_base_points")]
    pub base_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusSpec {
    pub r_list: Vec<f64>,
    /// Angular cutoff for the Toeplitz spectrum used by `n_+`.
    #[serde(default = "default_annulus_m_max")]
    pub m_max: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_ray")]
    pub ray: f64,
    #[serde(default = "default_newton")]
    pub newton_step: f64,
    /// Relative distance under which two resonance sets are said to match.
    #[serde(default = "default_match")]
    pub theta_match: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { ray: default_ray(), newton_step: default_newton(), theta_match: default_match() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub b: f64,
    /// Landau level of interest.
    pub q: usize,
    #[serde(default = "one")]
    pub nu: f64,
    pub kappa: f64,
    /// Half-opening `epsilon` of the analyticity sector.
    #[serde(default = "default_epsilon")]
    pub sector_epsilon: f64,
    pub axis_potential: AxisPotentialSpec,
    pub transverse: TransverseSpec,
    pub axial: AxialSpec,
    pub distortion: DistortionSpec,
    pub truncation: TruncationSpec,
    #[serde(default)]
    pub region: Option<RegionSpec>,
    #[serde(default)]
    pub search: Option<SearchSpec>,
    #[serde(default)]
    pub counting: Option<CountingSpec>,
    #[serde(default)]
    pub ssf: Option<SsfSpec>,
    #[serde(default)]
    pub annulus: Option<AnnulusSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<String>,
    /// Worker threads (0 = all cores); `--workers` takes precedence.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_epsilons() -> Vec<f64> {
    vec![1e-8, 5e-9, 2.5e-9]
}
fn default_degree() -> usize {
    3
}
fn default_base_points() -> usize {
    200
}
fn default_annulus_m_max() -> i64 {
    120
}
fn default_ray() -> f64 {
    1e-3
}
fn default_newton() -> f64 {
    1e-10
}
fn default_match() -> f64 {
    1e-6
}

/// Radius of the admissible distortion disc for sector half-opening `eps`.
pub fn admissible_theta_radius(eps: f64) -> f64 {
    eps / (1.0 + eps * eps).sqrt()
}

impl RunConfig {
    pub fn axis_potential(&self) -> AxisPotential {
        match self.axis_potential {
            AxisPotentialSpec::PoschlTeller { depth, width } => AxisPotential::poschl_teller(depth, width),
            AxisPotentialSpec::GaussianWell { depth, width } => AxisPotential::gaussian_well(depth, width),
            AxisPotentialSpec::Zero => AxisPotential::zero(),
        }
    }

    pub fn transverse(&self) -> Result<TransversePotential> {
        Ok(match self.transverse {
            TransverseSpec::PowerLaw { alpha, amplitude } => TransversePotential::power_law(alpha)?.scaled(amplitude),
            TransverseSpec::Gaussian { scale, amplitude } => TransversePotential::gaussian(scale).scaled(amplitude),
            TransverseSpec::CompactSupport { radius, amplitude } => {
                TransversePotential::compact_support(radius).scaled(amplitude)
            }
            TransverseSpec::Constant { amplitude } => TransversePotential::constant().scaled(amplitude),
        })
    }

    pub fn axial(&self) -> AxialFactor {
        match self.axial {
            AxialSpec::Gaussian { width } => AxialFactor::gaussian(width),
            AxialSpec::Sech2 { width } => AxialFactor { family: AxialFamily::Sech2, width, delta_par: 2.0 },
            AxialSpec::Power { width, delta } => AxialFactor { family: AxialFamily::Power, width, delta_par: delta },
        }
    }

    pub fn potential(&self) -> Result<SeparablePotential> {
        Ok(SeparablePotential { kappa: self.kappa, transverse: self.transverse()?, axial: self.axial() })
    }

    pub fn profile(&self, theta: Complex64) -> Result<DistortionProfile> {
        let d = &self.distortion;
        if d.dilation {
            return DistortionProfile::dilation(theta);
        }
        match (d.r0, d.k) {
            (Some(r0), Some(k)) => DistortionProfile::new(r0, k, theta, d.shape),
            _ => Err(Error::InvalidParameter("exterior distortion needs r0 and k".into())),
        }
    }

    pub fn grid(&self, n: usize) -> Result<Grid1D> {
        Grid1D::fd4(self.truncation.half_length, n)
    }

    pub fn axis_operator(&self, theta: Complex64, n: usize) -> Result<AxisOperator> {
        assemble_axis_operator(&self.profile(theta)?, &self.grid(n)?, &self.axis_potential())
    }

    pub fn thetas(&self) -> Vec<Complex64> {
        self.distortion.thetas()
    }

    pub fn basis(&self, m_max: i64) -> Result<LandauBasis> {
        LandauBasis::new(self.b, self.truncation.levels, m_max)
    }

    /// Determinant model at `theta` on an `n`-point axis grid.
    pub fn model(&self, theta: Complex64, n: usize, lambda_min: f64) -> Result<BsModel> {
        let axis = self.axis_operator(theta, n)?;
        BsModel::new(self.potential()?, self.basis(self.truncation.m_max)?, axis, lambda_min)
    }

    /// Search region around `center` (used when the config leaves it out).
    pub fn region(&self, theta: Complex64, default_center: Complex64) -> Result<SearchRegion> {
        let spec = self
            .region
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("this experiment needs a [region] table".into()))?;
        let center = spec.center().unwrap_or(default_center);
        SearchRegion::new(center, spec.shape(), self.q, self.b, theta, self.truncation.levels, self.tolerances.ray)
    }
}

/// Parses and validates a TOML document.
pub fn validate_config(raw: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(raw).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
    let violations = check_hypotheses(&cfg);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(violations))
    }
}

/// Grid size used for the startup spectral gate; the lowest eigenvalue of a
/// smooth well is converged long before the production grid.
const GATE_POINTS: usize = 800;

/// Every violated hypothesis, named.
pub fn check_hypotheses(cfg: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    let mut push = |s: String| v.push(s);

    if !(cfg.b > 0.0 && cfg.b.is_finite()) {
        push(format!("field strength must be positive (b = {})", cfg.b));
    }
    let eps = cfg.sector_epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        push(format!("sector half-opening must satisfy 0 < epsilon < 1 (epsilon = {eps})"));
    }
    if !cfg.kappa.is_finite() {
        push("coupling kappa must be finite".into());
    }
    if !(cfg.nu > 0.0 && cfg.nu.is_finite()) {
        push(format!("counting scale nu must be positive (nu = {})", cfg.nu));
    }

    let delta_perp = match cfg.transverse {
        TransverseSpec::PowerLaw { alpha, .. } => alpha,
        TransverseSpec::Constant { .. } => 0.0,
        _ => f64::INFINITY,
    };
    if !(delta_perp > 2.0) {
        push(format!("transverse decay too slow (requires delta_perp > 2, got {delta_perp})"));
    }
    match cfg.transverse {
        TransverseSpec::Gaussian { scale: s, .. } | TransverseSpec::CompactSupport { radius: s, .. } if !(s > 0.0) => {
            push(format!("transverse length scale must be positive (got {s})"))
        }
        _ => {}
    }
    let (axial_width, delta_par) = match cfg.axial {
        AxialSpec::Gaussian { width } | AxialSpec::Sech2 { width } => (width, f64::INFINITY),
        AxialSpec::Power { width, delta } => (width, delta),
    };
    if !(delta_par > 1.0) {
        push(format!("axial decay too slow (requires delta_par > 1, got {delta_par})"));
    }
    if !(axial_width > 0.0) {
        push(format!("axial width must be positive (got {axial_width})"));
    }
    if let AxisPotentialSpec::PoschlTeller { width, .. } | AxisPotentialSpec::GaussianWell { width, .. } =
        cfg.axis_potential
    {
        if !(width > 0.0) {
            push(format!("axis potential width must be positive (got {width})"));
        }
    }
    let delta0 = cfg.axis_potential().delta0;
    if !(delta0 > 1.0) {
        push(format!("axis potential decay too slow (requires delta_0 > 1, got {delta0})"));
    }

    let t = &cfg.truncation;
    if t.n < 16 {
        push(format!("axis grid needs at least 16 points (n = {})", t.n));
    }
    if t.m_max < 0 {
        push(format!("angular cutoff M must be non-negative (M = {})", t.m_max));
    }
    if t.levels < cfg.q {
        push(format!("level cutoff J = {} is below the level of interest q = {}", t.levels, cfg.q));
    }
    if !(t.half_length > 0.0) {
        push(format!("axis half-length must be positive (L = {})", t.half_length));
    }

    let d = &cfg.distortion;
    if d.theta.is_empty() {
        push("distortion needs at least one theta".into());
    }
    if !d.dilation {
        match (d.r0, d.k) {
            (Some(r0), Some(k)) => {
                if !(r0 > 0.0 && r0 < k) {
                    push(format!("distortion radii must satisfy 0 < R0 < K (R0 = {r0}, K = {k})"));
                } else if !(k < t.half_length) {
                    push(format!("axis half-length L = {} must exceed K = {k}", t.half_length));
                }
            }
            _ => push("exterior distortion needs both r0 and k (or dilation = true)".into()),
        }
    }
    let radius = admissible_theta_radius(eps);
    for th in cfg.thetas() {
        if th.im < 0.0 {
            push(format!("theta = {th} must have Im theta >= 0"));
        }
        if eps > 0.0 && eps < 1.0 && th.norm() > radius {
            push(format!(
                "|theta| = {:.6} lies outside the admissible disc of radius {radius:.6} for epsilon = {eps}",
                th.norm()
            ));
        }
        if let Err(e) = cfg.profile(th) {
            if matches!(e, Error::NonInvertibleContour(_)) {
                push(format!("theta = {th}: {e}"));
            }
        }
    }

    match cfg.experiment {
        Experiment::ResonanceSearch | Experiment::SsfWindow => {
            if cfg.q == 0 {
                push("resonances sit near 2bq + lambda with q >= 1 (q = 0)".into());
            }
            match &cfg.region {
                None => push(format!("experiment {} needs a [region] table", cfg.experiment.name())),
                Some(r) => {
                    if r.center().is_none() {
                        if let RegionSpec::Disc { .. } | RegionSpec::Box { .. } = r {
                            push("a region around the accumulation point 2bq + lambda must be an annulus".into());
                        }
                    }
                }
            }
            if matches!(cfg.axis_potential, AxisPotentialSpec::Zero) {
                push("resonance experiments need an axis potential with a bound state".into());
            }
            if cfg.experiment == Experiment::SsfWindow && cfg.thetas().first().is_some_and(|t| !(t.im > 0.0)) {
                push("the spectral shift window needs Im theta > 0 for its first theta".into());
            }
        }
        Experiment::Counting => {
            if cfg.counting.is_none() {
                push("experiment counting needs a [counting] table".into());
            }
        }
        Experiment::SpectrumMap => {}
    }
    if cfg.experiment == Experiment::SsfWindow && cfg.ssf.is_none() {
        push("experiment ssf_window needs an [ssf] table".into());
    }
    if let Some(c) = &cfg.counting {
        if !(c.r_min > 0.0 && c.r_min < c.r_max && c.r_max < 1.0) || c.points < 5 {
            push("counting grid needs 0 < r_min < r_max < 1 and at least 5 points".into());
        }
    }
    if let Some(s) = &cfg.ssf {
        if !(s.r > 0.0) || !(s.interval[0] < s.interval[1]) {
            push("ssf window needs r > 0 and interval[0] < interval[1]".into());
        }
        if s.epsilons.len() < 2 || s.epsilons.iter().any(|e| !(*e > 0.0)) {
            push("ssf needs at least two positive epsilons".into());
        }
    }
    if let Some(a) = &cfg.annulus {
        if a.r_list.is_empty() || a.r_list.windows(2).any(|w| !(w[1] < w[0])) || a.r_list.iter().any(|r| !(*r > 0.0))
        {
            push("annulus r_list must be positive and strictly decreasing".into());
        }
    }

    // inf sigma(H_0,par) > -2b, on a coarse undistorted grid
    let axis_sane = t.n >= 16 && t.half_length > 0.0 && axis_width_ok(&cfg.axis_potential);
    if cfg.b > 0.0 && axis_sane {
        match lowest_axis_energy(cfg) {
            Ok(lmin) if !(lmin > -2.0 * cfg.b) => v.push(format!(
                "inf sigma(H_0,par) > -2b fails: lowest axis eigenvalue {lmin:.6} <= -2b = {:.6}",
                -2.0 * cfg.b
            )),
            Ok(_) => {}
            Err(e) => v.push(format!("could not verify inf sigma(H_0,par) > -2b: {e}")),
        }
    }
    v
}

fn axis_width_ok(spec: &AxisPotentialSpec) -> bool {
    match *spec {
        AxisPotentialSpec::PoschlTeller { width, depth } | AxisPotentialSpec::GaussianWell { width, depth } => {
            width > 0.0 && depth.is_finite()
        }
        AxisPotentialSpec::Zero => true,
    }
}

/// `min(sigma(H_0,par) \cup {0})` of the undistorted axis operator.
pub fn lowest_axis_energy(cfg: &RunConfig) -> Result<f64> {
    let v0 = cfg.axis_potential();
    if let Some(e) = v0.poschl_teller_ground_state() {
        return Ok(e.min(0.0));
    }
    let n = cfg.truncation.n.min(GATE_POINTS);
    let op = assemble_axis_operator(&DistortionProfile::dilation(Complex64::new(0.0, 0.0))?, &cfg.grid(n)?, &v0)?;
    Ok(lowest_eigenvalue(&op)?.min(0.0))
}
