//! Experiment orchestration and artifact emission.
//!
//! Every data file is CSV with a header row and floats written as
//! `{:.16e}` (17 significant digits, locale independent), so the same
//! config gives byte-identical data files. The manifest is the only file
//! that carries a wall-clock time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::axis1d::{bound_state_near, classify_spectrum};
use crate::config::{Experiment, RunConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::landau::{
    choose_m_max, fit_counting_asymptotics, toeplitz_eigenvalues, CountingLaw, LandauBasis, ToeplitzSpectrum,
    TransverseFamily,
};
use crate::resonances::{
    annulus_count_experiment, direct_resonances, find_resonances, match_sets, merge_sources, trend_exponent,
    ResonanceSet, ResonanceSource, SearchOptions, SearchRegion, Seeding,
};
use crate::ssf::{breit_wigner_reconstruct, BwOptions, BwWindow};
use crate::Complex64;

pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.txt";

/// Relative residual and peak-height thresholds reported with the
/// Breit-Wigner split.
pub const BW_RESIDUAL_THRESHOLD: f64 = 0.1;
pub const BW_PEAK_THRESHOLD: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub code_version: String,
    pub experiment: Experiment,
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
    pub diagnostics: BTreeMap<String, Value>,
    pub wall_clock_seconds: f64,
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV cell.
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(i) => i.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

/// Files written so far; removed again if the run fails.
struct Artifacts {
    dir: PathBuf,
    files: Vec<OutputFile>,
    created_dir: bool,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), created_dir })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<Cell>>) -> Result<()> {
        let path = self.dir.join(name);
        // register first so a half-written file is cleaned up too
        self.files.push(OutputFile {
            path: name.to_string(),
            columns: header.iter().map(|s| s.to_string()).collect(),
            rows: rows.len(),
        });
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for row in &rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.files.push(OutputFile { path: name.to_string(), columns: Vec::new(), rows: body.lines().count() });
        fs::write(self.dir.join(name), body)?;
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.files.push(OutputFile { path: name.to_string(), columns: Vec::new(), rows: 0 });
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn discard(&mut self) {
        for f in self.files.drain(..) {
            let _ = fs::remove_file(self.dir.join(&f.path));
        }
        let _ = fs::remove_file(self.dir.join(MANIFEST));
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

/// Diagnostics gathered while an experiment runs.
#[derive(Default)]
struct Diagnostics(BTreeMap<String, Value>);

impl Diagnostics {
    fn set(&mut self, key: &str, v: impl Serialize) {
        self.0.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }
}

/// Runs the configured experiment into `out`. On failure the partial
/// outputs are removed and only `diagnostics.txt` is left behind.
pub fn run_experiment(cfg: &RunConfig, out: &Path, exec: Execution) -> Result<RunManifest> {
    let start = Instant::now();
    let mut art = Artifacts::new(out)?;
    let mut diag = Diagnostics::default();
    let result = match cfg.experiment {
        Experiment::SpectrumMap => spectrum_map(cfg, exec, &mut art, &mut diag),
        Experiment::ResonanceSearch => resonance_search(cfg, exec, &mut art, &mut diag).map(|_| ()),
        Experiment::Counting => counting(cfg, exec, &mut art, &mut diag),
        Experiment::SsfWindow => ssf_window(cfg, exec, &mut art, &mut diag),
    };
    let result = result.and_then(|_| art.text(DIAGNOSTICS, &diag.render()));
    match result {
        Ok(()) => {
            let manifest = RunManifest {
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                experiment: cfg.experiment,
                config: cfg.clone(),
                outputs: art.files.clone(),
                diagnostics: diag.0,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            if let Err(e) = fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n") {
                art.discard();
                return Err(e.into());
            }
            Ok(manifest)
        }
        Err(e) => {
            art.discard();
            let body = format!("experiment: {}\nerror: {e}\n{}", cfg.experiment.name(), diag.render());
            if fs::write(out.join(DIAGNOSTICS), body).is_err() && art.created_dir {
                let _ = fs::remove_dir(out);
            }
            Err(e)
        }
    }
}

fn context(what: &str, e: Error) -> Error {
    log::error!("{what}: {e}");
    e
}

fn source_name(s: ResonanceSource) -> &'static str {
    match s {
        ResonanceSource::Det2Zero => "det2_zero",
        ResonanceSource::DirectEigen => "direct_eigen",
        ResonanceSource::Both => "both",
    }
}

fn first_theta(cfg: &RunConfig) -> Complex64 {
    cfg.thetas()[0]
}

/// Bound state of the undistorted axis operator on the production grid.
fn axis_bound_state(cfg: &RunConfig) -> Result<f64> {
    let guess = crate::config::lowest_axis_energy(cfg)?;
    if !(guess < 0.0) {
        return Err(Error::NoBoundState);
    }
    let op = cfg.axis_operator(Complex64::new(0.0, 0.0), cfg.truncation.n)?;
    Ok(bound_state_near(&op, Complex64::new(guess, 0.0))?.lambda.re)
}

fn spectrum_map(cfg: &RunConfig, exec: Execution, art: &mut Artifacts, diag: &mut Diagnostics) -> Result<()> {
    let thetas = cfg.thetas();
    let spectra = exec
        .map(&thetas, |&th| {
            cfg.axis_operator(th, cfg.truncation.n).and_then(|op| classify_spectrum(&op, cfg.tolerances.ray))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| context("axis spectrum", e))?;

    let mut rows = Vec::new();
    let mut ray_rows = Vec::new();
    let mut fractions = Vec::new();
    for s in &spectra {
        for &z in &s.eigenvalues {
            let d = crate::axis1d::distance_to_ray(z, s.ray_origin, s.ray_direction);
            let kind = if s.discrete.contains(&z) { "discrete" } else { "continuum" };
            rows.push(vec![
                Cell::F(s.theta.re),
                Cell::F(s.theta.im),
                Cell::F(z.re),
                Cell::F(z.im),
                Cell::F(d),
                Cell::S(kind.into()),
            ]);
        }
        for j in 0..=cfg.truncation.levels {
            ray_rows.push(vec![
                Cell::F(s.theta.re),
                Cell::F(s.theta.im),
                Cell::I(j as i64),
                Cell::F(2.0 * cfg.b * j as f64),
                Cell::F(0.0),
                Cell::F(s.ray_direction.re),
                Cell::F(s.ray_direction.im),
            ]);
        }
        fractions.push(json!({
            "theta": [s.theta.re, s.theta.im],
            "fraction_on_ray": s.fraction_on_ray(cfg.tolerances.ray),
            "discrete": s.discrete.len(),
        }));
    }
    art.csv("axis_spectrum.csv", &["theta_re", "theta_im", "re", "im", "ray_distance", "kind"], rows)?;
    art.csv(
        "rays.csv",
        &["theta_re", "theta_im", "level", "origin_re", "origin_im", "direction_re", "direction_im"],
        ray_rows,
    )?;

    // embedded eigenvalues 2bj + lambda from the real discrete eigenvalues
    let mut embedded = Vec::new();
    let bound: Vec<f64> = spectra[0]
        .discrete
        .iter()
        .filter(|z| z.re < 0.0 && z.im.abs() <= 1e-8 * (1.0 + z.norm()))
        .map(|z| z.re)
        .collect();
    for &lambda in &bound {
        for j in 1..=cfg.truncation.levels {
            embedded.push(vec![Cell::I(j as i64), Cell::F(lambda), Cell::F(2.0 * cfg.b * j as f64 + lambda)]);
        }
    }
    art.csv("embedded.csv", &["level", "lambda", "energy"], embedded)?;
    diag.set("rays", fractions);
    diag.set("bound_states", &bound);

    if cfg.region.is_some() && !bound.is_empty() && cfg.kappa != 0.0 {
        let set = search_at(cfg, first_theta(cfg), bound[0], exec, diag)?;
        write_resonances(art, "resonances.csv", &set)?;
    }
    Ok(())
}

fn search_options(cfg: &RunConfig) -> SearchOptions {
    let mut opts = SearchOptions::default();
    opts.newton.step_tolerance = cfg.tolerances.newton_step;
    opts
}

fn seeding(cfg: &RunConfig) -> Seeding {
    match &cfg.search {
        Some(s) if s.direct_seeding => Seeding::DirectEigen,
        _ => Seeding::Subdivision,
    }
}

fn search_at(
    cfg: &RunConfig,
    theta: Complex64,
    lambda: f64,
    exec: Execution,
    diag: &mut Diagnostics,
) -> Result<ResonanceSet> {
    let center = Complex64::new(2.0 * cfg.b * cfg.q as f64 + lambda, 0.0);
    let region = cfg.region(theta, center)?;
    if cfg.kappa == 0.0 {
        diag.set("note", "kappa = 0: the determinant is identically 1 and there are no resonances");
        return Ok(empty_set(region, theta));
    }
    let model = cfg.model(theta, cfg.truncation.n, lambda)?;
    find_resonances(&model, &region, seeding(cfg), &search_options(cfg), exec)
        .map_err(|e| context(&format!("resonance search at theta = {theta}"), e))
}

fn empty_set(region: SearchRegion, theta: Complex64) -> ResonanceSet {
    ResonanceSet {
        items: Vec::new(),
        region,
        total_count: 0,
        unresolved: Vec::new(),
        sectors: Vec::new(),
        theta,
        theta_stability: None,
    }
}

fn write_resonances(art: &mut Artifacts, name: &str, set: &ResonanceSet) -> Result<()> {
    let rows = set
        .items
        .iter()
        .map(|r| {
            vec![
                Cell::F(r.z.re),
                Cell::F(r.z.im),
                Cell::I(r.multiplicity as i64),
                Cell::F(r.newton_residual),
                Cell::S(source_name(r.source).into()),
                Cell::I(r.m),
            ]
        })
        .collect();
    art.csv(name, &["re", "im", "multiplicity", "residual", "source", "m"], rows)
}

fn resonance_search(
    cfg: &RunConfig,
    exec: Execution,
    art: &mut Artifacts,
    diag: &mut Diagnostics,
) -> Result<ResonanceSet> {
    let lambda = axis_bound_state(cfg)?;
    diag.set("lambda", lambda);
    let thetas = cfg.thetas();
    let mut set = search_at(cfg, thetas[0], lambda, exec, diag)?;

    if cfg.search.as_ref().is_some_and(|s| s.verify_direct) && cfg.kappa != 0.0 {
        let model = cfg.model(thetas[0], cfg.truncation.n, lambda)?;
        let direct = direct_resonances(&model, &set.region, exec).map_err(|e| context("direct oracle", e))?;
        let (_, worst) = match_sets(&set.items, &direct);
        diag.set("direct_oracle_distance", finite_or_null(worst));
        diag.set("direct_oracle_count", direct.iter().map(|r| r.multiplicity).sum::<usize>());
        set.items = merge_sources(&set.items, &direct, cfg.tolerances.theta_match);
    }

    let mut check_rows = Vec::new();
    let mut stability: f64 = 0.0;
    for &th in &thetas[1..] {
        let other = search_at(cfg, th, lambda, exec, diag)?;
        let (pairs, worst) = match_sets(&set.items, &other.items);
        stability = stability.max(worst);
        for (a, b) in pairs {
            let (re, im, d) = match b {
                Some(b) => (b.z.re, b.z.im, (b.z - a.z).norm()),
                None => (f64::NAN, f64::NAN, f64::INFINITY),
            };
            check_rows.push(vec![
                Cell::F(th.re),
                Cell::F(th.im),
                Cell::I(a.m),
                Cell::F(a.z.re),
                Cell::F(a.z.im),
                Cell::F(re),
                Cell::F(im),
                Cell::F(d),
            ]);
        }
        if other.total_count != set.total_count {
            stability = f64::INFINITY;
        }
    }
    if thetas.len() > 1 {
        set.theta_stability = Some(stability);
        let scale = 1.0 + set.region.center.norm() + set.region.extent();
        let consistent = stability <= cfg.tolerances.theta_match * scale;
        if !consistent {
            log::warn!("resonances move by {stability:.3e} between distortion angles");
        }
        diag.set("theta_stability", finite_or_null(stability));
        diag.set("theta_consistent", consistent);
        art.csv(
            "theta_check.csv",
            &["theta_re", "theta_im", "m", "re", "im", "other_re", "other_im", "distance"],
            check_rows,
        )?;
    }

    write_resonances(art, "resonances.csv", &set)?;
    let sector_rows = set
        .sectors
        .iter()
        .map(|s| vec![Cell::I(s.m), Cell::I(s.winding), Cell::I(s.found as i64)])
        .collect();
    art.csv("sectors.csv", &["m", "winding", "found"], sector_rows)?;
    diag.set("center", [set.region.center.re, set.region.center.im]);
    diag.set("total_count", set.total_count);
    diag.set("unresolved_clusters", set.unresolved.len());
    diag.set(
        "truncation",
        json!({
            "levels": cfg.truncation.levels,
            "m_max": cfg.truncation.m_max,
            "n": cfg.truncation.n,
            "half_length": cfg.truncation.half_length,
        }),
    );

    if let Some(a) = &cfg.annulus {
        let basis = LandauBasis::new(cfg.b, cfg.truncation.levels.max(cfg.q), a.m_max)?;
        let spectrum = toeplitz_eigenvalues(cfg.q, &cfg.transverse()?, &basis, exec)?;
        let rows = annulus_count_experiment(&set, &spectrum, &a.r_list, cfg.nu)?;
        let r: Vec<f64> = rows.iter().map(|x| x.r).collect();
        let ratio: Vec<f64> = rows.iter().map(|x| x.ratio).collect();
        diag.set("annulus_trend_exponent", trend_exponent(&r, &ratio));
        let table = rows
            .iter()
            .map(|x| {
                vec![
                    Cell::F(x.r),
                    Cell::I(x.count as i64),
                    Cell::I(x.disc_count as i64),
                    Cell::I(x.n_plus as i64),
                    Cell::F(x.envelope),
                    Cell::F(x.ratio),
                    Cell::S(x.note.clone().unwrap_or_default()),
                ]
            })
            .collect();
        art.csv("annulus.csv", &["r", "count", "disc_count", "n_plus", "envelope", "ratio", "note"], table)?;
    }
    Ok(set)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn write_toeplitz(art: &mut Artifacts, spectrum: &ToeplitzSpectrum) -> Result<()> {
    let m0 = -(spectrum.q as i64);
    let rows = spectrum
        .by_m
        .iter()
        .enumerate()
        .map(|(i, &mu)| vec![Cell::I(spectrum.q as i64), Cell::I(m0 + i as i64), Cell::F(mu)])
        .collect();
    art.csv("toeplitz.csv", &["q", "m", "mu"], rows)
}

fn counting(cfg: &RunConfig, exec: Execution, art: &mut Artifacts, diag: &mut Diagnostics) -> Result<()> {
    let c = cfg.counting.as_ref().ok_or_else(|| Error::InvalidParameter("missing [counting] table".into()))?;
    let w = cfg.transverse()?;
    let q_max = cfg.truncation.levels.max(cfg.q);
    let m_max = match c.m_max {
        Some(m) => m,
        None => choose_m_max(cfg.q, &w, &LandauBasis::new(cfg.b, q_max, 0)?, c.r_min / cfg.nu)?,
    };
    let basis = LandauBasis::new(cfg.b, q_max, m_max)?;
    let spectrum = toeplitz_eigenvalues(cfg.q, &w, &basis, exec)?;
    write_toeplitz(art, &spectrum)?;

    let scaled = spectrum.scaled(cfg.nu);
    let grid: Vec<f64> = (0..c.points)
        .map(|k| match k {
            0 => c.r_min,
            k if k == c.points - 1 => c.r_max,
            _ => {
                let t = k as f64 / (c.points - 1) as f64;
                (c.r_min.ln() + t * (c.r_max.ln() - c.r_min.ln())).exp()
            }
        })
        .collect();
    let fit = fit_counting_asymptotics(&w.family, &scaled, &grid).map_err(|e| context("counting fit", e))?;
    let rows = grid
        .iter()
        .map(|&r| {
            let n = crate::landau::counting_function(r, &scaled);
            vec![Cell::F(r), Cell::I(n as i64), Cell::F(-r.ln())]
        })
        .collect();
    art.csv("counting.csv", &["r", "n_plus", "abs_log_r"], rows)?;
    let expected = match (fit.law, w.family) {
        (CountingLaw::PowerLaw, TransverseFamily::PowerLaw { alpha }) => Some(2.0 / alpha),
        _ => None,
    };
    diag.set("m_max", m_max);
    diag.set(
        "fit",
        json!({
            "law": fit.law,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "relative_residual": fit.relative_residual,
            "expected_slope": expected,
            "points_used": fit.r.len(),
        }),
    );
    Ok(())
}

fn ssf_window(cfg: &RunConfig, exec: Execution, art: &mut Artifacts, diag: &mut Diagnostics) -> Result<()> {
    let s = cfg.ssf.as_ref().ok_or_else(|| Error::InvalidParameter("missing [ssf] table".into()))?;
    let set = resonance_search(cfg, exec, art, diag)?;
    let lambda = axis_bound_state(cfg)?;
    let model = cfg.model(first_theta(cfg), cfg.truncation.n, lambda)?;
    let window = BwWindow { q: cfg.q, center: set.region.center.re, r: s.r, interval: (s.interval[0], s.interval[1]) };
    let opts = BwOptions {
        epsilons: s.epsilons.clone(),
        background_degree: s.background_degree,
        base_points: s.base_points,
        ..BwOptions::default()
    };
    let bw = breit_wigner_reconstruct(&model, &window, &set, &opts, exec)
        .map_err(|e| context("spectral shift window", e))?;
    let rows = bw
        .samples
        .iter()
        .enumerate()
        .map(|(k, x)| {
            vec![
                Cell::F(x.mu),
                Cell::F(x.xi2_prime),
                Cell::F(x.xi_prime),
                Cell::F(bw.lorentzian_part[k]),
                Cell::F(bw.background_values[k]),
                Cell::F(bw.residuals[k]),
            ]
        })
        .collect();
    art.csv("ssf.csv", &["mu", "xi2_prime", "xi_prime", "lorentzian", "background", "residual"], rows)?;
    let peaks: Vec<Value> = bw
        .complex_resonances
        .iter()
        .map(|&w| json!({ "re": w.re, "im": w.im, "peak_ratio": bw.peak_ratio(w) }))
        .collect();
    let max_extrapolation = bw.samples.iter().map(|x| x.extrapolation_error).fold(0.0, f64::max);
    let summary = json!({
        "window": {
            "q": window.q,
            "center": window.center,
            "r": window.r,
            "interval": [window.interval.0, window.interval.1],
        },
        "epsilons": opts.epsilons,
        "background_degree": opts.background_degree,
        "background": bw.background,
        "delta_locations": bw.delta_locations,
        "peaks": peaks,
        "relative_residual": bw.relative_residual,
        "max_extrapolation_error": max_extrapolation,
        "thresholds": { "relative_residual": BW_RESIDUAL_THRESHOLD, "peak_height": BW_PEAK_THRESHOLD },
    });
    art.json("ssf_summary.json", &summary)?;
    diag.set("bw_relative_residual", bw.relative_residual);
    diag.set("bw_samples", bw.samples.len());
    Ok(())
}
