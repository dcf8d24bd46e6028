//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs without the libtest harness so the lines always show.
//!
//! Reference model: b = 2, v0 = -2 sech^2 (lambda = -1), W = w = Gaussian,
//! kappa = 0.1, smooth exterior distortion with R0 = 5, K = 12, L = 30.

use std::time::Instant;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use magres::axis1d::*;
use magres::birman_schwinger::*;
use magres::exec::Execution;
use magres::landau::*;
use magres::resonances::*;
use magres::ssf::*;
use magres::{Complex64, Result};

const B: f64 = 2.0;
const KAPPA: f64 = 0.1;
const L: f64 = 30.0;
const M_MAX: i64 = 8;
const INNER: f64 = 0.0014;
const OUTER: f64 = 0.3;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn exec() -> Execution {
    Execution::Parallel
}

fn axis(n: usize, theta: Complex64, v0: &AxisPotential) -> Result<AxisOperator> {
    let p = DistortionProfile::new(5.0, 12.0, theta, TransitionShape::Smooth)?;
    assemble_axis_operator(&p, &Grid1D::fd4(L, n)?, v0)
}

fn well() -> AxisPotential {
    AxisPotential::poschl_teller(2.0, 1.0)
}

fn model(n: usize, theta: f64) -> Result<BsModel> {
    let op = axis(n, c(0.0, theta), &well())?;
    let pot = SeparablePotential {
        kappa: KAPPA,
        transverse: TransversePotential::gaussian(1.0),
        axial: AxialFactor::gaussian(1.0),
    };
    BsModel::new(pot, LandauBasis::new(B, 1, M_MAX)?, op, -1.0)
}

fn region(theta: f64) -> Result<SearchRegion> {
    SearchRegion::new(c(3.0, 0.0), RegionShape::Annulus { inner: INNER, outer: OUTER }, 1, B, c(0.0, theta), 1, 1e-3)
}

fn search(n: usize, theta: f64) -> Result<ResonanceSet> {
    find_resonances(&model(n, theta)?, &region(theta)?, Seeding::Subdivision, &SearchOptions::default(), exec())
}

type Outcome = Result<(bool, String)>;

struct Gate {
    failed: Vec<&'static str>,
}

impl Gate {
    fn check(&mut self, name: &'static str, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{} {name}: {detail} [{:.1} s]", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(name);
        }
    }
}

fn ray_rotation() -> Outcome {
    let theta = c(0.0, 0.2);
    let op = assemble_axis_operator(&DistortionProfile::dilation(theta)?, &Grid1D::fd4(L, 1024)?, &AxisPotential::zero())?;
    let ev = magres::linalg::dense::eigenvalues(&op.dense())?;
    let dir = (1.0 + theta).powi(-2);
    let on = ev
        .iter()
        .filter(|&&z| {
            // distance to the half-line dir [0, inf)
            let t = (z * dir.conj()).re / dir.norm_sqr();
            let d = if t <= 0.0 { z.norm() } else { (z - dir * t).norm() };
            d <= 1e-3 * (1.0 + z.norm())
        })
        .count();
    let frac = on as f64 / ev.len() as f64;
    Ok((frac >= 0.99, format!("{:.2}% of {} eigenvalues on the ray", 100.0 * frac, ev.len())))
}

fn bound_state() -> Outcome {
    let l0 = bound_state_near(&axis(2000, c(0.0, 0.0), &well())?, c(-1.0, 0.0))?.lambda;
    let l1 = bound_state_near(&axis(2000, c(0.0, 0.15), &well())?, l0)?.lambda;
    let err = (l0 - c(-1.0, 0.0)).norm();
    let drift = (l1 - l0).norm();
    Ok((err < 1e-6 && drift < 1e-8, format!("|lambda + 1| = {err:.2e}, drift = {drift:.2e}")))
}

fn det2_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let a = Mat::from_fn(20, 20, |_, _| c(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
        let ia = Mat::from_fn(20, 20, |i, j| a[(i, j)] + if i == j { 1.0 } else { 0.0 });
        let tr: Complex64 = (0..20).map(|i| a[(i, i)]).sum();
        let expect = ia.determinant() * (-tr).exp();
        let got = det2_matrix(&a)?.value;
        worst = worst.max((got - expect).norm() / expect.norm());
    }
    let u: Vec<Complex64> = (0..20).map(|_| c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
    let v: Vec<Complex64> = (0..20).map(|_| c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
    let a = Mat::from_fn(20, 20, |i, j| u[i] * v[j]);
    let s: Complex64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    let expect = (1.0 + s) * (-s).exp();
    let rank1 = (det2_matrix(&a)?.value - expect).norm() / expect.norm();
    Ok((worst < 1e-10 && rank1 < 1e-12, format!("random: {worst:.2e}, rank one: {rank1:.2e}")))
}

fn toeplitz_closed_form() -> Outcome {
    let basis = LandauBasis::new(B, 0, 40)?;
    let spec = toeplitz_eigenvalues(0, &TransversePotential::gaussian(1.0), &basis, exec())?;
    let worst = (0..=20)
        .map(|m| (spec.mu_at(m).unwrap_or(f64::NAN) - 0.5f64.powi(m as i32 + 1)).abs())
        .fold(0.0, f64::max);
    let n = counting_function(0.1, &spec);
    Ok((worst < 1e-10 && n == 3, format!("max error {worst:.2e}, n_+(0.1) = {n}")))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
}

fn counting_asymptotics() -> Outcome {
    let grid = log_grid(1e-6, 1e-2, 25);
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [3.0, 4.0] {
        let w = TransversePotential::power_law(alpha)?;
        let m = choose_m_max(1, &w, &LandauBasis::new(B, 1, 0)?, 1e-6)?;
        let spec = toeplitz_eigenvalues(1, &w, &LandauBasis::new(B, 1, m)?, exec())?;
        let fit = fit_counting_asymptotics(&w.family, &spec, &grid)?;
        let expect = 2.0 / alpha;
        let rel = (fit.slope - expect).abs() / expect;
        pass &= rel < 0.1;
        parts.push(format!("alpha {alpha}: slope {:.4} vs {expect:.4}", fit.slope));
    }
    let w = TransversePotential::gaussian(1.0);
    let m = choose_m_max(1, &w, &LandauBasis::new(B, 1, 0)?, 1e-6)?;
    let spec = toeplitz_eigenvalues(1, &w, &LandauBasis::new(B, 1, m)?, exec())?;
    let fit = fit_counting_asymptotics(&w.family, &spec, &grid)?;
    pass &= fit.law == CountingLaw::Logarithmic && fit.relative_residual < 0.05;
    parts.push(format!("gaussian: residual {:.2}%", 100.0 * fit.relative_residual));
    Ok((pass, parts.join(", ")))
}

fn counting_equality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let basis = LandauBasis::new(B, 1, 30)?;
    let mut checked = 0;
    let mut mismatches = 0;
    for w in [TransversePotential::gaussian(1.0), TransversePotential::power_law(4.0)?] {
        let spec = toeplitz_eigenvalues(1, &w, &basis, exec())?;
        let bq = b_q_eigenvalues(1, &w, &basis, 160, exec())?;
        let mut done = 0;
        while done < 10 {
            let r = (rng.random_range(1e-3f64.ln()..0.3f64.ln())).exp();
            if spec.mu.iter().chain(&bq).any(|&m| (m - r).abs() < 1e-6 * r) {
                continue;
            }
            if count_above(r, &bq) != counting_function(r, &spec) {
                mismatches += 1;
            }
            done += 1;
        }
        checked += done;
    }
    Ok((mismatches == 0, format!("{checked} random r, {mismatches} mismatches")))
}

fn oracle_equivalence() -> Outcome {
    let m = model(400, 0.1)?;
    let reg = region(0.1)?;
    let set = find_resonances(&m, &reg, Seeding::Subdivision, &SearchOptions::default(), exec())?;
    let direct = direct_resonances(&m, &reg, exec())?;
    let (pairs, worst) = match_sets(&set.items, &direct);
    let same_mult = pairs.iter().all(|(a, b)| b.is_some_and(|b| b.multiplicity == a.multiplicity));
    let direct_count: usize = direct.iter().map(|r| r.multiplicity).sum();
    let pass = worst < 1e-6 && same_mult && direct_count as i64 == set.total_count && set.unresolved.is_empty();
    Ok((
        pass,
        format!("{} zeros, {} eigenvalues, winding {}, max distance {worst:.2e}", set.items.len(), direct_count, set.total_count),
    ))
}

fn theta_independence(a: &ResonanceSet, b: &ResonanceSet) -> Outcome {
    let (pairs, _) = match_sets(&a.items, &b.items);
    let mut worst: f64 = 0.0;
    let mut ok = a.total_count == b.total_count && !a.items.is_empty();
    for (x, y) in pairs {
        match y {
            Some(y) => {
                let d = (x.z - y.z).norm() / (1.0 + x.z.norm());
                worst = worst.max(d);
                ok &= d <= 1e-6;
            }
            None => ok = false,
        }
    }
    Ok((ok, format!("{} resonances, max relative distance {worst:.2e}", a.items.len())))
}

/// `<psi, w psi>` for `psi = sech(x) / sqrt(2)`, `w = exp(-x^2)`.
fn axial_overlap() -> f64 {
    let h = 1e-3;
    (-20000..=20000)
        .map(|k| {
            let x = k as f64 * h;
            (-x * x).exp() / x.cosh().powi(2) / 2.0
        })
        .sum::<f64>()
        * h
}

/// First Landau level, `W = exp(-rho^2)`, `b = 2`.
fn mu_first_level(m: i64) -> f64 {
    if m < 0 {
        0.25
    } else {
        (m as f64 + 2.0) / 2f64.powi(m as i32 + 3)
    }
}

fn perturbative_placement(set: &ResonanceSet) -> Outcome {
    let overlap = axial_overlap();
    let worst = set
        .items
        .iter()
        .map(|r| (r.z - (3.0 + KAPPA * overlap * mu_first_level(r.m))).norm())
        .fold(0.0, f64::max);
    Ok((
        worst < 5e-3 && !set.items.is_empty(),
        format!("<psi,w psi> = {overlap:.6}, max distance {worst:.2e}"),
    ))
}

fn breit_wigner(set: &ResonanceSet) -> Outcome {
    let m = model(2000, 0.1)?;
    let window = BwWindow { q: 1, center: 3.0, r: 0.01, interval: (0.7, 1.8) };
    let bw = breit_wigner_reconstruct(&m, &window, set, &BwOptions::default(), exec())?;
    let ratios: Vec<f64> = bw.complex_resonances.iter().filter_map(|&w| bw.peak_ratio(w)).collect();
    let worst_peak = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    let pass = bw.relative_residual < 0.1 && worst_peak < 0.05 && !ratios.is_empty();
    Ok((
        pass,
        format!(
            "residual {:.2e} of |xi'|, {} peaks, worst height error {:.2e}",
            bw.relative_residual,
            ratios.len(),
            worst_peak
        ),
    ))
}

fn first_level_spectrum(m_max: i64) -> Result<ToeplitzSpectrum> {
    toeplitz_eigenvalues(1, &TransversePotential::gaussian(1.0), &LandauBasis::new(B, 1, m_max)?, exec())
}

fn trace_formula(set: &ResonanceSet) -> Outcome {
    let coarse = self_adjoint_spectra(&model(600, 0.0)?, exec())?;
    let fine = self_adjoint_spectra(&model(1200, 0.0)?, exec())?;
    let spec = first_level_spectrum(120)?;
    let window = TraceWindow { x0: 0.049, x1: 1.0, height: 0.5, width: 0.007 };
    let rs = [0.2, 0.1, 0.05];
    let mut pass = true;
    let mut parts = Vec::new();
    for coeffs in [vec![1.0], vec![0.0, 1.0], vec![1.0, 1.0, -1.0]] {
        let f = TestFunction::Polynomial { coeffs: coeffs.clone() };
        let mut ratios = Vec::new();
        for r in rs {
            ratios.push(trace_formula_check(&coarse, &fine, 3.0, r, &window, &f, set, &spec, 1.0)?.bound_ratio);
        }
        let trend = trend_exponent(&rs, &ratios);
        pass &= ratios.iter().all(|x| x.is_finite()) && trend.is_none_or(|t| t <= 0.25);
        parts.push(format!(
            "deg {}: max ratio {:.2e} trend {}",
            coeffs.len() - 1,
            ratios.iter().fold(0.0f64, |a, &b| a.max(b)),
            trend.map_or("flat".to_string(), |t| format!("{t:.2}"))
        ));
    }
    Ok((pass, parts.join(", ")))
}

fn envelope(set: &ResonanceSet) -> Outcome {
    let spec = first_level_spectrum(120)?;
    let r = [0.0082, 0.0041, 0.00205];
    let rows = annulus_count_experiment(set, &spec, &r, 1.0)?;
    let ratios: Vec<f64> = rows.iter().map(|x| x.ratio).collect();
    let counts: Vec<usize> = rows.iter().map(|x| x.count).collect();
    let trend = trend_exponent(&r, &ratios);
    let pass = rows.iter().all(|x| x.note.is_none() && x.ratio.is_finite()) && trend.is_some_and(|t| t <= 0.25);
    let shown: Vec<String> = ratios.iter().map(|x| format!("{x:.3e}")).collect();
    Ok((pass, format!("counts {counts:?}, ratios [{}], trend {trend:.2?}", shown.join(", "))))
}

fn main() {
    let mut gate = Gate { failed: Vec::new() };
    gate.check("ray rotation", ray_rotation);
    gate.check("bound state", bound_state);
    gate.check("det2 identities", det2_identities);
    gate.check("Toeplitz closed form", toeplitz_closed_form);
    gate.check("counting asymptotics", counting_asymptotics);
    gate.check("counting function equality", counting_equality);
    gate.check("oracle equivalence", oracle_equivalence);

    let t = Instant::now();
    let sets = search(2000, 0.1).and_then(|a| search(2000, 0.18).map(|b| (a, b)));
    println!("(reference searches at theta = 0.10i, 0.18i took {:.1} s)", t.elapsed().as_secs_f64());
    match &sets {
        Ok((a, b)) => {
            gate.check("theta independence", || theta_independence(a, b));
            gate.check("perturbative placement", || perturbative_placement(a));
            gate.check("Breit-Wigner reconstruction", || breit_wigner(a));
            gate.check("trace formula", || trace_formula(a));
            gate.check("upper-bound envelope", || envelope(a));
        }
        Err(e) => {
            let msg = e.to_string();
            for name in
                ["theta independence", "perturbative placement", "Breit-Wigner reconstruction", "trace formula", "upper-bound envelope"]
            {
                gate.check(name, || Ok((false, format!("reference search failed: {msg}"))));
            }
        }
    }

    if gate.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: {} failing: {}", gate.failed.len(), gate.failed.join(", "));
        std::process::exit(1);
    }
}
