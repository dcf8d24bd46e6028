use std::fs;
use std::path::Path;

use magres::config::{validate_config, RunConfig};
use magres::exec::Execution;
use magres::experiment::{fmt_f64, run_experiment, DIAGNOSTICS, MANIFEST};
use magres::Error;

fn bundled(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    fs::read_to_string(p).unwrap()
}

fn config(name: &str, edits: &[(&str, &str)]) -> RunConfig {
    let mut raw = bundled(name);
    for (from, to) in edits {
        assert!(raw.contains(from), "{from} not in {name}");
        raw = raw.replace(from, to);
    }
    validate_config(&raw).unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn bundled_configs_validate() {
    for name in ["spectrum_map.toml", "resonance_search.toml", "counting.toml", "ssf_window.toml"] {
        validate_config(&bundled(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn spectrum_map_of_the_free_axis_lies_on_the_ray() {
    let cfg = config("spectrum_map.toml", &[("n = 1024", "n = 256")]);
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&cfg, dir.path(), Execution::Parallel).unwrap();
    let csv = fs::read_to_string(dir.path().join("axis_spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "theta_re,theta_im,re,im,ray_distance,kind");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 256);
    assert!(rows.iter().all(|r| r.ends_with(",continuum")));
    assert_eq!(m.diagnostics["rays"][0]["fraction_on_ray"], 1.0);
    let listed: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    for f in files(dir.path()) {
        assert!(f == MANIFEST || listed.contains(&f.as_str()), "{f} not listed in the manifest");
    }
}

#[test]
fn data_files_are_byte_identical_across_runs_and_workers() {
    let cfg = config("counting.toml", &[]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path(), Execution::Parallel).unwrap();
    run_experiment(&cfg, b.path(), Execution::Sequential).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    for f in files(a.path()) {
        if f == MANIFEST {
            continue;
        }
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f} differs");
    }
}

#[test]
fn counting_power_law_four_has_slope_one_half() {
    let cfg = config("counting.toml", &[]);
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&cfg, dir.path(), Execution::Parallel).unwrap();
    let slope = m.diagnostics["fit"]["slope"].as_f64().unwrap();
    assert!((slope - 0.5).abs() < 0.05, "slope {slope}");
    let toeplitz = fs::read_to_string(dir.path().join("toeplitz.csv")).unwrap();
    assert!(toeplitz.starts_with("q,m,mu\n1,-1,"));
}

#[test]
fn zero_coupling_search_is_empty() {
    let cfg = config(
        "resonance_search.toml",
        &[("kappa = 0.1", "kappa = 0.0"), ("n = 2000", "n = 200"), ("theta = [[0.0, 0.1], [0.0, 0.18]]", "theta = [[0.0, 0.1]]")],
    );
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&cfg, dir.path(), Execution::Parallel).unwrap();
    let csv = fs::read_to_string(dir.path().join("resonances.csv")).unwrap();
    assert_eq!(csv, "re,im,multiplicity,residual,source,m\n");
    assert_eq!(m.diagnostics["total_count"], 0);
    assert!(m.diagnostics["note"].as_str().unwrap().contains("no resonances"));
}

#[test]
fn failed_run_leaves_only_diagnostics() {
    // the window reaches past the searched annulus, which the Breit-Wigner
    // step refuses after the resonance files were already written
    let cfg = config("ssf_window.toml", &[("n = 2000", "n = 300"), ("interval = [0.7, 1.8]", "interval = [0.7, 40.0]")]);
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&cfg, dir.path(), Execution::Parallel).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)), "{err}");
    assert_eq!(files(dir.path()), vec![DIAGNOSTICS.to_string()]);
    let diag = fs::read_to_string(dir.path().join(DIAGNOSTICS)).unwrap();
    assert!(diag.contains("ssf_window") && diag.contains("outside the searched region"));
}

#[test]
fn float_format_round_trips() {
    for x in [0.0, -1.0, 1.0 / 3.0, 2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, -7.1e-9] {
        let s = fmt_f64(x);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        assert!(s.contains('e'));
    }
    assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
}
