use faer::Mat;
use magres::birman_schwinger::{det2_matrix, AxialFactor};
use magres::exec::Execution;
use magres::landau::{count_above, counting_function, ToeplitzSpectrum};
use magres::resonances::trend_exponent;
use magres::ssf::{lorentzian, richardson};
use magres::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counting_is_monotone_and_matches_a_plain_count(
        mu in prop::collection::vec(1e-8f64..1.0, 1..60),
        r1 in 1e-9f64..1.0,
        r2 in 1e-9f64..1.0,
    ) {
        let spec = ToeplitzSpectrum::from_by_m(1, mu.clone());
        let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(counting_function(lo, &spec) >= counting_function(hi, &spec));
        prop_assert_eq!(counting_function(lo, &spec), count_above(lo, &mu));
    }

    #[test]
    fn det2_is_multiplicative_over_blocks(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut entry = || Complex64::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
        let a: Vec<Complex64> = (0..16).map(|_| entry()).collect();
        let b: Vec<Complex64> = (0..25).map(|_| entry()).collect();
        let ma = Mat::from_fn(4, 4, |i, j| a[4 * i + j]);
        let mb = Mat::from_fn(5, 5, |i, j| b[5 * i + j]);
        let block = Mat::from_fn(9, 9, |i, j| match (i < 4, j < 4) {
            (true, true) => a[4 * i + j],
            (false, false) => b[5 * (i - 4) + (j - 4)],
            _ => Complex64::new(0.0, 0.0),
        });
        let whole = det2_matrix(&block).unwrap().value;
        let parts = det2_matrix(&ma).unwrap().value * det2_matrix(&mb).unwrap().value;
        prop_assert!((whole - parts).norm() <= 1e-12 * parts.norm().max(1.0));
    }

    #[test]
    fn richardson_is_exact_on_quadratics(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0) {
        let eps = [1e-2, 5e-3, 2.5e-3];
        let v: Vec<f64> = eps.iter().map(|e| c0 + c1 * e + c2 * e * e).collect();
        let (x, _) = richardson(&eps, &v);
        prop_assert!((x - c0).abs() < 1e-10);
    }

    #[test]
    fn lorentzian_integrates_to_one(re in 2.0f64..4.0, im in 1e-6f64..1e-2) {
        let w = Complex64::new(re, -im);
        // substitution mu = re + im tan(t)
        let n = 4000;
        let h = std::f64::consts::PI / n as f64;
        let total: f64 = (0..n)
            .map(|k| {
                let t = -std::f64::consts::FRAC_PI_2 + (k as f64 + 0.5) * h;
                lorentzian(re + im * t.tan(), w) * im / t.cos().powi(2) * h
            })
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(lorentzian(re + 10.0 * im, w) > 0.0);
    }

    #[test]
    fn trend_of_power_laws_recovers_exponent(p in -2.0f64..2.0, c in 0.1f64..10.0) {
        let r = [0.2, 0.1, 0.05, 0.025];
        let y: Vec<f64> = r.iter().map(|x: &f64| c * x.powf(-p)).collect();
        prop_assert!((trend_exponent(&r, &y).unwrap() - p).abs() < 1e-10);
    }

    #[test]
    fn sequential_and_parallel_maps_agree(xs in prop::collection::vec(-1e3f64..1e3, 0..200)) {
        let f = |x: &f64| (x.sin() * 1e3).round() / 7.0;
        prop_assert_eq!(Execution::Sequential.map(&xs, f), Execution::Parallel.map(&xs, f));
    }

    #[test]
    fn gaussian_axial_factor_is_even_and_real_on_the_line(x in -8.0f64..8.0) {
        let w = AxialFactor::gaussian(1.3);
        let a = w.eval(Complex64::new(x, 0.0)).unwrap();
        let b = w.eval(Complex64::new(-x, 0.0)).unwrap();
        prop_assert!((a - b).norm() < 1e-15 && a.im == 0.0);
    }
}
