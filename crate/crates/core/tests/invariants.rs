use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use hardstar::background::{solve_tov_picard, BackgroundProfile, StarParameters};
use hardstar::evolution::{assemble_coefficients, step, EvolutionState, WaveCoefficients};
use hardstar::modes::{
    quadratic_form, random_regular_functions, spherical_bessel_j1, spherical_bessel_j1_direct,
};
use hardstar::variation::{first_variation, second_variation, Perturbation};

fn star() -> &'static (Arc<BackgroundProfile>, WaveCoefficients) {
    static STAR: OnceLock<(Arc<BackgroundProfile>, WaveCoefficients)> = OnceLock::new();
    STAR.get_or_init(|| {
        let bg = Arc::new(solve_tov_picard(&StarParameters::new(0.1).with_grid(257)).unwrap());
        let coeffs = assemble_coefficients(&bg).unwrap();
        (bg, coeffs)
    })
}

/// `Σ a_k sin((k - ½)πχ/B)` for `ṙ` and the same with `b_k` for `∂_φ ṙ`.
fn perturbation(a: &[f64], b: &[f64]) -> Perturbation {
    let bg = star().0.clone();
    let big_b = bg.chi[bg.len() - 1];
    let series = |c: &[f64], chi: f64| {
        c.iter()
            .enumerate()
            .map(|(k, ck)| ck * ((k as f64 + 0.5) * std::f64::consts::PI * chi / big_b).sin())
            .sum::<f64>()
    };
    Perturbation::from_chi_fn(bg, |x| series(a, x), |x| series(b, x)).unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn second_variation_is_quadratic(a in coeffs(), b in coeffs(), s in -4.0..4.0f64) {
        let p = perturbation(&a, &b);
        let base = second_variation(&p);
        let scaled = second_variation(&p.scaled(s));
        prop_assert!((scaled - s * s * base).abs() <= 1e-12 * (s * s * base).abs().max(1e-300));
    }

    #[test]
    fn static_star_is_critical(a in coeffs()) {
        let p = perturbation(&a, &[0.0; 4]);
        let sup = p.rdot().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mdot = first_variation(&star().0, p.rdot()).unwrap();
        prop_assert!(mdot.abs() <= 1e-6 * (1.0 + sup));
    }

    #[test]
    fn second_variation_is_positive(a in coeffs(), b in coeffs()) {
        prop_assume!(a.iter().chain(&b).any(|v| v.abs() > 1e-3));
        prop_assert!(second_variation(&perturbation(&a, &b)) > 0.0);
    }

    #[test]
    fn j1_series_meets_direct_formula(x in 0.3..0.7f64) {
        prop_assert!((spherical_bessel_j1(x) - spherical_bessel_j1_direct(x)).abs() <= 1e-14);
    }

    #[test]
    fn h_is_positive_on_regular_functions(seed in any::<u64>()) {
        let bg = &star().0;
        for h in random_regular_functions(bg, 2, seed) {
            prop_assert!(quadratic_form(bg, &h).unwrap() > 0.0);
        }
    }

    #[test]
    fn verlet_is_time_reversible(a in coeffs(), b in coeffs(), steps in 1usize..40) {
        let (_, coeffs) = star();
        let p = perturbation(&a, &b);
        let mut state = EvolutionState::new(&p);
        let start = (state.ratio.clone(), state.ratio_dot.clone());
        let dt = 0.4 * coeffs.cfl_unit();
        for _ in 0..steps {
            step(&mut state, coeffs, dt).unwrap();
        }
        for _ in 0..steps {
            step(&mut state, coeffs, -dt).unwrap();
        }
        let scale = start.0.iter().chain(&start.1).fold(1e-300_f64, |m, v| m.max(v.abs()));
        let err = state.ratio.iter().zip(&start.0).chain(state.ratio_dot.iter().zip(&start.1))
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(err <= 1e-9 * scale, "{err:e}");
    }
}
