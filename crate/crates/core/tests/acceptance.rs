//! Acceptance criteria 1-14 at their pinned tolerances. Each test prints one
//! `criterion N: PASS|FAIL ...` line before asserting.

use std::f64::consts::PI;
use std::sync::Arc;

use hardstar::background::{
    derive_metric_fields, family_scan, solve_tov_picard, solve_tov_shooting, BackgroundProfile, SolverInfo,
    StarParameters,
};
use hardstar::evolution::{self, assemble_coefficients, gaussian_data, EvolveOptions};
use hardstar::modes::{bessel_mode, find_modes, h0_dispersion_roots, mode_to_initial_data};
use hardstar::variation::{audit_set, deformed_star, first_variation, run_audit, second_variation};
use hardstar::verify::{
    profile_distance, static_bounds, AUDIT_MODES, AUDIT_SEED, AUDIT_SIZE, EQUIVALENCE_LOWER, EQUIVALENCE_UPPER,
    MASS_ASPECT_CONSTANT, MASS_ASPECT_EPSILONS, STATIC_BOUND_CONSTANT,
};

fn star(radius: f64, n: usize) -> Arc<BackgroundProfile> {
    Arc::new(solve_tov_picard(&StarParameters::new(radius).with_grid(n)).expect("background solves"))
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Least-squares slope of `ln|y|` against `ln x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report(n: u32, passed: bool, detail: String) {
    println!("criterion {n:>2}: {} {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {n} failed: {detail}");
}

#[test]
fn criterion_01_static_family_bounds() {
    let mut ok = true;
    let mut detail = String::new();
    for radius in [0.01, 0.05, 0.1] {
        let bg = star(radius, 4097);
        let (lo, hi) = static_bounds(&bg);
        let monotone = bg.rho.windows(2).all(|w| w[1] <= w[0]) && bg.m.windows(2).all(|w| w[1] >= w[0]);
        let surface = (bg.rho[bg.len() - 1] - 1.0).abs();
        ok &= lo >= 0.0 && hi <= STATIC_BOUND_CONSTANT && monotone && surface <= 1e-10;
        detail += &format!("R={radius}: [{lo:.3}, {hi:.4}]R^2 monotone={monotone} |rho(R)-1|={surface:.1e}; ");
    }
    report(1, ok, format!("C={STATIC_BOUND_CONSTANT}; {detail}"));
}

#[test]
fn criterion_02_picard_matches_shooting() {
    let params = StarParameters::new(0.05).with_grid(4096);
    let a = solve_tov_picard(&params).unwrap();
    let b = solve_tov_shooting(&params).unwrap();
    let d = profile_distance(&a, &b);
    report(2, d <= 1e-8, format!("sup-norm distance {d:.3e} (<= 1e-8)"));
}

#[test]
fn criterion_03_approximate_profile_scaling() {
    let radii = [0.02, 0.04, 0.08];
    let errors: Vec<f64> = radii
        .iter()
        .map(|&radius| {
            let bg = star(radius, 2049);
            sup(bg.r.iter().zip(&bg.rho).map(|(r, rho)| 1.0 + 2.0 * PI / 3.0 * (radius * radius - r * r) - rho))
        })
        .collect();
    let p = slope(&radii, &errors);
    report(3, (3.7..=4.3).contains(&p), format!("errors {}, exponent {p:.3} in [3.7, 4.3]", sci(&errors)));
}

#[test]
fn criterion_04_no_photon_sphere() {
    // regular stars stop existing near R = 0.245: past it the surface
    // density misses 1 for every central density
    let radii: Vec<f64> = (1..=24).map(|k| 0.01 * k as f64).collect();
    let rows = family_scan(&radii, 1025);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for row in &rows {
        match row.total_mass {
            Some(m) => {
                ok &= row.radius > 3.0 * m;
                worst = worst.max(3.0 * m / row.radius);
            }
            None => ok = false,
        }
    }
    report(4, ok, format!("max 3M/R = {worst:.4} over R in [0.01, 0.24]"));
}

#[test]
fn criterion_05_criticality_and_detuned_control() {
    let bg = star(0.1, 4097);
    let set = audit_set(bg.clone(), AUDIT_SIZE, AUDIT_MODES, AUDIT_SEED);
    let crit = set
        .iter()
        .map(|p| first_variation(&bg, p.rdot()).unwrap().abs() / (1.0 + sup(p.rdot().iter().copied())))
        .fold(0.0, f64::max);
    let rho: Vec<f64> = bg.rho.iter().map(|v| 1.01 * v).collect();
    let detuned = derive_metric_fields(bg.r.clone(), bg.m.clone(), rho, SolverInfo::Supplied).unwrap();
    let det: Vec<f64> = set.iter().map(|p| first_variation(&detuned, p.rdot()).unwrap().abs()).collect();
    let det_min = det.iter().copied().fold(f64::INFINITY, f64::min);
    let det_max = det.iter().copied().fold(0.0, f64::max);
    let below = det.iter().filter(|v| **v < 1e-3).count();
    report(
        5,
        crit <= 1e-6 && below == 0,
        format!(
            "max |Mdot|/(1+|rdot|) = {crit:.2e} (<= 1e-6); detuned |Mdot| in [{det_min:.2e}, {det_max:.2e}], {below}/{} below 1e-3",
            det.len()
        ),
    );
}

#[test]
fn criterion_06_positivity_and_quadratic_scaling() {
    let bg = star(0.1, 4097);
    let set = audit_set(bg, AUDIT_SIZE, AUDIT_MODES, AUDIT_SEED);
    let values: Vec<f64> = set.iter().map(second_variation).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scaling = set
        .iter()
        .zip(&values)
        .map(|(p, v)| ((second_variation(&p.scaled(2.5)) - 6.25 * v) / (6.25 * v)).abs())
        .fold(0.0, f64::max);
    report(6, min > 0.0 && scaling <= 1e-12, format!("min Mddot = {min:.4e}; scaling defect {scaling:.1e} (<= 1e-12)"));
}

#[test]
fn criterion_07_energy_equivalence() {
    let bg = star(0.1, 4097);
    let audit = run_audit(&audit_set(bg, AUDIT_SIZE, AUDIT_MODES, AUDIT_SEED), &[]).unwrap();
    let (lo, hi) = (audit.ratio_min, audit.ratio_max);
    let ok = lo >= EQUIVALENCE_LOWER && hi <= EQUIVALENCE_UPPER && EQUIVALENCE_UPPER / EQUIVALENCE_LOWER <= 100.0;
    report(
        7,
        ok,
        format!("Mddot/E_var in [{lo:.3}, {hi:.3}] within frozen [{EQUIVALENCE_LOWER}, {EQUIVALENCE_UPPER}] (C/c <= 100)"),
    );
}

#[test]
fn criterion_08_mass_aspect_estimate() {
    let bg = star(0.1, 4097);
    let audit = run_audit(&audit_set(bg, AUDIT_SIZE, AUDIT_MODES, AUDIT_SEED), &MASS_ASPECT_EPSILONS).unwrap();
    let ok = audit.mass_aspect_max.iter().all(|(_, v)| v.is_finite() && *v <= MASS_ASPECT_CONSTANT);
    report(8, ok, format!("sup ratios {:?} <= {MASS_ASPECT_CONSTANT}", audit.mass_aspect_max));
}

#[test]
fn criterion_09_mdot_formula() {
    let bg = star(0.1, 2049);
    let b = bg.particle_number;
    let delta: Vec<f64> = bg.chi.iter().map(|x| 0.01 * (PI * x / b).cos()).collect();
    let base = deformed_star(&bg, &delta, 0.0).unwrap();
    let defect = |eps: f64| {
        let s = deformed_star(&bg, &delta, eps).unwrap();
        sup((1..bg.len()).map(|i| {
            let rdot = (s.r[i] - base.r[i]) / eps;
            let mdot = (s.m[i] - base.m[i]) / eps;
            mdot + 4.0 * PI * bg.r[i].powi(2) * (bg.rho[i] - 1.0) * rdot
        }))
    };
    let (e3, e4) = (defect(1e-3), defect(1e-4));
    let order = (e3 / e4).log10();
    report(9, e4 < e3 && (0.8..=1.2).contains(&order), format!("defect {e3:.3e} -> {e4:.3e}, order {order:.3} (O(eps))"));
}

struct GaussianRun {
    band: f64,
    max_ratio: f64,
    min_ratio: f64,
    constraint: f64,
    conservation: f64,
}

fn gaussian_run(n: usize) -> GaussianRun {
    let bg = star(0.05, n);
    let coeffs = assemble_coefficients(&bg).unwrap();
    let data = gaussian_data(bg.clone(), 0.025, 0.00625).unwrap();
    let (_, rep, mut state) = evolution::evolve(&data, &coeffs, &EvolveOptions::new(50.0 * 0.05)).unwrap();
    GaussianRun {
        band: rep.band(),
        max_ratio: rep.max_ratio,
        min_ratio: rep.min_ratio,
        constraint: evolution::constraint_residual(&mut state, &bg),
        conservation: evolution::conservation_residual(&mut state, &bg),
    }
}

#[test]
fn criterion_10_and_11_energy_boundedness_and_closure() {
    let coarse = gaussian_run(2000);
    let fine = gaussian_run(3999);
    let order = (coarse.band / fine.band).log2();
    let in_band = coarse.max_ratio <= 1.02 && coarse.min_ratio >= 0.98;
    let ten = in_band && order >= 1.8;
    let o_constraint = (coarse.constraint / fine.constraint).log2();
    let o_conservation = (coarse.conservation / fine.conservation).log2();
    let eleven = o_constraint >= 1.8 && o_conservation >= 1.8;
    println!(
        "criterion 10: {} E/E(0) in [{:.9}, {:.9}], band {:.3e} -> {:.3e}, order {order:.3} (>= 1.8)",
        if ten { "PASS" } else { "FAIL" },
        coarse.min_ratio,
        coarse.max_ratio,
        coarse.band,
        fine.band
    );
    println!(
        "criterion 11: {} linearized mass residual {:.3e} -> {:.3e} (order {o_constraint:.3}), conservation law {:.3e} -> {:.3e} (order {o_conservation:.3})",
        if eleven { "PASS" } else { "FAIL" },
        coarse.constraint,
        fine.constraint,
        coarse.conservation,
        fine.conservation
    );
    assert!(ten, "criterion 10 failed");
    assert!(eleven, "criterion 11 failed");
}

/// Bisection for the first root of `sin x (x² - 2) + 2x cos x` on `(π/2, π)`.
fn leading_root() -> f64 {
    let g = |x: f64| x.sin() * (x * x - 2.0) + 2.0 * x * x.cos();
    let (mut lo, mut hi) = (PI / 2.0, PI);
    assert!(g(lo) * g(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_12_dispersion_ladder() {
    let x1 = leading_root();
    let radii = [0.02, 0.05, 0.1];
    let ladder: Vec<f64> = radii.iter().map(|&r| h0_dispersion_roots(r, 1).unwrap()[0]).collect();
    let full: Vec<f64> = radii
        .iter()
        .map(|&r| find_modes(&star(r, 2001), 1).unwrap()[0].lambda.sqrt() * r)
        .collect();
    let spread = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), x| (a.min(*x), b.max(*x)));
        hi / lo - 1.0
    };
    let root_ok = (x1 - 2.0816).abs() <= 1e-3;
    let ladder_ok = spread(&ladder) <= 0.02;
    println!("           full operator sqrt(lambda~_1) R0 = {full:.5?}, spread {:.2}%", 100.0 * spread(&full));
    report(
        12,
        root_ok && ladder_ok,
        format!(
            "x1 = {x1:.6} (2.0816 +- 1e-3: {root_ok}); sqrt(lambda_1) R0 = {ladder:.5?}, spread {:.2}% (<= 2%)",
            100.0 * spread(&ladder)
        ),
    );
}

#[test]
fn criterion_13_spectral_perturbation() {
    let radii = [0.02, 0.05, 0.1];
    let mut gaps = Vec::new();
    let mut relative = Vec::new();
    let mut distances = Vec::new();
    for &radius in &radii {
        let bg = star(radius, 2001);
        let full = &find_modes(&bg, 1).unwrap()[0];
        let lambda = (h0_dispersion_roots(radius, 1).unwrap()[0] / radius).powi(2);
        gaps.push(full.lambda - lambda);
        relative.push((full.lambda - lambda) / lambda);
        let h0 = bessel_mode(lambda, &bg.r);
        distances.push(sup(full.h.iter().zip(&h0).map(|(a, b)| a - b)));
    }
    let p_gap = slope(&radii, &gaps);
    let p_rel = slope(&radii, &relative);
    let p_h = slope(&radii, &distances);
    println!("           relative gap (lambda~-lambda)/lambda = {}, exponent {p_rel:.3}", sci(&relative));
    report(
        13,
        (1.6..=2.4).contains(&p_gap) && (1.6..=2.4).contains(&p_h),
        format!(
            "lambda~_1 - lambda_1 = {gaps:.4?}, exponent {p_gap:.3}; eigenfunction sup-distance {}, exponent {p_h:.3} (both in [1.6, 2.4])",
            sci(&distances)
        ),
    );
}

/// Relative sup error and energy band after one period of mode 1.
fn round_trip(n: usize) -> (f64, f64) {
    let bg = star(0.05, n);
    let mode = &find_modes(&bg, 1).unwrap()[0];
    let data = mode_to_initial_data(bg.clone(), mode, 1.0).unwrap();
    let coeffs = assemble_coefficients(&bg).unwrap();
    let (_, rep, state) = evolution::evolve(&data, &coeffs, &EvolveOptions::new(mode.period())).unwrap();
    let err = sup(state.r1.iter().zip(data.rdot()).map(|(a, b)| a - b)) / sup(data.rdot().iter().copied());
    (err, rep.band())
}

#[test]
fn criterion_14_periodicity_round_trip() {
    let (e1, b1) = round_trip(2000);
    let (e2, b2) = round_trip(3999);
    let ok = e1 <= 5e-3 && b1 <= 5e-3 && e2 < e1;
    report(14, ok, format!("sup error {e1:.3e} -> {e2:.3e} (<= 5e-3, improving); energy band {b1:.2e}, {b2:.2e}"));
}
