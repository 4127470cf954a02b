use std::sync::Arc;

use hardstar::background::{solve_tov_picard, BackgroundProfile, StarParameters};
use hardstar::evolution::{
    assemble_coefficients, assemble_coefficients_with, evolve, gaussian_data, EvolutionState, EvolveOptions,
    SurfaceCondition,
};
use hardstar::variation::{second_variation, Perturbation};

fn star(radius: f64, n: usize) -> Arc<BackgroundProfile> {
    Arc::new(solve_tov_picard(&StarParameters::new(radius).with_grid(n)).unwrap())
}

/// Relative spread of `M̈` over the snapshots, and the worst `|ψ₁(B)| / sup|ψ₁|`.
fn run(n: usize, surface: SurfaceCondition) -> (f64, f64) {
    let radius = 0.05;
    let bg = star(radius, n);
    let data = gaussian_data(bg.clone(), 0.5 * radius, 0.125 * radius).unwrap();
    let coeffs = assemble_coefficients_with(&bg, surface).unwrap();
    let mut options = EvolveOptions::new(5.0 * radius);
    options.snapshot_every = 50;
    let (traj, _, _) = evolve(&data, &coeffs, &options).unwrap();
    let mut values = Vec::new();
    let mut psi_b: f64 = 0.0;
    for s in &traj.snapshots {
        let p = Perturbation::new(bg.clone(), s.r1.clone(), s.r1dot.clone()).unwrap();
        values.push(second_variation(&p));
        let mut state = EvolutionState::new(&p);
        let psi = &state.fields(&bg).psi1;
        let sup = psi.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        psi_b = psi_b.max(psi[psi.len() - 1].abs() / sup);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi / lo - 1.0, psi_b)
}

#[test]
fn pressure_free_surface_conserves_second_variation() {
    let (spread1, psi1) = run(1001, SurfaceCondition::PressureFree);
    let (spread2, psi2) = run(2001, SurfaceCondition::PressureFree);
    assert!(spread1 < 1e-4 && psi1 < 1e-4, "{spread1:e} {psi1:e}");
    assert!((spread1 / spread2).log2() >= 1.8, "{spread1:e} -> {spread2:e}");
    assert!((psi1 / psi2).log2() >= 1.5, "{psi1:e} -> {psi2:e}");
}

#[test]
fn master_surface_does_not_pin_the_surface_lapse() {
    let (spread, psi) = run(1001, SurfaceCondition::Master);
    assert!(spread > 1e-2 && psi > 1e-2, "{spread:e} {psi:e}");
}

#[test]
fn profile_file_round_trip() {
    let bg = star(0.08, 257);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.csv");
    bg.write_csv(std::fs::File::create(&path).unwrap(), Some("test")).unwrap();
    let back = BackgroundProfile::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.r, bg.r);
    assert_eq!(back.m, bg.m);
    assert_eq!(back.rho, bg.rho);
    let coeffs = assemble_coefficients(&back).unwrap();
    assert_eq!(coeffs.len(), bg.len());
}
