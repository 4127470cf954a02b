//! Radial oscillation spectrum: `H h = λ h` with `h(0) = 0`, `∂_{r₀}h(0) = 1`
//! and the surface relation `∂_{r₀}h = (1/∂_χ r₀)(∂_χψ₀/∂_χr₀ - 2/r₀) h`.
//!
//! `H₀ = -∂² - (2/r₀)∂ + 2/r₀²` is solved by `(3/√λ) j₁(√λ r₀)`, with `λ`
//! fixed by the dispersion relation
//! `(2 - 8πR²)(x cos x - sin x) + x² sin x = 0`, `x = √λ R`.
//! The full operator `H = -(1/a)[(k h')' + w h]` is solved by shooting.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::BackgroundProfile;
use crate::error::{Error, Result};
use crate::evolution::SurfaceCondition;
use crate::numerics::{bisect, derivative, Dopri5};
use crate::variation::Perturbation;

const SERIES_SWITCH: f64 = 0.5;

/// Spherical Bessel function `j₁(x) = sin x/x² - cos x/x`.
pub fn spherical_bessel_j1(x: f64) -> f64 {
    if x.abs() < SERIES_SWITCH {
        let x2 = x * x;
        let mut term = x / 3.0;
        let mut sum = term;
        let mut k = 0.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 5.0));
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        x.sin() / (x * x) - x.cos() / x
    }
}

/// `j₁` evaluated on the direct formula only; for the continuity check.
pub fn spherical_bessel_j1_direct(x: f64) -> f64 {
    x.sin() / (x * x) - x.cos() / x
}

/// Left side of the dispersion relation multiplied through by `x²R`.
pub fn dispersion_function(radius: f64, x: f64) -> f64 {
    (2.0 - 8.0 * PI * radius * radius) * (x * x.cos() - x.sin()) + x * x * x.sin()
}

/// The leading-order relation `sin x (x² - 2) + 2x cos x`.
pub fn leading_dispersion_function(x: f64) -> f64 {
    x.sin() * (x * x - 2.0) + 2.0 * x * x.cos()
}

const SCAN_START: f64 = 0.1;
const SCAN_STEP: f64 = 0.05;

/// First `count` positive roots `x_j` of the dispersion relation; `λ_j = (x_j/R)²`.
pub fn h0_dispersion_roots(radius: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::InvalidParameters("count must be at least 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameters("radius must be positive".into()));
    }
    let limit = (count as f64 + 2.0) * PI;
    let f = |x: f64| dispersion_function(radius, x);
    let mut roots = Vec::with_capacity(count);
    let mut lo = SCAN_START;
    let mut f_lo = f(lo);
    while roots.len() < count {
        let hi = lo + SCAN_STEP;
        if hi > limit {
            return Err(Error::BracketExhausted { found: roots.len(), requested: count, limit });
        }
        let f_hi = f(hi);
        if f_lo.signum() != f_hi.signum() {
            roots.push(bisect(|x| Ok(f(x)), lo, hi, 1e-15, 0.0)?);
        }
        lo = hi;
        f_lo = f_hi;
    }
    Ok(roots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    H0Analytic,
    HFullShooting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub lambda: f64,
    pub r: Vec<f64>,
    /// Eigenfunction on the background nodes, `h(0) = 0`, `∂_{r₀}h(0) = 1`.
    pub h: Vec<f64>,
    pub boundary_residual: f64,
    pub kind: ModeKind,
    pub radius: f64,
}

impl ModeResult {
    pub fn frequency(&self) -> f64 {
        self.lambda.sqrt()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency()
    }

    /// `∂_{r₀}h(0)`: `h/r` is even in `r`, so it is extrapolated to the
    /// center as a cubic in `r²` through the first four nodes.
    pub fn center_slope(&self) -> f64 {
        let x: Vec<f64> = self.r[1..5].iter().map(|r| r * r).collect();
        let y: Vec<f64> = (1..5).map(|i| self.h[i] / self.r[i]).collect();
        (0..4)
            .map(|i| {
                let w: f64 = (0..4).filter(|&j| j != i).map(|j| x[j] / (x[j] - x[i])).product();
                w * y[i]
            })
            .sum()
    }
}

/// `(3/√λ) j₁(√λ r₀)` on `r`.
pub fn bessel_mode(lambda: f64, r: &[f64]) -> Vec<f64> {
    let k = lambda.sqrt();
    r.iter().map(|&r| 3.0 / k * spherical_bessel_j1(k * r)).collect()
}

/// The `H₀` ladder as modes on the background grid.
pub fn h0_modes(bg: &BackgroundProfile, count: usize) -> Result<Vec<ModeResult>> {
    let radius = bg.radius;
    Ok(h0_dispersion_roots(radius, count)?
        .into_iter()
        .map(|x| {
            let lambda = (x / radius).powi(2);
            ModeResult {
                lambda,
                r: bg.r.clone(),
                h: bessel_mode(lambda, &bg.r),
                boundary_residual: dispersion_function(radius, x),
                kind: ModeKind::H0Analytic,
                radius,
            }
        })
        .collect())
}

/// Pointwise coefficients of `a ḧ = (k h')' + w h` from `(r, m, ρ, F)`.
#[derive(Debug, Clone, Copy)]
struct Pointwise {
    a: f64,
    k: f64,
    /// `dk/dr`
    dk: f64,
    w: f64,
    /// `dχ/dr₀`
    jac: f64,
    /// `G = ∂_χψ₀/∂_χr₀`
    g: f64,
    drho: f64,
    df: f64,
}

fn pointwise(r: f64, m: f64, rho: f64, f: f64) -> Pointwise {
    let q = m / r.powi(3);
    let d = 1.0 - 2.0 * q * r * r;
    let sd = d.sqrt();
    let n = (2.0 * rho - 1.0).sqrt();
    let p = q * r + 4.0 * PI * r * (rho - 1.0);
    let g = p / d;
    let drho = -(2.0 * rho - 1.0) / d * (4.0 * PI * r * (rho - 1.0) + q * r);
    let dp = 4.0 * PI * rho - 2.0 * q + 4.0 * PI * (rho - 1.0) + 4.0 * PI * r * drho;
    let dd = -8.0 * PI * r * rho + 2.0 * q * r;
    let dg = (dp * d - p * dd) / (d * d);
    let r2v = 2.0 * g * r * r * p + 2.0 * q * r * r + 4.0 * PI * r * (2.0 * rho - 1.0) * (2.0 * r - g * r * r)
        + d * (-2.0 - dg * r * r);
    let df = (8.0 * PI * r * rho - 2.0 * q * r) / d;
    let ef = f.exp();
    let jac = 4.0 * PI * r * r * n / sd;
    let k = ef * 4.0 * PI * r * r * n * sd;
    let dk = k * (2.0 / r + df + drho / (2.0 * rho - 1.0) + dd / (2.0 * d));
    Pointwise {
        a: ef * n * n * jac,
        k,
        dk,
        w: ef * 4.0 * PI * n / sd * r2v,
        jac,
        g,
        drho,
        df,
    }
}

/// `(H h, H₀ h, H₁ h)` on the grid. `h` must vanish at the center; the center
/// entries are set to zero (every term is `O(r₀)` there).
#[derive(Debug, Clone, PartialEq)]
pub struct HAction {
    pub full: Vec<f64>,
    pub leading: Vec<f64>,
    pub correction: Vec<f64>,
}

pub fn apply_h(bg: &BackgroundProfile, h: &[f64]) -> Result<HAction> {
    if h.len() != bg.len() {
        return Err(Error::GridMismatch { expected: bg.len(), found: h.len() });
    }
    let dr = bg.dr();
    let d1 = derivative(h, dr);
    let d2 = derivative(&d1, dr);
    let f = f_integral(bg);
    let len = bg.len();
    let mut out = HAction { full: vec![0.0; len], leading: vec![0.0; len], correction: vec![0.0; len] };
    for i in 1..len {
        let r = bg.r[i];
        let c = pointwise(r, bg.m[i], bg.rho[i], f[i]);
        let full = -(c.k * d2[i] + c.dk * d1[i] + c.w * h[i]) / c.a;
        let leading = -d2[i] - 2.0 / r * d1[i] + 2.0 / (r * r) * h[i];
        out.full[i] = full;
        out.leading[i] = leading;
        out.correction[i] = full - leading;
    }
    Ok(out)
}

fn f_integral(bg: &BackgroundProfile) -> Vec<f64> {
    let d = bg.lapse_factor();
    let integrand: Vec<f64> = (0..bg.len())
        .map(|i| {
            let r = bg.r[i];
            if r == 0.0 { 0.0 } else { (8.0 * PI * r * bg.rho[i] - 2.0 * bg.m[i] / (r * r)) / d[i] }
        })
        .collect();
    crate::numerics::cumulative_simpson(&integrand, bg.dr())
}

/// Shooting setup for one background.
#[derive(Debug, Clone)]
pub struct Shooter {
    radius: f64,
    rho_c: f64,
    surface: SurfaceCondition,
    nodes: Vec<f64>,
    integrator: Dopri5,
    /// Tighter pass for sampled eigenfunctions.
    fine: Dopri5,
}

/// Start of the outward integration, in units of `R`.
const START: f64 = 1e-4;
const SHOOT_RTOL: f64 = 1e-10;
const EIGENFUNCTION_RTOL: f64 = 1e-13;
/// Stand-in residual when an integration fails.
const FAILED_RESIDUAL: f64 = 1e30;

struct Shot {
    residual: f64,
    h: Vec<f64>,
}

impl Shooter {
    pub fn new(bg: &BackgroundProfile, surface: SurfaceCondition) -> Self {
        Self {
            radius: bg.radius,
            rho_c: bg.central_density(),
            surface,
            nodes: bg.r.clone(),
            integrator: Dopri5::new(SHOOT_RTOL),
            fine: Dopri5::new(EIGENFUNCTION_RTOL),
        }
    }

    /// Background `(m, ρ, F)` from its center expansion at small `r`.
    fn center_background(&self, r: f64) -> (f64, f64, f64) {
        let rc = self.rho_c;
        let q0 = 4.0 * PI / 3.0 * rc;
        let rho2 = -(2.0 * rc - 1.0) * (4.0 * PI * (rc - 1.0) + q0) / 2.0;
        let m = 4.0 * PI * (rc * r.powi(3) / 3.0 + rho2 * r.powi(5) / 5.0);
        let rho = rc + rho2 * r * r;
        let f = (8.0 * PI * rc - 2.0 * q0) * r * r / 2.0;
        (m, rho, f)
    }

    /// `h = r + c₃ r³ + c₅ r⁵` with `c₃` from the operator's expansion
    /// `k = k₀r²(1 + k₂r²)`, `w = w₀ + w₂r²`, `a = a₀r²`, and `c₅` from `H₀`.
    fn frobenius(&self, lambda: f64, r: f64) -> (f64, f64) {
        let rc = self.rho_c;
        let n0 = (2.0 * rc - 1.0).sqrt();
        let (k0, w0, a0) = (4.0 * PI * n0, -8.0 * PI * n0, 4.0 * PI * n0.powi(3));
        let (m, rho, f) = self.center_background(r);
        let c = pointwise(r, m, rho, f);
        let k2 = (c.k / (k0 * r * r) - 1.0) / (r * r);
        let w2 = (c.w - w0) / (r * r);
        let c3 = -(4.0 * k0 * k2 + w2 + lambda * a0) / (10.0 * k0);
        let c5 = lambda * lambda / 280.0;
        let h = r + c3 * r.powi(3) + c5 * r.powi(5);
        let dh = 1.0 + 3.0 * c3 * r * r + 5.0 * c5 * r.powi(4);
        (h, dh)
    }

    /// Integrates in `s = r/R` with state `(m/R³, ρ, F, h/R, k h'/(4πR²))`.
    fn shoot(&self, lambda: f64, keep: bool) -> Result<Shot> {
        let big_r = self.radius;
        let s0 = START;
        let r0 = s0 * big_r;
        let (m, rho, f) = self.center_background(r0);
        let (h, dh) = self.frobenius(lambda, r0);
        let c = pointwise(r0, m, rho, f);
        let ks = 4.0 * PI * big_r * big_r;
        let y0 = [m / big_r.powi(3), rho, f, h / big_r, c.k * dh / ks];
        let rhs = |s: f64, y: &[f64]| -> Result<Vec<f64>> {
            let r = s * big_r;
            let (m, rho) = (y[0] * big_r.powi(3), y[1]);
            if !(rho > 0.5 && 2.0 * m < r) {
                return Err(Error::Domain { r, m, rho, reason: "shooting left the admissible region" });
            }
            let c = pointwise(r, m, rho, y[2]);
            let h = y[3] * big_r;
            let p = y[4] * ks;
            Ok(vec![
                4.0 * PI * r * r * rho * big_r / big_r.powi(3),
                c.drho * big_r,
                c.df * big_r,
                p / c.k,
                -(c.w + lambda * c.a) * h * big_r / ks,
            ])
        };
        let stops: Vec<f64> = if keep {
            self.nodes.iter().skip(1).map(|r| r / big_r).filter(|s| *s > s0).collect()
        } else {
            Vec::new()
        };
        let integrator = if keep { &self.fine } else { &self.integrator };
        let (end, states) = integrator.integrate(rhs, s0, &y0, 1.0, &stops)?;
        let c = pointwise(big_r, end[0] * big_r.powi(3), end[1], end[2]);
        let h_b = end[3] * big_r;
        let dh_b = end[4] * ks / c.k;
        let alpha = c.g - 2.0 / big_r;
        let slope = match self.surface {
            SurfaceCondition::Master => c.jac * alpha,
            SurfaceCondition::PressureFree => alpha,
        };
        let residual = dh_b - slope * h_b;
        let mut out = Vec::new();
        if keep {
            let below = self.nodes.len() - 1 - states.len();
            out.push(0.0);
            for &r in self.nodes.iter().skip(1).take(below) {
                out.push(self.frobenius(lambda, r).0);
            }
            out.extend(states.iter().map(|y| y[3] * big_r));
        }
        Ok(Shot { residual, h: out })
    }

    /// Defect of the surface relation for the solution normalized at the center.
    /// Failed integrations report a large finite value.
    pub fn boundary_residual(&self, lambda: f64) -> f64 {
        match self.shoot(lambda, false) {
            Ok(s) if s.residual.is_finite() => s.residual,
            _ => FAILED_RESIDUAL,
        }
    }

    pub fn eigenfunction(&self, lambda: f64) -> Result<(Vec<f64>, f64)> {
        let s = self.shoot(lambda, true)?;
        Ok((s.h, s.residual))
    }
}

/// Surface-relation defect of the regular solution of `H h = λ h`.
pub fn shoot_eigenvalue(bg: &BackgroundProfile, lambda: f64) -> f64 {
    Shooter::new(bg, SurfaceCondition::Master).boundary_residual(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSearch {
    /// Samples per unit of `x = √λ R` in the sign scan.
    pub samples_per_unit: usize,
    pub max_refinements: usize,
    pub surface: SurfaceCondition,
}

impl Default for ModeSearch {
    fn default() -> Self {
        Self { samples_per_unit: 10, max_refinements: 3, surface: SurfaceCondition::Master }
    }
}

pub fn find_modes(bg: &BackgroundProfile, count: usize) -> Result<Vec<ModeResult>> {
    find_modes_with(bg, count, &ModeSearch::default())
}

/// Full-`H` modes by a sign scan in `x = √λ R` seeded by the `H₀` ladder,
/// followed by bisection on the surface defect.
pub fn find_modes_with(bg: &BackgroundProfile, count: usize, search: &ModeSearch) -> Result<Vec<ModeResult>> {
    if count == 0 {
        return Err(Error::InvalidParameters("count must be at least 1".into()));
    }
    let radius = bg.radius;
    let ladder = h0_dispersion_roots(radius, count)?;
    let shooter = Shooter::new(bg, search.surface);
    let residual = |x: f64| shooter.boundary_residual((x / radius).powi(2));
    // λ̃₁ is sought in [0.25, 4]·λ₁, i.e. x in [x₁/2, 2x₁]; higher modes follow the ladder.
    let lo = 0.5 * ladder[0];
    let hi = (2.0 * ladder[0]).max(ladder[count - 1] + 0.5 * PI);
    let mut per_unit = search.samples_per_unit.max(2);
    for _ in 0..=search.max_refinements {
        let samples = ((hi - lo) * per_unit as f64).ceil() as usize;
        let xs: Vec<f64> = (0..=samples).map(|i| lo + (hi - lo) * i as f64 / samples as f64).collect();
        let values: Vec<f64> = xs.par_iter().map(|&x| residual(x)).collect();
        let mut roots = Vec::new();
        for i in 0..samples {
            if roots.len() == count {
                break;
            }
            let (a, b) = (values[i], values[i + 1]);
            if a == FAILED_RESIDUAL || b == FAILED_RESIDUAL || a.signum() == b.signum() {
                continue;
            }
            roots.push(bisect(|x| Ok(residual(x)), xs[i], xs[i + 1], 1e-13 * xs[i + 1], 0.0)?);
        }
        if roots.len() == count && ladder_consistent(&roots, &ladder) {
            return roots
                .into_iter()
                .map(|x| {
                    let lambda = (x / radius).powi(2);
                    let (h, boundary_residual) = shooter.eigenfunction(lambda)?;
                    Ok(ModeResult { lambda, r: bg.r.clone(), h, boundary_residual, kind: ModeKind::HFullShooting, radius })
                })
                .collect();
        }
        per_unit *= 4;
    }
    Err(Error::MissedRoot(count))
}

/// Consecutive spacings within 50% of the `H₀` ladder's.
fn ladder_consistent(roots: &[f64], ladder: &[f64]) -> bool {
    roots.windows(2).zip(ladder.windows(2)).all(|(r, l)| {
        let (gap, reference) = (r[1] - r[0], l[1] - l[0]);
        gap > 0.0 && (gap - reference).abs() <= 0.5 * reference
    })
}

/// `∫ h (H h) 4πr₀² dr₀` by the trapezoid rule.
pub fn quadratic_form(bg: &BackgroundProfile, h: &[f64]) -> Result<f64> {
    let hh = apply_h(bg, h)?;
    let g: Vec<f64> = (0..bg.len()).map(|i| h[i] * hh.full[i] * 4.0 * PI * bg.r[i] * bg.r[i]).collect();
    Ok(crate::numerics::trapezoid(&bg.r, &g))
}

/// Regular test functions `r₀[1 + Σ z_k (cos(kπr₀/R) - 1)/k²] + b r₀³`, with
/// `∂_{r₀}h(0) = 1` and `b` chosen so the surface relation holds.
pub fn random_regular_functions(bg: &BackgroundProfile, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = bg.radius;
    let last = bg.len() - 1;
    let d = bg.lapse_factor();
    let jac = 4.0 * PI * radius * radius * bg.n[last] / d[last].sqrt();
    let slope = jac * (bg.lapse_gradient()[last] - 2.0 / radius);
    (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            let base = |r: f64| -> (f64, f64) {
                let mut v = 1.0;
                let mut dv = 0.0;
                for (k, zk) in z.iter().enumerate() {
                    let w = (k + 1) as f64 * PI / radius;
                    let c = zk / ((k + 1) as f64).powi(2);
                    v += c * ((w * r).cos() - 1.0);
                    dv -= c * w * (w * r).sin();
                }
                (r * v, v + r * dv)
            };
            let (hb, dhb) = base(radius);
            let b = (slope * hb - dhb) / (3.0 * radius * radius - slope * radius.powi(3));
            bg.r.iter().map(|&r| base(r).0 + b * r.powi(3)).collect()
        })
        .collect()
}

/// Mode `j` as evolution data: `r₁ = amplitude·h`, `∂_φ r₁ = 0` (cosine branch).
pub fn mode_to_initial_data(bg: Arc<BackgroundProfile>, mode: &ModeResult, amplitude: f64) -> Result<Perturbation> {
    if mode.h.len() != bg.len() {
        return Err(Error::GridMismatch { expected: bg.len(), found: mode.h.len() });
    }
    let r1: Vec<f64> = mode.h.iter().map(|h| amplitude * h).collect();
    let n = r1.len();
    Perturbation::new(bg, r1, vec![0.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_tov_picard, StarParameters};

    #[test]
    fn j1_values() {
        assert!((spherical_bessel_j1(PI) - 1.0 / PI).abs() < 1e-15);
        assert!((spherical_bessel_j1(1e-8) / 1e-8 - 1.0 / 3.0).abs() < 1e-15);
        let x = SERIES_SWITCH;
        assert!((spherical_bessel_j1(x - 1e-15) - spherical_bessel_j1_direct(x)).abs() < 1e-14);
    }

    #[test]
    fn leading_root() {
        let x = bisect(|x| Ok(leading_dispersion_function(x)), 0.1, PI, 1e-15, 0.0).unwrap();
        assert!((x - 2.0816).abs() < 1e-3);
        let roots = h0_dispersion_roots(1e-6, 3).unwrap();
        assert!((roots[0] - x).abs() < 1e-9);
        assert!(roots.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn r_is_in_kernel_of_h0() {
        let bg = solve_tov_picard(&StarParameters::new(0.05).with_grid(801)).unwrap();
        let h = bg.r.clone();
        let a = apply_h(&bg, &h).unwrap();
        let scale = 1.0 / (bg.radius * bg.radius);
        assert!(a.leading[5..bg.len() - 5].iter().all(|v| v.abs() < 1e-8 * scale));
    }

    #[test]
    fn mode_normalization() {
        let bg = solve_tov_picard(&StarParameters::new(0.05).with_grid(801)).unwrap();
        let modes = find_modes(&bg, 2).unwrap();
        for m in &modes {
            assert!(m.lambda > 0.0);
            assert!((m.center_slope() - 1.0).abs() < 1e-8);
            assert_eq!(m.h[0], 0.0);
        }
        assert!(modes[1].lambda > modes[0].lambda);
    }
}
