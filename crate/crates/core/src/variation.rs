//! Mass functional at fixed particle number, its first and second variations,
//! the comparison energy and the mass-aspect estimate.
//!
//! Integrals over χ are evaluated in the radial label `r₀` of the background,
//! `∫ g dχ = ∫ g (dχ/dr₀) dr₀`, which removes the center singularities of the
//! χ-form integrands analytically.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::BackgroundProfile;
use crate::error::{Error, Result};
use crate::numerics::{cumulative_simpson, derivative, interpolate_cubic, simpson, sup_norm};

/// A variation `(ṙ, ∂_φ ṙ)` sampled on the nodes of a background.
#[derive(Debug, Clone)]
pub struct Perturbation {
    background: Arc<BackgroundProfile>,
    rdot: Vec<f64>,
    rdot_phi: Vec<f64>,
}

impl Perturbation {
    pub fn new(background: Arc<BackgroundProfile>, rdot: Vec<f64>, rdot_phi: Vec<f64>) -> Result<Self> {
        let n = background.len();
        for v in [&rdot, &rdot_phi] {
            if v.len() != n {
                return Err(Error::GridMismatch { expected: n, found: v.len() });
            }
            let scale = sup_norm(v).max(1.0);
            if v[0].abs() > 1e-12 * scale {
                return Err(Error::CenterNotPinned(v[0]));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse("perturbation contains non-finite samples".into()));
            }
        }
        Ok(Self { background, rdot, rdot_phi })
    }

    /// Samples `ṙ = f(χ)` and `∂_φ ṙ = g(χ)` at the background nodes.
    pub fn from_chi_fn<F, G>(background: Arc<BackgroundProfile>, f: F, g: G) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        let rdot = background.chi.iter().map(|&c| f(c)).collect();
        let rdot_phi = background.chi.iter().map(|&c| g(c)).collect();
        Self::new(background, rdot, rdot_phi)
    }

    pub fn zero(background: Arc<BackgroundProfile>) -> Self {
        let n = background.len();
        Self { background, rdot: vec![0.0; n], rdot_phi: vec![0.0; n] }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            background: self.background.clone(),
            rdot: self.rdot.iter().map(|v| a * v).collect(),
            rdot_phi: self.rdot_phi.iter().map(|v| a * v).collect(),
        }
    }

    pub fn background(&self) -> &Arc<BackgroundProfile> {
        &self.background
    }

    pub fn rdot(&self) -> &[f64] {
        &self.rdot
    }

    pub fn rdot_phi(&self) -> &[f64] {
        &self.rdot_phi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub m_dot: f64,
    pub m_ddot: f64,
    pub e_var: f64,
    pub mdot: Vec<f64>,
    pub epsilon: f64,
    pub mass_aspect_bound_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassAspectReport {
    pub epsilon: f64,
    /// `(m/r^{1+ε})˙` at each node.
    pub values: Vec<f64>,
    /// `sup |(m/r^{1+ε})˙| / (r₀^{1/2-ε} M̈)`.
    pub ratio: f64,
}

/// Background quantities shared by the variational integrands.
struct Weights {
    h: f64,
    d: Vec<f64>,
    nsq: Vec<f64>,
    /// `m/r² + 4πr(ρ-1)`
    pgrad: Vec<f64>,
    /// `e^{I}` with `I = ∫ dχ / (4π r³ ∂_χ r)`
    efac: Vec<f64>,
    efac_b: f64,
}

impl Weights {
    fn new(bg: &BackgroundProfile) -> Self {
        let len = bg.len();
        let h = bg.dr();
        let d = bg.lapse_factor();
        let nsq: Vec<f64> = bg.n.iter().map(|v| v * v).collect();
        let pgrad: Vec<f64> = (0..len)
            .map(|i| {
                let r = bg.r[i];
                if r == 0.0 { 0.0 } else { bg.m[i] / (r * r) + 4.0 * PI * r * bg.p[i] }
            })
            .collect();
        let di: Vec<f64> = (0..len).map(|i| 4.0 * PI * bg.r[i] * nsq[i] / d[i]).collect();
        let expo = cumulative_simpson(&di, h);
        let efac: Vec<f64> = expo.iter().map(|v| v.exp()).collect();
        let efac_b = efac[len - 1];
        Self { h, d, nsq, pgrad, efac, efac_b }
    }
}

fn check_len(bg: &BackgroundProfile, v: &[f64]) -> Result<()> {
    if v.len() != bg.len() {
        return Err(Error::GridMismatch { expected: bg.len(), found: v.len() });
    }
    Ok(())
}

/// `M = ∫ ρ 4πr² ∂_χ r dχ`, evaluated as a Stieltjes sum in `4πr³/3`.
pub fn mass_functional(r: &[f64], rho: &[f64]) -> Result<f64> {
    if r.len() != rho.len() {
        return Err(Error::GridMismatch { expected: r.len(), found: rho.len() });
    }
    let mut total = 0.0;
    for i in 1..r.len() {
        if !(r[i] > r[i - 1]) {
            return Err(Error::ShellCrossing(i));
        }
        let dv = 4.0 * PI / 3.0 * (r[i].powi(3) - r[i - 1].powi(3));
        total += 0.5 * (rho[i] + rho[i - 1]) * dv;
    }
    Ok(total)
}

/// `ṁ = -4π r₀² (ρ₀ - 1) ṙ`.
pub fn linearized_mass(bg: &BackgroundProfile, rdot: &[f64]) -> Vec<f64> {
    (0..bg.len())
        .map(|i| -4.0 * PI * bg.r[i] * bg.r[i] * bg.p[i] * rdot[i])
        .collect()
}

/// First variation of the total mass along `ṙ`.
pub fn first_variation(bg: &BackgroundProfile, rdot: &[f64]) -> Result<f64> {
    check_len(bg, rdot)?;
    if rdot[0].abs() > 1e-12 * sup_norm(rdot).max(1.0) {
        return Err(Error::CenterNotPinned(rdot[0]));
    }
    let w = Weights::new(bg);
    let drho = derivative(&bg.rho, w.h);
    let len = bg.len();
    let integrand: Vec<f64> = (0..len)
        .map(|i| {
            let r = bg.r[i];
            if r == 0.0 {
                return 0.0;
            }
            let (m, rho) = (bg.m[i], bg.rho[i]);
            let g = w.nsq[i] / w.d[i];
            let q = 8.0 * PI * r * (2.0 * rho - 1.0)
                + (-2.0 + 5.0 * m / r) * 4.0 * PI * r * g
                + 4.0 * PI * r * r * drho[i]
                + 16.0 * PI * PI * r.powi(3) * (rho - 1.0) * g;
            q * rdot[i] * w.efac[i]
        })
        .collect();
    let last = len - 1;
    let boundary = 4.0 * PI * bg.r[last].powi(2) * bg.p[last] * rdot[last];
    Ok(simpson(&integrand, w.h) / w.efac_b - boundary)
}

fn second_variation_parts(p: &Perturbation) -> (f64, f64) {
    let bg = p.background.as_ref();
    let w = Weights::new(bg);
    let u = &p.rdot;
    let du = derivative(u, w.h);
    let mut potential = vec![0.0; bg.len()];
    let mut kinetic = vec![0.0; bg.len()];
    for i in 0..bg.len() {
        let (r, rho) = (bg.r[i], bg.rho[i]);
        let (nsq, d, pg) = (w.nsq[i], w.d[i], w.pgrad[i]);
        let (v, dv) = (u[i], du[i]);
        let t1 = 8.0 * PI * rho * v * v;
        let t2 = 16.0 * PI * r * rho * v * dv;
        let t3 = -6.0 * pg * 4.0 * PI * r * nsq / d * v * v;
        let t4 = 8.0 * PI * nsq * v * v;
        let t5 = -2.0 * pg * 4.0 * PI * r * r * nsq / d * v * dv;
        let t6 = 4.0 * PI * r * r * nsq * dv * dv;
        potential[i] = (t1 + t2 + t3 + t4 + t5 + t6) * w.efac[i];
        kinetic[i] = 4.0 * PI * r * r * nsq * nsq / d * p.rdot_phi[i].powi(2) * w.efac[i];
    }
    (simpson(&potential, w.h) / w.efac_b, simpson(&kinetic, w.h) / w.efac_b)
}

/// Second variation `M̈` of the mass at fixed particle number.
pub fn second_variation(p: &Perturbation) -> f64 {
    let (a, b) = second_variation_parts(p);
    a + b
}

/// Kinetic part of [`second_variation`] alone.
pub fn second_variation_kinetic(p: &Perturbation) -> f64 {
    second_variation_parts(p).1
}

/// `∫ ṙ²/r₀² + r₀⁴ (∂_χ ṙ)² + (∂_φ ṙ)² dχ`.
pub fn variation_energy(p: &Perturbation) -> f64 {
    let bg = p.background.as_ref();
    let h = bg.dr();
    let d = bg.lapse_factor();
    let du = derivative(&p.rdot, h);
    let integrand: Vec<f64> = (0..bg.len())
        .map(|i| {
            let (r, n, sd) = (bg.r[i], bg.n[i], d[i].sqrt());
            4.0 * PI * n / sd * p.rdot[i].powi(2)
                + r * r * sd / (4.0 * PI * n) * du[i].powi(2)
                + 4.0 * PI * r * r * n / sd * p.rdot_phi[i].powi(2)
        })
        .collect();
    simpson(&integrand, h)
}

/// Pointwise `(m/r^{1+ε})˙` and its sup ratio against `r₀^{1/2-ε} M̈`.
pub fn mass_aspect_variation(p: &Perturbation, epsilon: f64) -> Result<MassAspectReport> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::EpsilonOutOfRange(epsilon));
    }
    let bg = p.background.as_ref();
    let values: Vec<f64> = (0..bg.len())
        .map(|i| {
            let r = bg.r[i];
            if r == 0.0 {
                return 0.0;
            }
            let v = p.rdot[i];
            -4.0 * PI * r.powf(1.0 - epsilon) * bg.p[i] * v
                - (1.0 + epsilon) * bg.m[i] / r.powf(2.0 + epsilon) * v
        })
        .collect();
    if values.iter().all(|v| *v == 0.0) {
        return Ok(MassAspectReport { epsilon, values, ratio: 0.0 });
    }
    let mdd = second_variation(p);
    if !(mdd > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "mass-aspect ratio needs a positive second variation, got {mdd:e}"
        )));
    }
    let ratio = (1..bg.len())
        .map(|i| values[i].abs() / (bg.r[i].powf(0.5 - epsilon) * mdd))
        .fold(0.0, f64::max);
    Ok(MassAspectReport { epsilon, values, ratio })
}

pub fn report(p: &Perturbation, epsilon: f64) -> Result<VariationReport> {
    let bg = p.background.as_ref();
    let aspect = mass_aspect_variation(p, epsilon)?;
    Ok(VariationReport {
        m_dot: first_variation(bg, &p.rdot)?,
        m_ddot: second_variation(p),
        e_var: variation_energy(p),
        mdot: linearized_mass(bg, &p.rdot),
        epsilon,
        mass_aspect_bound_ratio: aspect.ratio,
    })
}

/// Seeded random perturbations in the sine modes `sin((k - ½)πχ/B)`,
/// `k = 1..=modes`, with standard-normal amplitudes divided by `k²`; one
/// independent series each for `ṙ` and `∂_φ ṙ`.
pub fn audit_set(bg: Arc<BackgroundProfile>, count: usize, modes: usize, seed: u64) -> Vec<Perturbation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = bg.particle_number;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (1..=modes)
            .map(|k| {
                let z: f64 = StandardNormal.sample(rng);
                z / (k * k) as f64
            })
            .collect()
    };
    (0..count)
        .map(|_| {
            let a = draw(&mut rng);
            let c = draw(&mut rng);
            let series = |coef: &[f64], x: f64| -> f64 {
                coef.iter()
                    .enumerate()
                    .map(|(j, v)| v * ((j as f64 + 0.5) * PI * x / b).sin())
                    .sum()
            };
            Perturbation::from_chi_fn(bg.clone(), |x| series(&a, x), |x| series(&c, x))
                .expect("sine series vanish at the center")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub index: usize,
    pub m_dot: f64,
    pub m_ddot: f64,
    pub e_var: f64,
    pub ratio: f64,
    pub rdot_boundary: f64,
    /// `(ε, sup ratio)` pairs.
    pub mass_aspect: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub rows: Vec<AuditRow>,
    pub max_abs_m_dot: f64,
    pub min_m_ddot: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub mass_aspect_max: Vec<(f64, f64)>,
}

/// Evaluates every member of an audit set (in parallel, ordered results).
pub fn run_audit(set: &[Perturbation], epsilons: &[f64]) -> Result<AuditSummary> {
    let rows: Vec<AuditRow> = set
        .par_iter()
        .enumerate()
        .map(|(index, p)| -> Result<AuditRow> {
            let bg = p.background.as_ref();
            let m_dot = first_variation(bg, &p.rdot)?;
            let m_ddot = second_variation(p);
            let e_var = variation_energy(p);
            let mass_aspect = epsilons
                .iter()
                .map(|&e| mass_aspect_variation(p, e).map(|r| (e, r.ratio)))
                .collect::<Result<Vec<_>>>()?;
            Ok(AuditRow {
                index,
                m_dot,
                m_ddot,
                e_var,
                ratio: m_ddot / e_var,
                rdot_boundary: p.rdot[p.rdot.len() - 1],
                mass_aspect,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fold = |f: &dyn Fn(&AuditRow) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        rows.iter().map(f).fold(init, pick)
    };
    let mass_aspect_max = epsilons
        .iter()
        .enumerate()
        .map(|(k, &e)| (e, fold(&|r: &AuditRow| r.mass_aspect[k].1, 0.0, f64::max)))
        .collect();
    Ok(AuditSummary {
        max_abs_m_dot: fold(&|r: &AuditRow| r.m_dot.abs(), 0.0, f64::max),
        min_m_ddot: fold(&|r: &AuditRow| r.m_ddot, f64::INFINITY, f64::min),
        ratio_min: fold(&|r: &AuditRow| r.ratio, f64::INFINITY, f64::min),
        ratio_max: fold(&|r: &AuditRow| r.ratio, 0.0, f64::max),
        mass_aspect_max,
        rows,
    })
}

/// A star deformed at fixed particle number, tabulated on the background's shells.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedStar {
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Rebuilds `r(χ)` and `m(χ)` for the density `ρ₀ + λ δρ`, keeping each shell's
/// particle label `χ` fixed. The constraint relations
/// `∂_χ r³ = 3√(1-2m/r)/(4πn)` and `∂_χ m = ρ√(1-2m/r)/n` are integrated
/// outward with RK4 in the background radius.
pub fn deformed_star(bg: &BackgroundProfile, delta_rho: &[f64], lambda: f64) -> Result<DeformedStar> {
    check_len(bg, delta_rho)?;
    let h = bg.dr();
    let len = bg.len();
    let jac = bg.dchidr();
    let rho: Vec<f64> = (0..len).map(|i| bg.rho[i] + lambda * delta_rho[i]).collect();
    if let Some(i) = rho.iter().position(|v| 2.0 * v - 1.0 <= 0.0) {
        return Err(Error::Domain { r: bg.r[i], m: bg.m[i], rho: rho[i], reason: "non-positive particle density" });
    }
    let rhs = |s: f64, y: &[f64]| -> Vec<f64> {
        let (j, rh) = if (s / h - (s / h).round()).abs() < 1e-9 {
            let k = (s / h).round() as usize;
            (jac[k], rho[k])
        } else {
            (interpolate_cubic(0.0, h, &jac, s), interpolate_cubic(0.0, h, &rho, s))
        };
        let v = y[0].max(0.0);
        let r = v.cbrt();
        let d = if r > 0.0 { 1.0 - 2.0 * y[1] / r } else { 1.0 };
        let n = (2.0 * rh - 1.0).sqrt();
        let sd = d.max(0.0).sqrt();
        vec![3.0 * sd / (4.0 * PI * n) * j, rh * sd / n * j]
    };
    let mut f = rhs;
    let mut y = vec![0.0, 0.0];
    let mut r = vec![0.0; len];
    let mut m = vec![0.0; len];
    for i in 1..len {
        y = crate::numerics::rk4_step(&mut f, bg.r[i - 1], &y, h);
        r[i] = y[0].cbrt();
        m[i] = y[1];
        if !(r[i] > r[i - 1]) {
            return Err(Error::ShellCrossing(i));
        }
        if !(r[i] > 2.0 * m[i]) {
            return Err(Error::Domain { r: r[i], m: m[i], rho: rho[i], reason: "trapped shell" });
        }
    }
    Ok(DeformedStar { r, m, rho })
}

/// Three-point mass oracle against the quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondVariationCheck {
    pub lambda: f64,
    /// `(M(λ) - 2M(0) + M(-λ))/λ²` with `M = m(B)` of the deformed stars.
    pub oracle: f64,
    /// `M̈` for `ṙ = (r(λ) - r(-λ))/(2λ)`, `∂_φ ṙ = 0`.
    pub quadratic_form: f64,
}

pub fn second_variation_fd(bg: &Arc<BackgroundProfile>, delta_rho: &[f64], lambda: f64) -> Result<SecondVariationCheck> {
    let plus = deformed_star(bg, delta_rho, lambda)?;
    let minus = deformed_star(bg, delta_rho, -lambda)?;
    let base = deformed_star(bg, delta_rho, 0.0)?;
    let last = bg.len() - 1;
    let oracle = (plus.m[last] - 2.0 * base.m[last] + minus.m[last]) / (lambda * lambda);
    let rdot: Vec<f64> = plus.r.iter().zip(&minus.r).map(|(a, b)| (a - b) / (2.0 * lambda)).collect();
    let p = Perturbation::new(bg.clone(), rdot, vec![0.0; bg.len()])?;
    Ok(SecondVariationCheck { lambda, oracle, quadratic_form: second_variation(&p) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_tov_picard, StarParameters};

    fn star(radius: f64, n: usize) -> Arc<BackgroundProfile> {
        Arc::new(solve_tov_picard(&StarParameters::new(radius).with_grid(n)).unwrap())
    }

    #[test]
    fn zero_perturbation_is_zero() {
        let bg = star(0.1, 513);
        let p = Perturbation::zero(bg.clone());
        assert_eq!(second_variation(&p), 0.0);
        assert_eq!(variation_energy(&p), 0.0);
        assert_eq!(first_variation(&bg, p.rdot()).unwrap(), 0.0);
        assert!(mass_aspect_variation(&p, 0.25).unwrap().values.iter().all(|v| *v == 0.0));
        assert!(linearized_mass(&bg, p.rdot()).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_unpinned_center() {
        let bg = star(0.05, 257);
        let n = bg.len();
        let e = Perturbation::new(bg, vec![1.0; n], vec![0.0; n]).unwrap_err();
        assert!(matches!(e, Error::CenterNotPinned(_)));
    }

    #[test]
    fn rejects_bad_epsilon() {
        let bg = star(0.05, 257);
        let p = Perturbation::zero(bg);
        assert!(matches!(mass_aspect_variation(&p, 0.6), Err(Error::EpsilonOutOfRange(_))));
    }

    #[test]
    fn mass_functional_matches_background() {
        let bg = star(0.1, 4097);
        let m = mass_functional(&bg.r, &bg.rho).unwrap();
        assert!((m / bg.total_mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn mass_functional_rejects_shell_crossing() {
        let r = [0.0, 0.1, 0.05, 0.2];
        assert!(matches!(mass_functional(&r, &[1.0; 4]), Err(Error::ShellCrossing(2))));
    }

    #[test]
    fn unperturbed_deformation_reproduces_background() {
        let bg = star(0.05, 1025);
        let zero = vec![0.0; bg.len()];
        let d = deformed_star(&bg, &zero, 0.0).unwrap();
        let err = d.r.iter().zip(&bg.r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9 * bg.radius, "{err}");
    }
}
