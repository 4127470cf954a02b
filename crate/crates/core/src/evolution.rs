//! Linearized radial dynamics: the master wave equation for `r₁`,
//!
//! `A ∂_φ² r₁ = ∂_χ(K ∂_χ r₁) + e^F V r₁`, with `∂_χ r₁ = α r₁` at the surface,
//!
//! its energies and the algebraic reconstruction of the other linearized fields.
//!
//! On the background's uniform `r₀` nodes the equation reads
//! `a ü = (k u')' + w u` with `a = A dχ/dr₀`, `k = K ∂_χ r₀`, `w = e^F V dχ/dr₀`.
//! The evolved unknown is the regular ratio `v = r₁/r₀`, for which
//!
//! `a r₀² v̈ = (k r₀² v')' - W v`, `W = -w r₀² - r₀ k'`,
//!
//! with `W = O(r₀⁴)`. Each node owns the cell between neighbouring midpoints
//! (half cells at the center and the surface); masses and potentials are
//! exact cell integrals of the interpolated background, flux weights sit at
//! the midpoints. The stiffness matrix is symmetric and the semi-discrete
//! energy is conserved by the leapfrog update up to `O(Δφ²)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::background::BackgroundProfile;
use crate::error::{Error, Result};
use crate::numerics::{cumulative_simpson, derivative, derivative2, derivative_nonuniform, interpolate_cubic, trapezoid};
use crate::variation::Perturbation;

/// Which relation closes the master equation at the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceCondition {
    /// `∂_χ r₁ = α r₁` with `α = ∂_χψ₀/∂_χr₀ - 2/r₀`.
    #[default]
    Master,
    /// `∂_χ r₁ = α ∂_χ r₀ r₁`, which makes `ψ₁` and `ρ₁` vanish at the surface.
    PressureFree,
}

#[derive(Debug, Clone)]
pub struct WaveCoefficients {
    pub r: Vec<f64>,
    pub dr: f64,
    /// `A = e^F (2ρ₀ - 1)`
    pub mass_coeff: Vec<f64>,
    /// `K = e^F (1 - 2m₀/r₀) / (∂_χ r₀)²`
    pub flux_coeff: Vec<f64>,
    /// `e^F V`; the center entry is set to zero.
    pub potential: Vec<f64>,
    /// `F = ∫₀^χ f dχ'`
    pub f_integral: Vec<f64>,
    pub alpha: f64,
    pub surface: SurfaceCondition,
    /// `a = A dχ/dr₀` at nodes.
    pub mass_weight: Vec<f64>,
    /// `k = K ∂_χ r₀` at the midpoints `r_{i+1/2}`.
    pub flux_weight: Vec<f64>,
    /// `w = e^F V dχ/dr₀` at nodes (center entry zero).
    pub potential_weight: Vec<f64>,
    /// Boundary flux coefficient `β = K_B α_eff`, so that `k u' = β u` at `R`.
    pub boundary_flux: f64,
    /// `∫ a r₀² dr₀` over each node's cell.
    pub cell_mass: Vec<f64>,
    /// `k r₀²` at the midpoints.
    pub ratio_flux: Vec<f64>,
    /// `∫ W dr₀` over each node's cell.
    pub cell_potential: Vec<f64>,
    /// `k_B R - β R²`
    pub boundary_weight: f64,
    /// `∂_χ r₀` at nodes (center entry infinite).
    pub drdchi: Vec<f64>,
}

struct Local {
    d: f64,
    n: f64,
    /// `r² V`
    r2v: f64,
    /// `r (log k)' - 2`
    dlogk: f64,
}

/// Pointwise fields from `q = m/r³`, `ρ` and `F` at `r > 0`.
fn local_fields(r: f64, q: f64, rho: f64) -> Local {
    let m = q * r.powi(3);
    let d = 1.0 - 2.0 * m / r;
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
    let dlogk = r * df + r * drho / (2.0 * rho - 1.0) + r * dd / (2.0 * d);
    Local { d, n, r2v, dlogk }
}

/// Background interpolated between nodes, for cell integrals.
struct Interpolant<'a> {
    h: f64,
    q: Vec<f64>,
    rho: &'a [f64],
    f: &'a [f64],
}

impl Interpolant<'_> {
    fn at(&self, r: f64) -> (Local, f64) {
        let q = interpolate_cubic(0.0, self.h, &self.q, r);
        let rho = interpolate_cubic(0.0, self.h, self.rho, r);
        let ef = interpolate_cubic(0.0, self.h, self.f, r).exp();
        (local_fields(r, q, rho), ef)
    }

    /// `(a r², W)` at `r`.
    fn densities(&self, r: f64) -> (f64, f64) {
        let (l, ef) = self.at(r);
        let base = ef * 4.0 * PI * r * r * l.n;
        let a_r2 = base * l.n * l.n / l.d.sqrt() * r * r;
        let sd = l.d.sqrt();
        let w = base * (-l.r2v / sd - sd * (2.0 + l.dlogk));
        (a_r2, w)
    }

    /// `k` at `r`.
    fn flux(&self, r: f64) -> f64 {
        let (l, ef) = self.at(r);
        ef * 4.0 * PI * r * r * l.n * l.d.sqrt()
    }

    /// Three-point Gauss-Legendre integral of `(a r², W)` over `[lo, hi]`.
    fn integrate(&self, lo: f64, hi: f64) -> (f64, f64) {
        if hi <= lo {
            return (0.0, 0.0);
        }
        const X: f64 = 0.774_596_669_241_483_4;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        [(-X, 5.0 / 9.0), (0.0, 8.0 / 9.0), (X, 5.0 / 9.0)]
            .iter()
            .fold((0.0, 0.0), |(sa, sw), &(x, wt)| {
                let (a, w) = self.densities(mid + half * x);
                (sa + wt * half * a, sw + wt * half * w)
            })
    }
}

pub fn assemble_coefficients(bg: &BackgroundProfile) -> Result<WaveCoefficients> {
    assemble_coefficients_with(bg, SurfaceCondition::Master)
}

pub fn assemble_coefficients_with(bg: &BackgroundProfile, surface: SurfaceCondition) -> Result<WaveCoefficients> {
    let len = bg.len();
    let h = bg.dr();
    if bg.r[0] != 0.0 || len < 8 {
        return Err(Error::InvalidParameters("background grid must start at the center".into()));
    }
    let d = bg.lapse_factor();
    let integrand: Vec<f64> = (0..len)
        .map(|i| {
            let r = bg.r[i];
            if r == 0.0 { 0.0 } else { (8.0 * PI * r * bg.rho[i] - 2.0 * bg.m[i] / (r * r)) / d[i] }
        })
        .collect();
    let f_integral = cumulative_simpson(&integrand, h);
    let q: Vec<f64> = (0..len)
        .map(|i| if i == 0 { 4.0 * PI / 3.0 * bg.rho[0] } else { bg.m[i] / bg.r[i].powi(3) })
        .collect();

    let mut mass_coeff = vec![0.0; len];
    let mut flux_coeff = vec![0.0; len];
    let mut potential = vec![0.0; len];
    let mut mass_weight = vec![0.0; len];
    let mut potential_weight = vec![0.0; len];
    for i in 0..len {
        let ef = f_integral[i].exp();
        let n = bg.n[i];
        mass_coeff[i] = ef * (2.0 * bg.rho[i] - 1.0);
        let r = bg.r[i];
        let jac = 4.0 * PI * r * r * n / d[i].sqrt();
        flux_coeff[i] = ef * d[i] * jac * jac;
        mass_weight[i] = mass_coeff[i] * jac;
        if i > 0 {
            let loc = local_fields(r, q[i], bg.rho[i]);
            potential[i] = ef * loc.r2v / (r * r);
            potential_weight[i] = ef * 4.0 * PI * loc.n / loc.d.sqrt() * loc.r2v;
        }
    }
    if let Some(i) = (1..len).find(|&i| !(potential[i].is_finite() && flux_coeff[i] > 0.0)) {
        return Err(Error::Domain { r: bg.r[i], m: bg.m[i], rho: bg.rho[i], reason: "singular wave coefficient" });
    }

    let interp = Interpolant { h, q, rho: &bg.rho, f: &f_integral };
    let mids: Vec<f64> = (0..len - 1).map(|i| (i as f64 + 0.5) * h).collect();
    let flux_weight: Vec<f64> = mids.iter().map(|&r| interp.flux(r)).collect();
    let ratio_flux: Vec<f64> = mids.iter().zip(&flux_weight).map(|(r, k)| k * r * r).collect();
    let last = len - 1;
    let mut cell_mass = vec![0.0; len];
    let mut cell_potential = vec![0.0; len];
    for i in 0..len {
        let lo = if i == 0 { 0.0 } else { mids[i - 1] };
        let hi = if i == last { bg.r[last] } else { mids[i] };
        let (left, right) = (interp.integrate(lo, bg.r[i]), interp.integrate(bg.r[i], hi));
        cell_mass[i] = left.0 + right.0;
        cell_potential[i] = left.1 + right.1;
    }
    if let Some(i) = (0..len).find(|&i| !(cell_mass[i] > 0.0 && cell_potential[i].is_finite())) {
        return Err(Error::Domain { r: bg.r[i], m: bg.m[i], rho: bg.rho[i], reason: "singular cell integral" });
    }

    let g_b = bg.lapse_gradient()[last];
    let radius = bg.r[last];
    let alpha = g_b - 2.0 / radius;
    let alpha_eff = match surface {
        SurfaceCondition::Master => alpha,
        SurfaceCondition::PressureFree => alpha * bg.drdchi[last],
    };
    let boundary_flux = flux_coeff[last] * alpha_eff;
    let k_b = f_integral[last].exp() * 4.0 * PI * radius * radius * bg.n[last] * d[last].sqrt();
    let boundary_weight = k_b * radius - boundary_flux * radius * radius;

    Ok(WaveCoefficients {
        r: bg.r.clone(),
        dr: h,
        mass_coeff,
        flux_coeff,
        potential,
        f_integral,
        alpha,
        surface,
        mass_weight,
        flux_weight,
        potential_weight,
        boundary_flux,
        cell_mass,
        ratio_flux,
        cell_potential,
        boundary_weight,
        drdchi: bg.drdchi.clone(),
    })
}

impl WaveCoefficients {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `-(S v)` for the ratio `v = r₁/r₀`: the cell-integrated right-hand side
    /// `(k r₀² v')' - W v`, including the surface term.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        let h = self.dr;
        let k = &self.ratio_flux;
        out[0] = k[0] * (v[1] - v[0]) / h - self.cell_potential[0] * v[0];
        for i in 1..n - 1 {
            out[i] = (k[i] * (v[i + 1] - v[i]) - k[i - 1] * (v[i] - v[i - 1])) / h - self.cell_potential[i] * v[i];
        }
        let l = n - 1;
        out[l] = -k[l - 1] * (v[l] - v[l - 1]) / h - (self.cell_potential[l] + self.boundary_weight) * v[l];
    }

    /// `∂_φ² v` for the ratio `v`.
    pub fn acceleration(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out);
        for (o, m) in out.iter_mut().zip(&self.cell_mass) {
            *o /= m;
        }
    }

    /// `vᵀ S v`.
    pub fn stiffness_form(&self, v: &[f64]) -> f64 {
        let n = self.len();
        let h = self.dr;
        let grad: f64 = (0..n - 1).map(|i| self.ratio_flux[i] * (v[i + 1] - v[i]).powi(2) / h).sum();
        let pot: f64 = (0..n).map(|i| self.cell_potential[i] * v[i] * v[i]).sum();
        grad + pot + self.boundary_weight * v[n - 1] * v[n - 1]
    }

    /// Conserved discrete energy `v̇ᵀ M v̇ + vᵀ S v` in terms of the ratio.
    pub fn energy(&self, v: &[f64], vdot: &[f64]) -> f64 {
        let kin: f64 = self.cell_mass.iter().zip(vdot).map(|(m, x)| m * x * x).sum();
        kin + self.stiffness_form(v)
    }

    /// `min sqrt(a/k) Δr₀` over cell midpoints; the step for `cfl = 1`.
    pub fn cfl_unit(&self) -> f64 {
        let h = self.dr;
        (0..self.len() - 1)
            .map(|i| {
                let a = 0.5 * (self.mass_weight[i] + self.mass_weight[i + 1]);
                (a / self.flux_weight[i]).sqrt() * h
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_stable_dt(&self) -> f64 {
        MAX_CFL * self.cfl_unit()
    }
}

pub const MAX_CFL: f64 = 0.5;
pub const DEFAULT_CFL: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedFields {
    pub rho1: Vec<f64>,
    pub n1: Vec<f64>,
    pub psi1: Vec<f64>,
    pub omega1: Vec<f64>,
    pub m1: Vec<f64>,
}

/// Evolved data. `ratio = r₁/r₀` is the primary unknown; `r1` and `r1dot`
/// are kept in step with it.
#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub phi: f64,
    pub ratio: Vec<f64>,
    pub ratio_dot: Vec<f64>,
    pub r1: Vec<f64>,
    pub r1dot: Vec<f64>,
    r: Vec<f64>,
    cache: Option<LinearizedFields>,
}

/// `u/r` on a uniform grid from 0, with the center value `u'(0)`.
fn to_ratio(r: &[f64], u: &[f64]) -> Vec<f64> {
    let slope = derivative(u, r[1] - r[0])[0];
    u.iter().zip(r).map(|(u, r)| if *r == 0.0 { slope } else { u / r }).collect()
}

impl EvolutionState {
    pub fn new(initial: &Perturbation) -> Self {
        let r = initial.background().r.clone();
        let ratio = to_ratio(&r, initial.rdot());
        let ratio_dot = to_ratio(&r, initial.rdot_phi());
        Self::from_ratio(r, ratio, ratio_dot)
    }

    pub fn from_ratio(r: Vec<f64>, ratio: Vec<f64>, ratio_dot: Vec<f64>) -> Self {
        let mut s = Self {
            phi: 0.0,
            r1: vec![0.0; r.len()],
            r1dot: vec![0.0; r.len()],
            ratio,
            ratio_dot,
            r,
            cache: None,
        };
        s.sync();
        s
    }

    pub fn zero(r: &[f64]) -> Self {
        Self::from_ratio(r.to_vec(), vec![0.0; r.len()], vec![0.0; r.len()])
    }

    fn sync(&mut self) {
        for i in 0..self.r.len() {
            self.r1[i] = self.r[i] * self.ratio[i];
            self.r1dot[i] = self.r[i] * self.ratio_dot[i];
        }
        self.cache = None;
    }

    /// Reconstructed fields, computed on first use after each step.
    pub fn fields(&mut self, bg: &BackgroundProfile) -> &LinearizedFields {
        if self.cache.is_none() {
            self.cache = Some(reconstruct_fields(&self.r1, &self.ratio, bg));
        }
        self.cache.as_ref().expect("cache filled above")
    }

    pub fn has_cached_fields(&self) -> bool {
        self.cache.is_some()
    }

    pub fn energy(&self, coeffs: &WaveCoefficients) -> f64 {
        coeffs.energy(&self.ratio, &self.ratio_dot)
    }
}

/// One velocity-Verlet step. Rejects steps above the stability bound.
pub fn step(state: &mut EvolutionState, coeffs: &WaveCoefficients, dt: f64) -> Result<()> {
    let dt_max = coeffs.max_stable_dt();
    if dt.abs() > dt_max {
        return Err(Error::Cfl { dt, dt_max });
    }
    let mut acc = vec![0.0; coeffs.len()];
    coeffs.acceleration(&state.ratio, &mut acc);
    verlet(state, coeffs, dt, &mut acc);
    Ok(())
}

fn verlet(state: &mut EvolutionState, coeffs: &WaveCoefficients, dt: f64, acc: &mut [f64]) {
    for i in 0..coeffs.len() {
        state.ratio_dot[i] += 0.5 * dt * acc[i];
        state.ratio[i] += dt * state.ratio_dot[i];
    }
    coeffs.acceleration(&state.ratio, acc);
    for i in 0..coeffs.len() {
        state.ratio_dot[i] += 0.5 * dt * acc[i];
    }
    state.phi += dt;
    state.sync();
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Final time (absolute, not in units of R).
    pub t_final: f64,
    pub cfl: f64,
    /// Steps between recorded samples; 0 records only the endpoints.
    pub output_every: usize,
    /// Steps between full snapshots of `(r₁, ∂_φ r₁)`; 0 keeps none. When
    /// nonzero, the first and last states are always kept.
    pub snapshot_every: usize,
}

impl EvolveOptions {
    pub fn new(t_final: f64) -> Self {
        Self { t_final, cfl: DEFAULT_CFL, output_every: 0, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub phi: f64,
    /// Conserved discrete energy.
    pub e: f64,
    /// `∫ r₁²/r₀² + (∂_φ r₁)² + r₀⁴(∂_χ r₁)² dχ + R³ r₁(B)²`.
    pub e_plain: f64,
    pub e1: f64,
    pub e2: f64,
    pub constraint_residual: f64,
    pub conservation_residual: f64,
    /// `sup r₀^{-3/2} |m₁|`
    pub mass_aspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub samples: Vec<EnergySample>,
    pub e0: f64,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub plain_max_ratio: f64,
    pub dt: f64,
    pub steps: usize,
}

impl EnergyReport {
    /// `max |E/E₀ - 1|` over all recorded samples.
    pub fn band(&self) -> f64 {
        (self.max_ratio - 1.0).abs().max((1.0 - self.min_ratio).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub phi: f64,
    pub r1: Vec<f64>,
    pub r1dot: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

/// Integrates from `initial` to `options.t_final`. The energy is monitored
/// every step; growth beyond 100 E(0) aborts the run.
pub fn evolve(
    initial: &Perturbation,
    coeffs: &WaveCoefficients,
    options: &EvolveOptions,
) -> Result<(Trajectory, EnergyReport, EvolutionState)> {
    let bg = initial.background().as_ref();
    if coeffs.len() != bg.len() {
        return Err(Error::GridMismatch { expected: bg.len(), found: coeffs.len() });
    }
    if !(options.cfl > 0.0 && options.cfl <= MAX_CFL) {
        return Err(Error::InvalidParameters(format!("cfl must lie in (0, {MAX_CFL}]")));
    }
    if !(options.t_final >= 0.0) {
        return Err(Error::InvalidParameters("final time must be non-negative".into()));
    }
    let dt_target = options.cfl * coeffs.cfl_unit();
    let steps = (options.t_final / dt_target).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { options.t_final / steps as f64 };

    let mut state = EvolutionState::new(initial);
    let mut traj = Trajectory::default();
    let mut samples = Vec::new();
    let e0 = state.energy(coeffs);
    let snap = |state: &EvolutionState, traj: &mut Trajectory| {
        traj.snapshots.push(Snapshot { phi: state.phi, r1: state.r1.clone(), r1dot: state.r1dot.clone() });
    };
    samples.push(sample(&state, bg, coeffs));
    if options.snapshot_every > 0 {
        snap(&state, &mut traj);
    }
    let mut acc = vec![0.0; coeffs.len()];
    coeffs.acceleration(&state.ratio, &mut acc);
    let (mut emax, mut emin) = (e0, e0);
    for k in 1..=steps {
        verlet(&mut state, coeffs, dt, &mut acc);
        let e = state.energy(coeffs);
        emax = emax.max(e);
        emin = emin.min(e);
        if e > 100.0 * e0 && e0 > 0.0 || !e.is_finite() {
            return Err(Error::Instability { phi: state.phi, ratio: e / e0 });
        }
        if (options.output_every > 0 && k % options.output_every == 0) || k == steps {
            samples.push(sample(&state, bg, coeffs));
        }
        if options.snapshot_every > 0 && (k % options.snapshot_every == 0 || k == steps) {
            snap(&state, &mut traj);
        }
    }
    let ratio = |v: f64| if e0 > 0.0 { v / e0 } else { 1.0 };
    let p0 = samples[0].e_plain;
    let plain_max = samples.iter().map(|s| s.e_plain).fold(0.0, f64::max);
    let report = EnergyReport {
        e0,
        max_ratio: ratio(emax),
        min_ratio: ratio(emin),
        plain_max_ratio: if p0 > 0.0 { plain_max / p0 } else { 1.0 },
        samples,
        dt,
        steps,
    };
    Ok((traj, report, state))
}

fn sample(state: &EvolutionState, bg: &BackgroundProfile, coeffs: &WaveCoefficients) -> EnergySample {
    let fields = reconstruct_fields(&state.r1, &state.ratio, bg);
    let (e1, e2) = higher_energies(bg, coeffs, state);
    let mass_aspect = (1..bg.len())
        .map(|i| fields.m1[i].abs() / bg.r[i].powf(1.5))
        .fold(0.0, f64::max);
    EnergySample {
        phi: state.phi,
        e: state.energy(coeffs),
        e_plain: plain_energy(bg, &state.r1, &state.r1dot),
        e1,
        e2,
        constraint_residual: linm_residual(&state.r1, &fields, bg),
        conservation_residual: conslaw_residual(&state.r1, &fields, bg),
        mass_aspect,
    }
}

/// `∫ r₁²/r₀² + (∂_φ r₁)² + r₀⁴ (∂_χ r₁)² dχ + R³ r₁(B)²` by the trapezoid rule in `r₀`.
pub fn plain_energy(bg: &BackgroundProfile, u: &[f64], v: &[f64]) -> f64 {
    let h = bg.dr();
    let du = derivative2(u, h);
    let d = bg.lapse_factor();
    let g: Vec<f64> = (0..bg.len())
        .map(|i| {
            let (r, n, sd) = (bg.r[i], bg.n[i], d[i].sqrt());
            let jac = 4.0 * PI * r * r * n / sd;
            4.0 * PI * n / sd * u[i] * u[i] + jac * v[i] * v[i] + r * r * sd / (4.0 * PI * n) * du[i] * du[i]
        })
        .collect();
    let last = bg.len() - 1;
    trapezoid(&bg.r, &g) + bg.radius.powi(3) * u[last] * u[last]
}

/// `Σ_{j₁+j₂≤i} ∫ r₀^{6j₂-2} (∂_φ^{j₁} ∂_χ^{j₂} r₁)² dχ` for `i = 1, 2`.
pub fn higher_energies(bg: &BackgroundProfile, coeffs: &WaveCoefficients, state: &EvolutionState) -> (f64, f64) {
    let len = bg.len();
    let h = bg.dr();
    let d = bg.lapse_factor();
    let (u, v) = (&state.r1, &state.r1dot);
    let mut acc = vec![0.0; len];
    coeffs.acceleration(&state.ratio, &mut acc);
    for (a, r) in acc.iter_mut().zip(&bg.r) {
        *a *= r;
    }
    let du = derivative2(u, h);
    let dv = derivative2(v, h);
    // ∂_χ r₁ on nodes 1.., then its radial derivative for ∂_χ² r₁
    let chi_u: Vec<f64> = (1..len).map(|i| bg.drdchi[i] * du[i]).collect();
    let dchi_u = derivative2(&chi_u, h);
    let mut first = vec![0.0; len];
    let mut second = vec![0.0; len];
    for i in 1..len {
        let (r, n, sd) = (bg.r[i], bg.n[i], d[i].sqrt());
        let jac = 4.0 * PI * r * r * n / sd;
        let w0 = 4.0 * PI * n / sd; // r^{-2} dχ/dr
        let cr = bg.drdchi[i];
        let t00 = w0 * u[i] * u[i];
        let t10 = w0 * v[i] * v[i];
        let t01 = r.powi(4) * cr * du[i] * du[i];
        let t20 = w0 * acc[i] * acc[i];
        let t11 = r.powi(4) * cr * dv[i] * dv[i];
        let uxx = cr * dchi_u[i - 1];
        let t02 = r.powi(10) * jac * uxx * uxx;
        first[i] = t00 + t10 + t01;
        second[i] = first[i] + t20 + t11 + t02;
    }
    (trapezoid(&bg.r, &first), trapezoid(&bg.r, &second))
}

fn reconstruct_fields(r1: &[f64], ratio: &[f64], bg: &BackgroundProfile) -> LinearizedFields {
    let len = bg.len();
    let dchi_r1 = derivative_nonuniform(&bg.chi, r1);
    let dchi_r0 = derivative_nonuniform(&bg.chi, &bg.r);
    let dchi_psi0 = derivative_nonuniform(&bg.chi, &bg.psi);
    let mut f = LinearizedFields {
        rho1: vec![0.0; len],
        n1: vec![0.0; len],
        psi1: vec![0.0; len],
        omega1: vec![0.0; len],
        m1: vec![0.0; len],
    };
    for i in 0..len {
        let (q1, gq, ratio) = if i == 0 {
            (ratio[0], 0.0, ratio[0])
        } else {
            (dchi_r1[i] / dchi_r0[i], dchi_psi0[i] / dchi_r0[i], ratio[i])
        };
        let psi1 = 2.0 * ratio - gq * r1[i] + q1;
        let rho1 = -psi1 * (2.0 * bg.rho[i] - 1.0);
        f.psi1[i] = psi1;
        f.omega1[i] = q1 - gq * r1[i];
        f.rho1[i] = rho1;
        f.n1[i] = rho1 / bg.n[i];
        f.m1[i] = -4.0 * PI * bg.r[i] * bg.r[i] * bg.p[i] * r1[i];
    }
    f
}

/// `(ρ₁, n₁, ψ₁, ω₁, m₁)` from `r₁`, with `χ`-derivatives taken as quotients
/// of three-point differences on the (non-uniform) `χ` nodes.
pub fn reconstruct(state: &mut EvolutionState, bg: &BackgroundProfile) -> LinearizedFields {
    state.fields(bg).clone()
}

fn linm_residual(r1: &[f64], f: &LinearizedFields, bg: &BackgroundProfile) -> f64 {
    let dr1 = derivative2(r1, bg.dr());
    (1..bg.len())
        .map(|i| {
            let r = bg.r[i];
            let d = 1.0 - 2.0 * bg.m[i] / r;
            (-f.m1[i] / r + bg.m[i] / (r * r) * r1[i] + d * f.omega1[i] - d * dr1[i]).abs()
        })
        .fold(0.0, f64::max)
}

fn conslaw_residual(r1: &[f64], f: &LinearizedFields, bg: &BackgroundProfile) -> f64 {
    let dr1 = derivative2(r1, bg.dr());
    let g = bg.lapse_gradient();
    (1..bg.len())
        .map(|i| {
            let omega = dr1[i] - g[i] * r1[i];
            (2.0 * r1[i] / bg.r[i] - f.psi1[i] + omega).abs()
        })
        .fold(0.0, f64::max)
}

/// Sup-norm defect of the linearized mass equation, comparing the
/// reconstructed `ω₁` with a uniform-grid difference of `r₁`.
pub fn constraint_residual(state: &mut EvolutionState, bg: &BackgroundProfile) -> f64 {
    let r1 = state.r1.clone();
    let f = state.fields(bg);
    linm_residual(&r1, f, bg)
}

/// Sup-norm defect of `2r₁/r₀ - ψ₁ + ω₁ = 0` with `ω₁` taken from the
/// linearized mass equation.
pub fn conservation_residual(state: &mut EvolutionState, bg: &BackgroundProfile) -> f64 {
    let r1 = state.r1.clone();
    let f = state.fields(bg);
    conslaw_residual(&r1, f, bg)
}

/// Smooth step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, infinitely differentiable.
fn smooth_step(x: f64) -> f64 {
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    f(x) / (f(x) + f(1.0 - x))
}

/// `r₁ = r₀ [exp(-((r₀ - c)/σ)²) + exp(-((r₀ + c)/σ)²)] τ(r₀)` at rest.
///
/// The mirrored term keeps `r₁/r₀` even in `r₀`; the taper `τ` falls smoothly
/// from 1 at `0.9R` to 0 at `R`, so the data meet the surface condition to all
/// orders. Without it the Gaussian tail at `R` launches a weak discontinuity
/// that focuses at the center.
pub fn gaussian_data(bg: std::sync::Arc<BackgroundProfile>, center: f64, width: f64) -> Result<Perturbation> {
    if !(width > 0.0) {
        return Err(Error::InvalidParameters("gaussian width must be positive".into()));
    }
    let radius = bg.radius;
    let r1: Vec<f64> = bg
        .r
        .iter()
        .map(|&r| {
            let bump = (-((r - center) / width).powi(2)).exp() + (-((r + center) / width).powi(2)).exp();
            r * bump * smooth_step((radius - r) / (0.1 * radius))
        })
        .collect();
    let n = r1.len();
    Perturbation::new(bg, r1, vec![0.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{solve_tov_picard, StarParameters};
    use std::sync::Arc;

    fn star(radius: f64, n: usize) -> Arc<BackgroundProfile> {
        Arc::new(solve_tov_picard(&StarParameters::new(radius).with_grid(n)).unwrap())
    }

    #[test]
    fn coefficient_signs() {
        let bg = star(0.05, 801);
        let c = assemble_coefficients(&bg).unwrap();
        assert!(c.alpha < 0.0);
        assert!(c.mass_coeff.iter().all(|a| *a >= 1.0));
        assert!(c.flux_coeff[1..].iter().all(|k| *k > 0.0));
        assert!(c.boundary_flux < 0.0);
        assert!(c.f_integral.iter().all(|f| f.is_finite() && *f >= 0.0));
        // r₀² V → -2 at the center
        assert!((c.potential[1] * bg.r[1].powi(2) + 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_state_stays_zero() {
        let bg = star(0.05, 201);
        let c = assemble_coefficients(&bg).unwrap();
        let mut s = EvolutionState::zero(&bg.r);
        for _ in 0..10 {
            step(&mut s, &c, 0.3 * c.cfl_unit()).unwrap();
        }
        assert!(s.r1.iter().chain(&s.r1dot).all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_violation_rejected() {
        let bg = star(0.05, 201);
        let c = assemble_coefficients(&bg).unwrap();
        let mut s = EvolutionState::zero(&bg.r);
        assert!(matches!(step(&mut s, &c, c.cfl_unit()), Err(Error::Cfl { .. })));
    }

    #[test]
    fn forward_backward_is_identity() {
        let bg = star(0.05, 401);
        let c = assemble_coefficients(&bg).unwrap();
        let p = gaussian_data(bg.clone(), 0.025, 0.008).unwrap();
        let mut s = EvolutionState::new(&p);
        let dt = 0.4 * c.cfl_unit();
        step(&mut s, &c, dt).unwrap();
        step(&mut s, &c, -dt).unwrap();
        for (a, b) in s.r1.iter().zip(p.rdot()) {
            assert!((a - b).abs() < 1e-14 * 0.05);
        }
        assert!(s.r1dot.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn reconstruction_of_zero_is_zero() {
        let bg = star(0.05, 201);
        let mut s = EvolutionState::zero(&bg.r);
        let f = reconstruct(&mut s, &bg);
        assert!(f.psi1.iter().chain(&f.rho1).chain(&f.m1).all(|v| *v == 0.0));
        assert_eq!(constraint_residual(&mut s, &bg), 0.0);
    }
}
