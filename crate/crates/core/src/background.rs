//! Static hard stars: the TOV system for `p = ρ - 1` and the comoving-coordinate
//! fields derived from a solved profile.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bisect, cumulative_simpson, rk4_step};

/// Largest radius for which a regular static star can exist (`8πR²/3 < 1`).
pub fn regularity_limit() -> f64 {
    (3.0 / (8.0 * PI)).sqrt()
}

/// Largest radius accepted by the fixed-point solver.
pub fn contraction_limit() -> f64 {
    0.25 * (3.0 / (4.0 * PI)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarParameters {
    pub radius: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
}

fn default_grid_n() -> usize {
    4097
}
fn default_picard_tol() -> f64 {
    1e-12
}
fn default_picard_max_iter() -> usize {
    200
}

impl StarParameters {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            grid_n: default_grid_n(),
            picard_tol: default_picard_tol(),
            picard_max_iter: default_picard_max_iter(),
        }
    }

    pub fn with_grid(mut self, grid_n: usize) -> Self {
        self.grid_n = grid_n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius < regularity_limit()) {
            return Err(Error::InvalidParameters(format!(
                "radius must lie in (0, {:.6}), got {}",
                regularity_limit(),
                self.radius
            )));
        }
        if self.grid_n < 8 {
            return Err(Error::InvalidParameters(format!(
                "grid_n must be at least 8, got {}",
                self.grid_n
            )));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::InvalidParameters("picard_tol must be positive".into()));
        }
        if self.picard_max_iter == 0 {
            return Err(Error::InvalidParameters("picard_max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.radius, self.grid_n)
    }
}

pub fn uniform_grid(radius: f64, n: usize) -> Vec<f64> {
    let h = radius / (n - 1) as f64;
    (0..n).map(|i| i as f64 * h).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SolverInfo {
    Picard { iterations: usize, residual: f64, tolerance: f64 },
    Shooting { bisections: usize, surface_defect: f64 },
    Supplied,
}

/// Tabulated static solution on a uniform radial grid.
///
/// Node 0 is the center; `omega`, `drdchi` and `dpsidchi` are infinite there.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundProfile {
    pub radius: f64,
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub rho: Vec<f64>,
    pub p: Vec<f64>,
    pub n: Vec<f64>,
    pub psi: Vec<f64>,
    pub omega: Vec<f64>,
    pub chi: Vec<f64>,
    pub drdchi: Vec<f64>,
    pub dpsidchi: Vec<f64>,
    pub total_mass: f64,
    pub particle_number: f64,
    pub solver: SolverInfo,
}

/// Scalars written next to a profile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub radius: f64,
    pub total_mass: f64,
    pub particle_number: f64,
    pub central_density: f64,
    pub grid_n: usize,
    pub solver: SolverInfo,
}

impl BackgroundProfile {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn dr(&self) -> f64 {
        self.r[1] - self.r[0]
    }

    pub fn central_density(&self) -> f64 {
        self.rho[0]
    }

    /// `1 - 2m/r` with the center value 1.
    pub fn lapse_factor(&self) -> Vec<f64> {
        self.r
            .iter()
            .zip(&self.m)
            .map(|(&r, &m)| if r == 0.0 { 1.0 } else { 1.0 - 2.0 * m / r })
            .collect()
    }

    /// `dχ/dr = 4πr²n/√D`, finite everywhere (zero at the center).
    pub fn dchidr(&self) -> Vec<f64> {
        let d = self.lapse_factor();
        (0..self.len())
            .map(|i| 4.0 * PI * self.r[i] * self.r[i] * self.n[i] / d[i].sqrt())
            .collect()
    }

    /// `(m/r² + 4πr(ρ-1)) / (1 - 2m/r)`, i.e. `∂_χψ / ∂_χr`.
    pub fn lapse_gradient(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let r = self.r[i];
                if r == 0.0 {
                    0.0
                } else {
                    (self.m[i] / (r * r) + 4.0 * PI * r * self.p[i]) / (1.0 - 2.0 * self.m[i] / r)
                }
            })
            .collect()
    }

    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            radius: self.radius,
            total_mass: self.total_mass,
            particle_number: self.particle_number,
            central_density: self.central_density(),
            grid_n: self.len(),
            solver: self.solver.clone(),
        }
    }

    /// Writes the node table. `comment`, if given, becomes a leading `#` line.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(PROFILE_COLUMNS)?;
        for i in 0..self.len() {
            let row = [
                self.r[i],
                self.m[i],
                self.rho[i],
                self.p[i],
                self.n[i],
                self.psi[i],
                self.omega[i],
                self.chi[i],
                self.drdchi[i],
                self.dpsidchi[i],
            ];
            wr.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a table produced by [`BackgroundProfile::write_csv`]. Only `r`,
    /// `m` and `rho` are taken from the file; every other field is rederived.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rd.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
        };
        let (ir, im, irho) = (col("r")?, col("m")?, col("rho")?);
        let (mut r, mut m, mut rho) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let get = |i: usize| -> Result<f64> {
                parse_f64(rec.get(i).unwrap_or(""))
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))
            };
            r.push(get(ir)?);
            m.push(get(im)?);
            rho.push(get(irho)?);
        }
        derive_metric_fields(r, m, rho, SolverInfo::Supplied)
    }
}

pub const PROFILE_COLUMNS: [&str; 10] = [
    "r", "m", "rho", "p", "n", "psi", "omega", "chi", "drdchi", "dpsidchi",
];

/// Seventeen significant digits; infinities as `inf`/`-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")),
    }
}

/// Right-hand side of the TOV system for `p = ρ - 1`.
pub fn tov_rhs(r: f64, m: f64, rho: f64) -> Result<(f64, f64)> {
    if rho < 1.0 {
        return Err(Error::Domain { r, m, rho, reason: "density below the hard-phase threshold" });
    }
    if r == 0.0 {
        return Ok((0.0, 0.0));
    }
    if !(r > 2.0 * m) || m < 0.0 {
        return Err(Error::Domain { r, m, rho, reason: "trapped shell" });
    }
    Ok(tov_rhs_raw(r, m, rho))
}

fn tov_rhs_raw(r: f64, m: f64, rho: f64) -> (f64, f64) {
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let dm = 4.0 * PI * r * r * rho;
    let drho = -(2.0 * rho - 1.0) / (r - 2.0 * m) * (4.0 * PI * r * r * (rho - 1.0) + m / r);
    (dm, drho)
}

/// Fixed-point iteration on the deviations `m̃ = m - 4πr³/3`, `ρ̃ = ρ - 1`.
pub fn solve_tov_picard(params: &StarParameters) -> Result<BackgroundProfile> {
    params.validate()?;
    let radius = params.radius;
    if radius > contraction_limit() {
        return Err(Error::ContractionRegime { radius, limit: contraction_limit() });
    }
    let r = params.grid();
    let n = r.len();
    let h = r[1];
    let mut mt = vec![0.0; n];
    let mut rt = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=params.picard_max_iter {
        let mass_density: Vec<f64> = (0..n).map(|i| 4.0 * PI * r[i] * r[i] * rt[i]).collect();
        let mt_new = cumulative_simpson(&mass_density, h);

        let mut g = vec![0.0; n];
        for i in 1..n {
            let s = r[i];
            let denom = 1.0 - 8.0 * PI / 3.0 * s * s - 2.0 * mt[i] / s;
            if denom <= 0.0 {
                return Err(Error::Domain {
                    r: s,
                    m: 4.0 * PI / 3.0 * s.powi(3) + mt[i],
                    rho: 1.0 + rt[i],
                    reason: "trapped shell",
                });
            }
            let ratio = mt[i] / (4.0 * PI * s * s * s);
            g[i] = (1.0 + 2.0 * rt[i]) / denom * (4.0 * PI * s / 3.0) * (1.0 + 3.0 * rt[i] + 3.0 * ratio);
        }
        let cum = cumulative_simpson(&g, h);
        let total = cum[n - 1];
        let rt_new: Vec<f64> = cum.iter().map(|c| total - c).collect();

        let mut dm = 0.0_f64;
        for i in 0..n {
            let d = if i == 0 {
                4.0 * PI / 3.0 * (rt_new[0] - rt[0])
            } else {
                (mt_new[i] - mt[i]) / r[i].powi(3)
            };
            dm = dm.max(d.abs());
        }
        let drho = rt_new
            .iter()
            .zip(&rt)
            .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        residual = 3.0 / (4.0 * PI) * dm + 2.0 * drho;
        mt = mt_new;
        rt = rt_new;
        if residual <= params.picard_tol {
            let m: Vec<f64> = (0..n).map(|i| 4.0 * PI / 3.0 * r[i].powi(3) + mt[i]).collect();
            let rho: Vec<f64> = rt.iter().map(|v| 1.0 + v).collect();
            return derive_metric_fields(
                r,
                m,
                rho,
                SolverInfo::Picard { iterations: iter, residual, tolerance: params.picard_tol },
            );
        }
    }
    Err(Error::NonConvergence { iterations: params.picard_max_iter, residual })
}

fn integrate_outward(r: &[f64], rho_c: f64) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let h = r[1] - r[0];
    let mut m = vec![0.0; n];
    let mut rho = vec![0.0; n];
    rho[0] = rho_c;
    let mut rhs = |t: f64, y: &[f64]| {
        let (a, b) = tov_rhs_raw(t, y[0], y[1]);
        vec![a, b]
    };
    let mut y = vec![0.0, rho_c];
    for i in 1..n {
        y = rk4_step(&mut rhs, r[i - 1], &y, h);
        m[i] = y[0];
        rho[i] = y[1];
    }
    (m, rho)
}

/// Outward RK4 integration from a trial central density, bisecting on `ρ(R) = 1`.
pub fn solve_tov_shooting(params: &StarParameters) -> Result<BackgroundProfile> {
    params.validate()?;
    let r = params.grid();
    let radius = params.radius;
    let hi = 1.0 + 16.0 * PI / 3.0 * radius * radius;
    let mut count = 0usize;
    let surface = |rho_c: f64| -> Result<f64> {
        let (_, rho) = integrate_outward(&r, rho_c);
        let v = rho[rho.len() - 1] - 1.0;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain { r: radius, m: f64::NAN, rho: rho_c, reason: "trapped shell" })
        }
    };
    let rho_c = bisect(
        |x| {
            count += 1;
            surface(x)
        },
        1.0,
        hi,
        1e-16,
        1e-12,
    )?;
    let (m, rho) = integrate_outward(&r, rho_c);
    let defect = rho[rho.len() - 1] - 1.0;
    derive_metric_fields(
        r,
        m,
        rho,
        SolverInfo::Shooting { bisections: count, surface_defect: defect },
    )
}

/// Small-star approximation of the density, `1 + (2π/3)(R² - r²)`.
pub fn approximate_profile(radius: f64, r: f64) -> f64 {
    1.0 + 2.0 * PI / 3.0 * (radius * radius - r * r)
}

/// Small-star approximation of `∂_χ r` rescaled by `4πr²`.
pub fn approximate_rprime(radius: f64, r: f64) -> f64 {
    1.0 - 2.0 * PI / 3.0 * (radius * radius + r * r)
}

/// Completes a profile from tabulated `m` and `ρ` on a uniform grid starting at 0.
pub fn derive_metric_fields(
    r: Vec<f64>,
    m: Vec<f64>,
    rho: Vec<f64>,
    solver: SolverInfo,
) -> Result<BackgroundProfile> {
    let len = r.len();
    if m.len() != len {
        return Err(Error::GridMismatch { expected: len, found: m.len() });
    }
    if rho.len() != len {
        return Err(Error::GridMismatch { expected: len, found: rho.len() });
    }
    if len < 8 {
        return Err(Error::InvalidParameters("profile needs at least 8 nodes".into()));
    }
    if r[0] != 0.0 {
        return Err(Error::InvalidParameters("radial grid must start at the center".into()));
    }
    let h = r[1];
    for (i, ri) in r.iter().enumerate() {
        if ((ri - i as f64 * h).abs()) > 1e-9 * r[len - 1] {
            return Err(Error::InvalidParameters("radial grid must be uniform".into()));
        }
    }
    for i in 0..len {
        if rho[i] < 1.0 - 1e-12 {
            return Err(Error::Domain { r: r[i], m: m[i], rho: rho[i], reason: "density below the hard-phase threshold" });
        }
        if i > 0 && !(r[i] > 2.0 * m[i]) {
            return Err(Error::Domain { r: r[i], m: m[i], rho: rho[i], reason: "trapped shell" });
        }
    }
    let d: Vec<f64> = (0..len)
        .map(|i| if i == 0 { 1.0 } else { 1.0 - 2.0 * m[i] / r[i] })
        .collect();
    let p: Vec<f64> = rho.iter().map(|v| v - 1.0).collect();
    let n: Vec<f64> = rho.iter().map(|v| (2.0 * v - 1.0).sqrt()).collect();
    let psi: Vec<f64> = rho.iter().map(|v| -0.5 * (2.0 * v - 1.0).ln()).collect();
    let dchidr: Vec<f64> = (0..len)
        .map(|i| 4.0 * PI * r[i] * r[i] * n[i] / d[i].sqrt())
        .collect();
    let chi = cumulative_simpson(&dchidr, h);
    let mut omega = vec![f64::INFINITY; len];
    let mut drdchi = vec![f64::INFINITY; len];
    let mut dpsidchi = vec![f64::INFINITY; len];
    for i in 1..len {
        omega[i] = -(4.0 * PI * r[i] * r[i] * n[i]).ln();
        drdchi[i] = 1.0 / dchidr[i];
        let g = (m[i] / (r[i] * r[i]) + 4.0 * PI * r[i] * p[i]) / d[i];
        dpsidchi[i] = g * drdchi[i];
    }
    Ok(BackgroundProfile {
        radius: r[len - 1],
        total_mass: m[len - 1],
        particle_number: chi[len - 1],
        r,
        m,
        rho,
        p,
        n,
        psi,
        omega,
        chi,
        drdchi,
        dpsidchi,
        solver,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyRow {
    pub radius: f64,
    pub total_mass: Option<f64>,
    pub central_density: Option<f64>,
    pub compactness: Option<f64>,
    pub error: Option<String>,
}

/// Solves one star per radius (in parallel) and tabulates `M`, `ρ(0)` and `3M/R`.
pub fn family_scan(radii: &[f64], grid_n: usize) -> Vec<FamilyRow> {
    radii
        .par_iter()
        .map(|&radius| {
            let params = StarParameters::new(radius).with_grid(grid_n);
            let solved = if radius <= contraction_limit() {
                solve_tov_picard(&params)
            } else {
                solve_tov_shooting(&params)
            };
            match solved {
                Ok(bg) => FamilyRow {
                    radius,
                    total_mass: Some(bg.total_mass),
                    central_density: Some(bg.central_density()),
                    compactness: Some(3.0 * bg.total_mass / radius),
                    error: None,
                },
                Err(e) => FamilyRow {
                    radius,
                    total_mass: None,
                    central_density: None,
                    compactness: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhs_trivial_cases() {
        assert_eq!(tov_rhs(0.0, 0.0, 1.02).unwrap(), (0.0, 0.0));
        let (r, m) = (0.03, 1e-4);
        let (dm, drho) = tov_rhs(r, m, 1.0).unwrap();
        assert!((dm - 4.0 * PI * r * r).abs() < 1e-16);
        assert!((drho + (m / r) / (r - 2.0 * m)).abs() < 1e-16);
    }

    #[test]
    fn rhs_rejects_domain_violations() {
        assert!(matches!(tov_rhs(0.1, 0.06, 1.01), Err(Error::Domain { .. })));
        assert!(matches!(tov_rhs(0.1, 0.001, 0.99), Err(Error::Domain { .. })));
    }

    #[test]
    fn parameters_validate() {
        assert!(StarParameters::new(0.0).validate().is_err());
        assert!(StarParameters::new(0.4).validate().is_err());
        assert!(StarParameters::new(0.1).with_grid(3).validate().is_err());
        assert!(StarParameters::new(0.1).validate().is_ok());
    }

    #[test]
    fn picard_rejects_large_radius() {
        let e = solve_tov_picard(&StarParameters::new(0.2)).unwrap_err();
        assert!(matches!(e, Error::ContractionRegime { .. }));
    }

    #[test]
    fn picard_reports_nonconvergence() {
        let mut p = StarParameters::new(0.1).with_grid(257);
        p.picard_max_iter = 2;
        assert!(matches!(solve_tov_picard(&p), Err(Error::NonConvergence { iterations: 2, .. })));
    }

    #[test]
    fn approximations_at_endpoints() {
        assert_eq!(approximate_profile(0.1, 0.1), 1.0);
        assert!((approximate_profile(0.1, 0.0) - (1.0 + 2.0 * PI / 300.0)).abs() < 1e-15);
        assert!((approximate_rprime(0.1, 0.0) - (1.0 - 2.0 * PI / 300.0)).abs() < 1e-15);
    }

    #[test]
    fn flat_limit_fields() {
        let r = uniform_grid(0.01, 101);
        let m: Vec<f64> = r.iter().map(|x| 4.0 * PI / 3.0 * x.powi(3)).collect();
        let rho = vec![1.0; r.len()];
        let bg = derive_metric_fields(r, m, rho, SolverInfo::Supplied).unwrap();
        for i in 1..bg.len() {
            assert_eq!(bg.psi[i], 0.0);
            assert_eq!(bg.n[i], 1.0);
            let v = 4.0 * PI / 3.0 * bg.r[i].powi(3);
            assert!((bg.chi[i] / v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn csv_round_trip() {
        let bg = solve_tov_picard(&StarParameters::new(0.05).with_grid(129)).unwrap();
        let mut buf = Vec::new();
        bg.write_csv(&mut buf, Some("{\"k\":1}")).unwrap();
        let back = BackgroundProfile::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.r, bg.r);
        assert_eq!(back.m, bg.m);
        assert_eq!(back.rho, bg.rho);
        assert_eq!(back.chi, bg.chi);
    }
}
