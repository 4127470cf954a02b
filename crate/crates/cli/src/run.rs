use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde::Serialize;

use hardstar::background::{
    contraction_limit, solve_tov_picard, solve_tov_shooting, BackgroundProfile, ProfileSummary, StarParameters,
};
use hardstar::evolution::{self, assemble_coefficients_with, gaussian_data, EvolveOptions};
use hardstar::modes::{self, ModeResult, ModeSearch};
use hardstar::variation::{audit_set, linearized_mass, run_audit, Perturbation};
use hardstar::verify::{run_verification, VerifyOptions};

use crate::artifact::{Artifacts, Cell};
use crate::config::{Command, RunConfig, Solver, Which};
use crate::plot::{line_plot, Series};

/// Raised when a configuration is rejected before any solve.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// `verify` ran to completion but some checks failed.
#[derive(Debug)]
pub struct VerifyFailed(pub usize);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn run(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    out.json("config.json", config)?;
    match config.command {
        Command::Build => build(config, out),
        Command::Family => family(config, out),
        Command::VariationAudit => variation_audit(config, out),
        Command::Evolve => evolve(config, out),
        Command::Modes => modes_cmd(config, out),
        Command::Verify => verify(config, out),
    }
}

fn solve(params: &StarParameters, solver: Solver) -> hardstar::Result<BackgroundProfile> {
    match solver {
        Solver::Picard => solve_tov_picard(params),
        Solver::Shooting => solve_tov_shooting(params),
        Solver::Auto if params.radius <= contraction_limit() => solve_tov_picard(params),
        Solver::Auto => solve_tov_shooting(params),
    }
}

fn background(config: &RunConfig) -> hardstar::Result<Arc<BackgroundProfile>> {
    solve(&config.star, config.build.solver).map(Arc::new)
}

#[derive(Serialize)]
struct ProfileSidecar<'a> {
    summary: ProfileSummary,
    star: &'a StarParameters,
    solver_choice: Solver,
}

fn build(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    let bg = background(config)?;
    out.csv_with("profile.csv", |w, header| Ok(bg.write_csv(w, Some(header))?))?;
    let summary = bg.summary();
    println!(
        "R = {}  M = {:.10e}  N = {:.10e}  rho(0) = {:.12}  3M/R = {:.6e}",
        bg.radius,
        summary.total_mass,
        summary.particle_number,
        summary.central_density,
        3.0 * summary.total_mass / bg.radius
    );
    out.json("profile.json", &ProfileSidecar { summary, star: &config.star, solver_choice: config.build.solver })?;
    let r2 = bg.radius * bg.radius;
    let excess: Vec<f64> = bg.rho.iter().map(|rho| (rho - 1.0) / r2).collect();
    let aspect: Vec<f64> = bg
        .r
        .iter()
        .zip(&bg.m)
        .zip(&bg.rho)
        .map(|((r, m), rho)| if *r > 0.0 { (3.0 / (4.0 * std::f64::consts::PI) * m / r.powi(3) - 1.0) / r2 } else { (rho - 1.0) / r2 })
        .collect();
    let svg = line_plot(
        "static profile",
        "r",
        "excess / R^2",
        &[Series { label: "rho - 1", x: &bg.r, y: &excess }, Series { label: "(3/4pi) m/r^3 - 1", x: &bg.r, y: &aspect }],
    );
    out.svg("profile.svg", &svg)
}

fn family(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    if config.family.radii.is_empty() {
        return Err(config_error("family.radii is empty"));
    }
    let rows = hardstar::background::family_scan(&config.family.radii, config.family.grid_n);
    for row in &rows {
        match (&row.error, row.compactness) {
            (None, Some(c)) => println!("R = {:<8} 3M/R = {c:.6e}", row.radius),
            (Some(e), _) => println!("R = {:<8} failed: {e}", row.radius),
            _ => {}
        }
    }
    out.csv(
        "family.csv",
        &["radius", "total_mass", "central_density", "compactness", "error"],
        rows.iter().map(|r| {
            vec![
                Cell::Num(r.radius),
                r.total_mass.into(),
                r.central_density.into(),
                r.compactness.into(),
                r.error.clone().map_or(Cell::Empty, Cell::Text),
            ]
        }),
    )?;
    let x: Vec<f64> = rows.iter().map(|r| r.radius).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.compactness.unwrap_or(f64::NAN)).collect();
    out.svg("family.svg", &line_plot("static family", "R", "3M/R", &[Series { label: "3M/R", x: &x, y: &y }]))
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct AuditDocument<'a> {
    radius: f64,
    seed: u64,
    count: usize,
    max_abs_M_dot: f64,
    min_M_ddot: f64,
    ratio_bounds: [f64; 2],
    mass_aspect_max: &'a [(f64, f64)],
    rows: &'a [hardstar::variation::AuditRow],
}

fn variation_audit(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    let bg = match &config.audit.profile {
        Some(path) => {
            let f = File::open(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Arc::new(BackgroundProfile::read_csv(f)?)
        }
        None => background(config)?,
    };
    if config.audit.count == 0 || config.audit.modes == 0 {
        return Err(config_error("audit.count and audit.modes must be positive"));
    }
    let set = audit_set(bg.clone(), config.audit.count, config.audit.modes, config.seed);
    let summary = run_audit(&set, &config.audit.epsilons)?;
    println!("members            {}", set.len());
    println!("max |M_dot|        {:.6e}", summary.max_abs_m_dot);
    println!("min M_ddot         {:.6e}", summary.min_m_ddot);
    println!("M_ddot / E_var     [{:.6}, {:.6}]", summary.ratio_min, summary.ratio_max);
    for (eps, v) in &summary.mass_aspect_max {
        println!("mass aspect eps={eps:<5} {v:.6}");
    }
    out.json(
        "audit.json",
        &AuditDocument {
            radius: bg.radius,
            seed: config.seed,
            count: set.len(),
            max_abs_M_dot: summary.max_abs_m_dot,
            min_M_ddot: summary.min_m_ddot,
            ratio_bounds: [summary.ratio_min, summary.ratio_max],
            mass_aspect_max: &summary.mass_aspect_max,
            rows: &summary.rows,
        },
    )?;
    let mdot: Vec<Vec<f64>> = set.iter().map(|p| linearized_mass(&bg, p.rdot())).collect();
    let names: Vec<String> = (0..set.len()).map(|k| format!("mdot_{k:03}")).collect();
    let mut columns = vec!["chi", "r"];
    columns.extend(names.iter().map(String::as_str));
    out.csv(
        "mdot.csv",
        &columns,
        (0..bg.len()).map(|i| {
            let mut row = vec![Cell::Num(bg.chi[i]), Cell::Num(bg.r[i])];
            row.extend(mdot.iter().map(|m| Cell::Num(m[i])));
            row
        }),
    )
}

/// Reads `r, r1, r1_phi` as written by `modes --emit-initial-data`.
fn read_initial_data(path: &Path, bg: Arc<BackgroundProfile>) -> anyhow::Result<Perturbation> {
    let f = File::open(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| config_error(format!("{}: missing column `{name}`", path.display())))
    };
    let (ir, iu, iv) = (col("r")?, col("r1")?, col("r1_phi")?);
    let (mut r, mut u, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec?;
        let get = |i: usize| {
            hardstar::background::parse_f64(rec.get(i).unwrap_or(""))
                .map_err(|e| config_error(format!("{}: {e}", path.display())))
        };
        r.push(get(ir)?);
        u.push(get(iu)?);
        v.push(get(iv)?);
    }
    if r.len() != bg.len() || r.iter().zip(&bg.r).any(|(a, b)| (a - b).abs() > 1e-12 * bg.radius) {
        return Err(config_error(format!(
            "{}: nodes do not match the background grid ({} nodes, R = {})",
            path.display(),
            bg.len(),
            bg.radius
        )));
    }
    Ok(Perturbation::new(bg, u, v)?)
}

fn initial_data(config: &RunConfig, bg: Arc<BackgroundProfile>) -> anyhow::Result<Perturbation> {
    let preset = config.evolve.initial_data.as_str();
    let amplitude = config.evolve.amplitude;
    if preset == "gaussian" {
        let radius = bg.radius;
        return Ok(gaussian_data(bg, 0.5 * radius, 0.125 * radius)?.scaled(amplitude));
    }
    if let Some(j) = preset.strip_prefix("mode:") {
        let j: usize = j.parse().ok().filter(|j| *j >= 1).ok_or_else(|| config_error(format!("bad mode index in `{preset}`")))?;
        let search = ModeSearch { surface: config.evolve.surface, ..ModeSearch::default() };
        let found = modes::find_modes_with(&bg, j, &search)?;
        return Ok(modes::mode_to_initial_data(bg, &found[j - 1], amplitude)?);
    }
    if let Some(path) = preset.strip_prefix("file:") {
        return read_initial_data(Path::new(path), bg);
    }
    Err(config_error(format!("unknown initial data `{preset}` (expected gaussian, mode:<j> or file:<csv>)")))
}

#[derive(Serialize)]
struct EvolveSummary {
    t_final: f64,
    dt: f64,
    steps: usize,
    e0: f64,
    max_ratio: f64,
    min_ratio: f64,
    band: f64,
    plain_max_ratio: f64,
}

fn evolve(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    let ec = &config.evolve;
    if !(ec.duration >= 0.0) {
        return Err(config_error("evolve.duration must be non-negative"));
    }
    if !(ec.cfl > 0.0 && ec.cfl <= evolution::MAX_CFL) {
        return Err(config_error(format!("evolve.cfl must lie in (0, {}]", evolution::MAX_CFL)));
    }
    let bg = background(config)?;
    let data = initial_data(config, bg.clone())?;
    let coeffs = assemble_coefficients_with(&bg, ec.surface)?;
    let t_final = ec.duration * bg.radius;
    let steps = (t_final / (ec.cfl * coeffs.cfl_unit())).ceil() as usize;
    let options = EvolveOptions {
        t_final,
        cfl: ec.cfl,
        output_every: ec.output_every,
        snapshot_every: if ec.snapshots == 0 { 0 } else { steps.div_ceil(ec.snapshots).max(1) },
    };
    let (traj, report, _) = evolution::evolve(&data, &coeffs, &options)?;
    println!("steps {}  dt {:.6e}  E(0) {:.6e}", report.steps, report.dt, report.e0);
    println!("E/E(0) in [{:.12}, {:.12}]  band {:.3e}", report.min_ratio, report.max_ratio, report.band());
    out.json(
        "summary.json",
        &EvolveSummary {
            t_final,
            dt: report.dt,
            steps: report.steps,
            e0: report.e0,
            max_ratio: report.max_ratio,
            min_ratio: report.min_ratio,
            band: report.band(),
            plain_max_ratio: report.plain_max_ratio,
        },
    )?;
    out.csv(
        "energy.csv",
        &["phi", "E", "E1", "E2", "constraint_residual", "conservation_residual", "E_plain", "mass_aspect"],
        report.samples.iter().map(|s| {
            [s.phi, s.e, s.e1, s.e2, s.constraint_residual, s.conservation_residual, s.e_plain, s.mass_aspect]
                .into_iter()
                .map(Cell::Num)
                .collect()
        }),
    )?;
    for (k, snap) in traj.snapshots.iter().enumerate() {
        out.csv(
            &format!("snapshot_{k:03}.csv"),
            &["r", "r1", "r1_phi"],
            (0..bg.len()).map(|i| vec![Cell::Num(bg.r[i]), Cell::Num(snap.r1[i]), Cell::Num(snap.r1dot[i])]),
        )?;
    }
    let phi: Vec<f64> = report.samples.iter().map(|s| s.phi).collect();
    let e: Vec<f64> = report.samples.iter().map(|s| s.e / report.e0).collect();
    let p0 = report.samples[0].e_plain;
    let plain: Vec<f64> = report.samples.iter().map(|s| s.e_plain / p0).collect();
    let svg = line_plot(
        "energy history",
        "phi",
        "E / E(0)",
        &[Series { label: "E", x: &phi, y: &e }, Series { label: "plain energy", x: &phi, y: &plain }],
    );
    out.svg("energy.svg", &svg)
}

fn modes_cmd(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    let mc = &config.modes;
    if mc.count == 0 {
        return Err(config_error("modes.count must be positive"));
    }
    let bg = background(config)?;
    let h0 = match mc.which {
        Which::H0 | Which::Both => Some(modes::h0_modes(&bg, mc.count)?),
        Which::Full => None,
    };
    let full = match mc.which {
        Which::Full | Which::Both => Some(modes::find_modes(&bg, mc.count)?),
        Which::H0 => None,
    };
    let pick = |list: &Option<Vec<ModeResult>>, j: usize| list.as_ref().map(|l| l[j].clone());
    let mut rows = Vec::new();
    for j in 0..mc.count {
        let (a, b) = (pick(&h0, j), pick(&full, j));
        let la = a.as_ref().map(|m| m.lambda);
        let lb = b.as_ref().map(|m| m.lambda);
        let gap = la.zip(lb).map(|(a, b)| b - a);
        let residual = b.as_ref().or(a.as_ref()).map(|m| m.boundary_residual);
        println!(
            "j = {}  lambda_H0 = {}  lambda_full = {}",
            j + 1,
            la.map_or("-".into(), |v| format!("{v:.10e}")),
            lb.map_or("-".into(), |v| format!("{v:.10e}"))
        );
        rows.push(vec![Cell::Int(j + 1), la.into(), lb.into(), gap.into(), residual.into()]);
        out.csv(
            &format!("mode_{}.csv", j + 1),
            &["r", "h_H0", "h_full"],
            (0..bg.len()).map(|i| {
                vec![Cell::Num(bg.r[i]), a.as_ref().map(|m| m.h[i]).into(), b.as_ref().map(|m| m.h[i]).into()]
            }),
        )?;
    }
    out.csv("modes.csv", &["j", "lambda_H0", "lambda_full", "gap", "boundary_residual"], rows)?;

    let shown = full.as_ref().or(h0.as_ref()).expect("at least one spectrum");
    let scaled: Vec<Vec<f64>> = shown
        .iter()
        .map(|m| {
            let s = hardstar::numerics::sup_norm(&m.h);
            m.h.iter().map(|h| h / s).collect()
        })
        .collect();
    let labels: Vec<String> = (1..=shown.len()).map(|j| format!("j = {j}")).collect();
    let series: Vec<Series> =
        scaled.iter().zip(&labels).map(|(y, label)| Series { label, x: &bg.r, y }).collect();
    out.svg("modes.svg", &line_plot("eigenfunctions", "r", "h / sup|h|", &series))?;

    if let Some(j) = mc.emit_initial_data {
        if j == 0 || j > mc.count {
            return Err(config_error(format!("emit_initial_data = {j} outside 1..={}", mc.count)));
        }
        let mode = &shown[j - 1];
        let data = modes::mode_to_initial_data(bg.clone(), mode, mc.amplitude)?;
        out.csv(
            &format!("initial_data_mode_{j}.csv"),
            &["r", "r1", "r1_phi"],
            (0..bg.len()).map(|i| vec![Cell::Num(bg.r[i]), Cell::Num(data.rdot()[i]), Cell::Num(data.rdot_phi()[i])]),
        )?;
    }
    Ok(())
}

fn verify(config: &RunConfig, out: &mut Artifacts) -> anyhow::Result<()> {
    let options = VerifyOptions {
        radius: config.star.radius,
        grid_n: config.star.grid_n,
        evolution_grid_n: config.verify.evolution_grid_n,
        evolution_time: config.verify.evolution_time,
        mode_count: config.verify.mode_count,
        seed: config.seed,
    };
    if options.evolution_grid_n < 5 || options.mode_count == 0 || !(options.evolution_time > 0.0) {
        return Err(config_error("verify settings out of range"));
    }
    let report = run_verification(&options)?;
    let mut stdout = std::io::stdout().lock();
    for c in &report.checks {
        writeln!(
            stdout,
            "{} {:<11} {:<55} {:>13.6e}  (threshold {:.3e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.module,
            c.name,
            c.value,
            c.threshold
        )
        .context("writing report")?;
    }
    drop(stdout);
    out.json("verify.json", &report)?;
    out.csv(
        "verify.csv",
        &["module", "name", "value", "threshold", "passed"],
        report.checks.iter().map(|c| {
            vec![
                Cell::Text(c.module.clone()),
                Cell::Text(c.name.clone()),
                Cell::Num(c.value),
                Cell::Num(c.threshold),
                Cell::Text(c.passed.to_string()),
            ]
        }),
    )?;
    let failed = report.failures().count();
    if failed > 0 {
        return Err(anyhow!(VerifyFailed(failed)));
    }
    Ok(())
}
