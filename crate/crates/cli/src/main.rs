use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hardstar::background::StarParameters;
use hardstar::evolution::SurfaceCondition;
use hardstar_cli::artifact::{Artifacts, Provenance};
use hardstar_cli::config::{Command, RunConfig, Solver, Which};
use hardstar_cli::{exit_code, run, EXIT_CONFIG};

/// Environment variable naming the root for relative output directories.
const OUTPUT_ROOT_VAR: &str = "HARDSTAR_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "hardstar", version, about = "Static hard stars, their linear oscillations and spectrum")]
struct Cli {
    /// Run configuration (JSON). Its values take precedence over flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Seed for randomized audit and test sets.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Args, Clone)]
struct Star {
    /// Star radius in units where the surface density is 1.
    #[arg(long = "R", visible_alias = "radius")]
    radius: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve one static star and write its profile.
    Build {
        #[command(flatten)]
        star: Star,
        #[arg(long, value_enum)]
        solver: Option<Solver>,
    },
    /// Tabulate mass and compactness over a range of radii.
    Family {
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long)]
        grid_n: Option<usize>,
    },
    /// Evaluate both variations of the mass over a seeded perturbation set.
    VariationAudit {
        #[command(flatten)]
        star: Star,
        /// Profile CSV to audit instead of solving a star.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        modes: Option<usize>,
    },
    /// Evolve the linearized master equation.
    Evolve {
        #[command(flatten)]
        star: Star,
        #[arg(long)]
        cfl: Option<f64>,
        /// Final time in units of R.
        #[arg(long = "T")]
        duration: Option<f64>,
        /// gaussian, mode:<j> or file:<csv>
        #[arg(long)]
        initial_data: Option<String>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long, value_enum)]
        surface: Option<SurfaceArg>,
        #[arg(long)]
        output_every: Option<usize>,
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Oscillation spectrum of the leading and full operators.
    Modes {
        #[command(flatten)]
        star: Star,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        which: Option<Which>,
        /// Write mode j as evolution initial data.
        #[arg(long)]
        emit_initial_data: Option<usize>,
    },
    /// Run the invariant suite and report each check.
    Verify {
        #[command(flatten)]
        star: Star,
        #[arg(long)]
        evolution_grid_n: Option<usize>,
        #[arg(long)]
        evolution_time: Option<f64>,
        #[arg(long)]
        mode_count: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SurfaceArg {
    Master,
    PressureFree,
}

impl From<SurfaceArg> for SurfaceCondition {
    fn from(s: SurfaceArg) -> Self {
        match s {
            SurfaceArg::Master => SurfaceCondition::Master,
            SurfaceArg::PressureFree => SurfaceCondition::PressureFree,
        }
    }
}

fn sub_command(sub: &Sub) -> Command {
    match sub {
        Sub::Build { .. } => Command::Build,
        Sub::Family { .. } => Command::Family,
        Sub::VariationAudit { .. } => Command::VariationAudit,
        Sub::Evolve { .. } => Command::Evolve,
        Sub::Modes { .. } => Command::Modes,
        Sub::Verify { .. } => Command::Verify,
    }
}

fn star_params(star: &Star, required: bool) -> Result<StarParameters, String> {
    let radius = match star.radius {
        Some(r) => r,
        None if required => return Err("--R is required".into()),
        None => 0.05,
    };
    let mut p = StarParameters::new(radius);
    if let Some(n) = star.grid_n {
        p.grid_n = n;
    }
    Ok(p)
}

fn from_flags(cli: &Cli) -> Result<RunConfig, String> {
    let sub = cli.command.as_ref().ok_or("a subcommand or --config is required")?;
    let mut c = match sub {
        Sub::Build { star, solver } => {
            let mut c = RunConfig::new(Command::Build, star_params(star, true)?);
            if let Some(s) = solver {
                c.build.solver = *s;
            }
            c
        }
        Sub::Family { radii, grid_n } => {
            let mut c = RunConfig::new(Command::Family, StarParameters::new(0.05));
            if let Some(r) = radii {
                c.family.radii = r.clone();
            }
            if let Some(n) = grid_n {
                c.family.grid_n = *n;
            }
            c
        }
        Sub::VariationAudit { star, profile, count, modes } => {
            let mut c = RunConfig::new(Command::VariationAudit, star_params(star, profile.is_none())?);
            c.audit.profile = profile.clone();
            c.audit.count = count.unwrap_or(c.audit.count);
            c.audit.modes = modes.unwrap_or(c.audit.modes);
            c
        }
        Sub::Evolve { star, cfl, duration, initial_data, amplitude, surface, output_every, snapshots } => {
            let mut c = RunConfig::new(Command::Evolve, star_params(star, true)?);
            let e = &mut c.evolve;
            e.cfl = cfl.unwrap_or(e.cfl);
            e.duration = duration.unwrap_or(e.duration);
            if let Some(d) = initial_data {
                e.initial_data = d.clone();
            }
            e.amplitude = amplitude.unwrap_or(e.amplitude);
            if let Some(s) = surface {
                e.surface = (*s).into();
            }
            e.output_every = output_every.unwrap_or(e.output_every);
            e.snapshots = snapshots.unwrap_or(e.snapshots);
            c
        }
        Sub::Modes { star, count, which, emit_initial_data } => {
            let mut c = RunConfig::new(Command::Modes, star_params(star, true)?);
            c.modes.count = count.unwrap_or(c.modes.count);
            c.modes.which = which.unwrap_or(c.modes.which);
            c.modes.emit_initial_data = *emit_initial_data;
            c
        }
        Sub::Verify { star, evolution_grid_n, evolution_time, mode_count } => {
            let mut c = RunConfig::new(Command::Verify, star_params(star, true)?);
            let v = &mut c.verify;
            v.evolution_grid_n = evolution_grid_n.unwrap_or(v.evolution_grid_n);
            v.evolution_time = evolution_time.unwrap_or(v.evolution_time);
            v.mode_count = mode_count.unwrap_or(v.mode_count);
            c
        }
    };
    if let Some(d) = &cli.output_dir {
        c.output_dir = d.clone();
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

fn resolve(cli: &Cli) -> Result<RunConfig, String> {
    let Some(path) = &cli.config else {
        return from_flags(cli);
    };
    let c = RunConfig::load(path)?;
    if let Some(sub) = &cli.command {
        let named = sub_command(sub);
        if named != c.command {
            return Err(format!(
                "subcommand `{}` conflicts with `{}` in {}",
                named.name(),
                c.command.name(),
                path.display()
            ));
        }
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Err(e) = config.star.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
    let dir = config.resolved_output(root.as_deref());
    let mut out = match Artifacts::create(dir.clone(), Provenance::for_config(&config)) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run::run(&config, &mut out) {
        Ok(()) => {
            eprintln!("wrote {} files to {}", out.written().len(), dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
