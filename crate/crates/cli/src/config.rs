use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hardstar::background::StarParameters;
use hardstar::evolution::{SurfaceCondition, DEFAULT_CFL};
use hardstar::verify::{AUDIT_MODES, AUDIT_SEED, AUDIT_SIZE, MASS_ASPECT_EPSILONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Command {
    Build,
    Family,
    VariationAudit,
    Evolve,
    Modes,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Family => "family",
            Command::VariationAudit => "variation-audit",
            Command::Evolve => "evolve",
            Command::Modes => "modes",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    /// Picard inside the contraction regime, shooting beyond it.
    #[default]
    Auto,
    Picard,
    Shooting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    H0,
    Full,
    #[default]
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub solver: Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub radii: Vec<f64>,
    pub grid_n: usize,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self { radii: vec![0.01, 0.02, 0.04, 0.05, 0.08, 0.1], grid_n: 1025 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Profile CSV to audit instead of solving `star`.
    pub profile: Option<PathBuf>,
    pub count: usize,
    pub modes: usize,
    pub epsilons: Vec<f64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { profile: None, count: AUDIT_SIZE, modes: AUDIT_MODES, epsilons: MASS_ASPECT_EPSILONS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub cfl: f64,
    /// Final time in units of `R`.
    pub duration: f64,
    /// `gaussian`, `mode:<j>` or `file:<csv>`.
    pub initial_data: String,
    pub amplitude: f64,
    pub surface: SurfaceCondition,
    /// Steps between rows of `energy.csv`.
    pub output_every: usize,
    pub snapshots: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            cfl: DEFAULT_CFL,
            duration: 50.0,
            initial_data: "gaussian".into(),
            amplitude: 1e-3,
            surface: SurfaceCondition::default(),
            output_every: 20,
            snapshots: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesConfig {
    pub count: usize,
    pub which: Which,
    pub emit_initial_data: Option<usize>,
    pub amplitude: f64,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self { count: 5, which: Which::Both, emit_initial_data: None, amplitude: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub evolution_grid_n: usize,
    pub evolution_time: f64,
    pub mode_count: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { evolution_grid_n: 501, evolution_time: 5.0, mode_count: 5 }
    }
}

/// One reproducible run. Serialized field order is fixed, so the canonical
/// JSON text (and its hash) depends only on the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub star: StarParameters,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub build: BuildConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    AUDIT_SEED
}

impl RunConfig {
    pub fn new(command: Command, star: StarParameters) -> Self {
        Self {
            command,
            star,
            output_dir: default_output_dir(),
            seed: default_seed(),
            build: BuildConfig::default(),
            family: FamilyConfig::default(),
            audit: AuditConfig::default(),
            evolve: EvolveConfig::default(),
            modes: ModesConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    /// Accepts a bare config or the `config.json` written next to a run's
    /// outputs (`{"provenance": ..., "data": config}`).
    pub fn from_json(text: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Emitted {
            #[allow(dead_code)]
            provenance: serde_json::Value,
            data: RunConfig,
        }
        match serde_json::from_str::<Self>(text) {
            Ok(c) => Ok(c),
            Err(e) => match serde_json::from_str::<Emitted>(text) {
                Ok(doc) => Ok(doc.data),
                Err(_) => Err(format!("line {} column {}: {e}", e.line(), e.column())),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Output directory, placed under `root` when relative.
    pub fn resolved_output(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(root) if self.output_dir.is_relative() => root.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
