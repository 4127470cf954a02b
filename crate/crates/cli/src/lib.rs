//! Front end for the `hardstar` binary: run configuration, artifact
//! emission with provenance headers, and a small SVG plotter.

pub mod artifact;
pub mod config;
pub mod plot;
pub mod run;

use run::{ConfigError, VerifyFailed};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Exit status for a failed run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return EXIT_INVARIANT;
    }
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<hardstar::Error>() {
        Some(e) if e.is_convergence() => EXIT_CONVERGENCE,
        Some(e) if e.is_invariant() => EXIT_INVARIANT,
        _ => EXIT_CONFIG,
    }
}
