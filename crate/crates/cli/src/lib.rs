//! Batch front end for the delaymp toolkit: reads an experiment config, runs
//! it and writes a manifest, CSV tables and a key-value report.

pub mod config;
pub mod experiments;
pub mod expr;
pub mod model;
pub mod output;

use std::path::{Path, PathBuf};

use config::{ConfigError, ExperimentConfig};
use output::Manifest;

/// Exit code for a config that does not parse or validate.
pub const EXIT_CONFIG: i32 = 3;
/// Exit code for a solver failure.
pub const EXIT_SOLVER: i32 = 2;

const DEFAULT_OUT: &str = "delaymp-out";

/// Runs the experiment in `config_path` and returns the process exit code.
/// With `threads` the solver pool is capped at that many workers; results do
/// not depend on it.
pub fn run(config_path: &Path, threads: Option<usize>, out: Option<PathBuf>) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    pool.install(|| run_in_pool(config_path, out))
}

fn run_in_pool(config_path: &Path, out: Option<PathBuf>) -> i32 {
    let mut manifest = Manifest {
        toolkit: "delaymp",
        version: env!("CARGO_PKG_VERSION"),
        kind: None,
        seed: None,
        threads: rayon::current_num_threads(),
        status: "ok",
        exit_code: 0,
        error: None,
        error_location: None,
        outputs: Vec::new(),
        config: None,
    };
    let (cfg, table) = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail_config(&mut manifest, e, out.as_deref()),
    };
    let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    manifest.kind = Some(cfg.kind.name().to_string());
    manifest.seed = Some(cfg.monte_carlo.seed);
    manifest.config = Some(table);

    let (artifacts, result) = experiments::run(&cfg);
    match artifacts.write(&dir) {
        Ok(names) => manifest.outputs = names,
        Err(e) => {
            eprintln!("error: cannot write results to {}: {e}", dir.display());
            return 1;
        }
    }
    if let Err(e) = &result {
        eprintln!("error: {e}");
        manifest.exit_code = e.exit_code();
        manifest.status = if manifest.exit_code == EXIT_CONFIG { "config-error" } else { "solver-error" };
        manifest.error = Some(e.to_string());
        manifest.error_location = e.location().map(str::to_string);
    }
    if let Err(e) = manifest.write(&dir) {
        eprintln!("error: cannot write manifest to {}: {e}", dir.display());
        return 1;
    }
    manifest.exit_code
}

fn fail_config(manifest: &mut Manifest, e: ConfigError, out: Option<&Path>) -> i32 {
    eprintln!("error: {e}");
    manifest.status = "config-error";
    manifest.exit_code = EXIT_CONFIG;
    manifest.error = Some(e.to_string());
    if let Some(dir) = out {
        if let Err(w) = manifest.write(dir) {
            eprintln!("error: cannot write manifest to {}: {w}", dir.display());
        }
    }
    EXIT_CONFIG
}
