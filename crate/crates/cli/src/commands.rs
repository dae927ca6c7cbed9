//! Subcommands. Each one validates everything it needs, computes in memory,
//! and only then creates the output directory and writes its files.

use std::fs;
use std::path::Path;

use fracid::optimizer::OptimalityReport;
use fracid::{
    fmt::float17, run_diagnostics, run_ensemble, solve_path, BrownianLattice, EnsembleProblem,
    IdentificationProblem, ARTIFACT_VERSION, RNG_ALGORITHM,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Loaded;
use crate::CliError;

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    config_hash: &'a str,
    seeds: Vec<u64>,
    artifact_version: &'static str,
    rng_algorithm: &'static str,
}

fn with_metadata<T: Serialize>(payload: &T, command: &str, loaded: &Loaded, seeds: Vec<u64>) -> Result<String, CliError> {
    let meta = Metadata { command, config_hash: &loaded.hash, seeds, artifact_version: ARTIFACT_VERSION, rng_algorithm: RNG_ALGORITHM };
    let meta = serde_json::to_value(meta).map_err(|e| CliError::Io(e.into()))?;
    let mut v = serde_json::to_value(payload).map_err(|e| CliError::Io(e.into()))?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("metadata".into(), meta);
        }
        None => v = json!({ "result": v, "metadata": meta }),
    }
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.into()))?;
    text.push('\n');
    Ok(text)
}

/// Write every `(name, contents)` pair into `dir`.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
        log::info!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> fracid::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn simulate(loaded: &Loaded, s: Option<f64>, seed: Option<u64>, dump_paths: bool, out: &Path) -> Result<(), CliError> {
    let s = loaded.simulate_s(s)?;
    let y0 = loaded.initial_data()?;
    let seed = loaded.seed(seed);
    let lat = BrownianLattice::generate(seed, loaded.model(), loaded.grid())?;
    let sol = solve_path(loaded.model(), &y0, &lat, s)?;
    let mut files = vec![
        ("solution.csv", csv_bytes(|b| sol.write_csv(b))?),
        ("summary.json", with_metadata(&sol.summary(), "simulate", loaded, vec![seed])?.into_bytes()),
    ];
    if dump_paths {
        files.push(("increments.csv", csv_bytes(|b| lat.write_csv(b))?));
        files.push(("noise.json", with_metadata(&lat.metadata(), "simulate", loaded, vec![seed])?.into_bytes()));
    }
    write_all(out, &files)
}

fn trace_csv(report: &OptimalityReport) -> Vec<u8> {
    let mut text = String::from("iter,s,J,J1,J2\n");
    for (i, it) in report.trace.iter().enumerate() {
        text.push_str(&format!("{i},{},{},{},{}\n", float17(it.s), float17(it.j), float17(it.j1), float17(it.j2)));
    }
    text.into_bytes()
}

pub fn optimize(loaded: &Loaded, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let y0 = loaded.initial_data()?;
    let penalty = loaded.penalty()?;
    let opt = loaded.optimizer(&penalty)?;
    let target = loaded.target(&y0)?;
    let seed = loaded.seed(seed);
    let lat = BrownianLattice::generate(seed, loaded.model(), loaded.grid())?;
    let problem = IdentificationProblem::new(loaded.model().clone(), y0, lat, target, penalty)?;
    let report = fracid::optimizer::optimize(&problem, &opt)?;
    if !report.certified {
        log::warn!("optimum at s = {} is not certified", report.s_star);
    }
    write_all(
        out,
        &[
            ("report.json", with_metadata(&report, "optimize", loaded, vec![seed])?.into_bytes()),
            ("trace.csv", trace_csv(&report)),
        ],
    )
}

pub fn montecarlo(loaded: &Loaded, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let y0 = loaded.initial_data()?;
    let penalty = loaded.penalty()?;
    let optimizer = loaded.optimizer(&penalty)?;
    let cfg = loaded.ensemble(seed)?;
    let target = loaded.target(&y0)?;
    let problem = EnsembleProblem { model: loaded.model().clone(), initial: y0, grid: loaded.grid(), target, penalty, optimizer };
    let summary = run_ensemble(&cfg, &problem)?;
    if summary.n_failed > 0 {
        log::warn!("{} of {} paths failed", summary.n_failed, cfg.n_paths);
    }
    write_all(
        out,
        &[
            ("summary.json", with_metadata(&summary, "montecarlo", loaded, vec![cfg.master_seed])?.into_bytes()),
            ("paths.csv", csv_bytes(|b| summary.write_csv(b))?),
        ],
    )
}

pub fn diagnose(loaded: &Loaded, s: Option<f64>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let y0 = loaded.initial_data()?;
    let settings = loaded.diagnostics(s, seed)?;
    let (report, curve) = run_diagnostics(loaded.model(), &y0, loaded.grid(), &settings)?;
    let payload = json!({ "settings": settings, "report": report });
    write_all(
        out,
        &[
            ("diagnostics.json", with_metadata(&payload, "diagnose", loaded, vec![settings.master_seed])?.into_bytes()),
            ("moments.csv", csv_bytes(|b| fracid::diagnostics::write_curve_csv(&curve, b))?),
        ],
    )
}

pub fn admissible(loaded: &Loaded, seed: Option<u64>) -> Result<(), CliError> {
    let upper = loaded.admissible_upper()?;
    let interval = loaded.model().admissible_interval(upper)?;
    let payload: Value = serde_json::to_value(interval).map_err(|e| CliError::Io(e.into()))?;
    print!("{}", with_metadata(&payload, "admissible", loaded, vec![loaded.seed(seed)])?);
    Ok(())
}

