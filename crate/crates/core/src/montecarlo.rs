//! Ensembles of independent noise realizations, each solved for its own
//! optimal exponent.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::float17;
use crate::noise::{path_seed, BrownianLattice, TimeGrid};
use crate::objective::{IdentificationProblem, Penalty, TargetField};
use crate::optimizer::{optimize, OptimalityReport, OptimizerConfig};
use crate::spectrum::SpectralModel;
use crate::state::InitialData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub master_seed: u64,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Validation("n_paths must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub path: usize,
    pub seed: u64,
    pub report: Option<OptimalityReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub per_path: Vec<PathOutcome>,
    pub n_successful: usize,
    pub n_failed: usize,
    pub s_mean: f64,
    /// Sample standard deviation (n − 1 denominator; 0 for a single path).
    pub s_std: f64,
    /// 5%, 50% and 95% quantiles by linear interpolation of order statistics.
    pub s_quantiles: [f64; 3],
    #[serde(rename = "J_mean")]
    pub j_mean: f64,
    /// Fraction of successful paths whose optimum is certified.
    pub certified_fraction: f64,
}

/// Quantile of sorted data at probability `p`, interpolating linearly between
/// the order statistics at positions `(n − 1) p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregate per-path outcomes in path order.
pub fn summarize(per_path: Vec<PathOutcome>) -> Result<EnsembleSummary> {
    let reports: Vec<&OptimalityReport> = per_path.iter().filter_map(|p| p.report.as_ref()).collect();
    let n_failed = per_path.len() - reports.len();
    if reports.is_empty() {
        return Err(Error::EmptyEnsemble { failed: n_failed });
    }
    let n = reports.len() as f64;
    let s: Vec<f64> = reports.iter().map(|r| r.s_star).collect();
    let s_mean = s.iter().sum::<f64>() / n;
    let s_std = if reports.len() > 1 {
        (s.iter().map(|v| (v - s_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    let j_mean = reports.iter().map(|r| r.j_star).sum::<f64>() / n;
    let certified = reports.iter().filter(|r| r.certified).count();
    Ok(EnsembleSummary {
        n_successful: reports.len(),
        n_failed,
        s_mean,
        s_std,
        s_quantiles: [quantile(&sorted, 0.05), quantile(&sorted, 0.5), quantile(&sorted, 0.95)],
        j_mean,
        certified_fraction: certified as f64 / n,
        per_path,
    })
}

/// Inputs shared by every path of an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleProblem {
    pub model: SpectralModel,
    pub initial: InitialData,
    pub grid: TimeGrid,
    pub target: TargetField,
    pub penalty: Penalty,
    pub optimizer: OptimizerConfig,
}

fn solve_one(problem: &EnsembleProblem, seed: u64) -> Result<OptimalityReport> {
    let lattice = BrownianLattice::generate(seed, &problem.model, problem.grid)?;
    let p = IdentificationProblem::new(
        problem.model.clone(),
        problem.initial.clone(),
        lattice,
        problem.target.clone(),
        problem.penalty.clone(),
    )?;
    optimize(&p, &problem.optimizer)
}

/// Solve the identification problem on `n_paths` realizations. Paths run in
/// parallel; path `k` always uses `path_seed(master_seed, k)`, so the summary
/// does not depend on the thread count.
pub fn run_ensemble(cfg: &EnsembleConfig, problem: &EnsembleProblem) -> Result<EnsembleSummary> {
    cfg.validate()?;
    problem.optimizer.validate()?;
    problem.penalty.validate()?;
    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|k| {
            let seed = path_seed(cfg.master_seed, k as u64);
            match solve_one(problem, seed) {
                Ok(report) => PathOutcome { path: k, seed, report: Some(report), error: None },
                Err(e) => {
                    log::warn!("path {k} (seed {seed}) failed: {e}");
                    PathOutcome { path: k, seed, report: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    summarize(outcomes)
}

impl EnsembleSummary {
    /// CSV with header `path,seed,s_star,J_star,J1,J2,certified`; failed paths
    /// leave the numeric fields empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "path,seed,s_star,J_star,J1,J2,certified")?;
        for p in &self.per_path {
            match &p.report {
                Some(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    p.path,
                    p.seed,
                    float17(r.s_star),
                    float17(r.j_star),
                    float17(r.necessary_residual),
                    float17(r.sufficient_value),
                    r.certified
                )?,
                None => writeln!(out, "{},{},,,,,false", p.path, p.seed)?,
            }
        }
        Ok(())
    }
}
