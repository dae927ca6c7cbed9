//! Spectral simulation of `du + 𝓛^s u dt = dW` on a truncated eigenbasis, and
//! identification of the fractional exponent `s` from a target field.
//!
//! Every mode is an Ornstein–Uhlenbeck process with rate `λ_j^s`. One noise
//! lattice drives the state and its `s`-derivatives, so the cost and its first
//! two derivatives are exact for the discrete problem.

pub mod diagnostics;
pub mod error;
pub mod fmt;
pub mod montecarlo;
pub mod noise;
pub mod objective;
pub mod optimizer;
pub mod quadrature;
pub mod sensitivity;
pub mod spectrum;
pub mod state;

pub use diagnostics::{run_diagnostics, DiagnosticsReport, DiagnosticsSettings};
pub use error::{Error, Result};
pub use montecarlo::{run_ensemble, summarize, EnsembleConfig, EnsembleProblem, EnsembleSummary, PathOutcome};
pub use noise::{path_seed, BrownianLattice, TimeGrid, RNG_ALGORITHM};
pub use objective::{
    cost, cost_derivatives, penalty_eval, target_from_solution, CostEvaluation, IdentificationProblem, Penalty, PenaltyValue,
    TargetField, TargetProvenance,
};
pub use optimizer::{optimize, Objective, OptimalityReport, OptimizerConfig};
pub use sensitivity::{assemble_sensitivities, kernel_derivatives, KernelDerivatives, SensitivitySolution};
pub use spectrum::{AdmissibleBasis, AdmissibleInterval, CovarianceLaw, EigenvalueLaw, SpectralModel};
pub use state::{solve_path, InitialData, ModalSolution};

/// Version string embedded in every output artifact.
pub const ARTIFACT_VERSION: &str = concat!("fracid ", env!("CARGO_PKG_VERSION"));
