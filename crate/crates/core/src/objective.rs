//! Random cost functional `J(s, ω) = ∫_0^T ‖y(s) − y_D‖²_{L²(D)} dt + Φ(s)` and
//! its first two `s`-derivatives.
//!
//! Time integrals use the trapezoidal rule on the shared grid, so the
//! derivatives returned here are the exact derivatives of the discrete cost.
//! They carry the factor 2 from differentiating the squared misfit.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::float17;
use crate::noise::{BrownianLattice, TimeGrid};
use crate::optimizer::Objective;
use crate::sensitivity::{assemble_sensitivities, SensitivitySolution};
use crate::spectrum::SpectralModel;
use crate::state::{field_misfit_density, mean_mode, solve_path, InitialData, ModalSolution};

/// Trapezoidal rule for samples on a uniform grid with spacing `dt`.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => dt * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// `Φ(s)` with `Φ′(s)` and `Φ″(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    /// `Φ = w / (s (L − s))` on `(0, L)`.
    Barrier {
        #[serde(alias = "L")]
        limit: f64,
        weight: f64,
    },
    /// `Φ = w e^s / s` on `(0, ∞)`.
    ExpOverS { weight: f64 },
    /// Rows `[s, Φ, Φ′, Φ″]` at ascending nodes, joined by quintic Hermite
    /// pieces so that the interpolant and its first two derivatives agree.
    Custom { table: Vec<[f64; 4]> },
}

// Quintic Hermite basis on [0, 1] as coefficients of t^0..t^5, ordered
// (f0, f0', f0'', f1'', f1', f1).
const HERMITE5: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
    [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
    [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
    [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
    [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
];

fn poly_with_derivatives(c: &[f64; 6], t: f64) -> (f64, f64, f64) {
    let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
    for ck in c.iter().rev() {
        ddp = ddp * t + 2.0 * dp;
        dp = dp * t + p;
        p = p * t + ck;
    }
    (p, dp, ddp)
}

impl Penalty {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("penalty {name} must be positive, got {v}")))
            }
        };
        match self {
            Penalty::Barrier { limit, weight } => {
                pos("limit L", *limit)?;
                pos("weight", *weight)
            }
            Penalty::ExpOverS { weight } => pos("weight", *weight),
            Penalty::Custom { table } => {
                if table.len() < 2 {
                    return Err(Error::Validation("custom penalty table needs at least two rows".into()));
                }
                if table.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Validation("custom penalty table has non-finite entries".into()));
                }
                if table.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::Validation("custom penalty nodes must be strictly ascending".into()));
                }
                if table.iter().any(|row| row[1] < 0.0) {
                    return Err(Error::Validation("custom penalty values must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    /// Domain of the penalty as `(lo, hi, closed)`.
    pub fn domain(&self) -> (f64, f64, bool) {
        match self {
            Penalty::Barrier { limit, .. } => (0.0, *limit, false),
            Penalty::ExpOverS { .. } => (0.0, f64::INFINITY, false),
            Penalty::Custom { table } => (table[0][0], table[table.len() - 1][0], true),
        }
    }

    pub fn in_domain(&self, s: f64) -> bool {
        let (lo, hi, closed) = self.domain();
        if closed {
            s >= lo && s <= hi
        } else {
            s > lo && s < hi
        }
    }

    pub fn eval(&self, s: f64) -> Result<PenaltyValue> {
        if !self.in_domain(s) {
            let (lo, hi, _) = self.domain();
            return Err(Error::Domain(format!("s = {s} outside the penalty domain ({lo}, {hi})")));
        }
        Ok(match self {
            Penalty::Barrier { limit, weight } => {
                let g = s * (limit - s);
                let dg = limit - 2.0 * s;
                PenaltyValue {
                    value: weight / g,
                    d1: -weight * dg / (g * g),
                    d2: weight * (2.0 * dg * dg / (g * g * g) + 2.0 / (g * g)),
                }
            }
            Penalty::ExpOverS { weight } => {
                let e = s.exp();
                PenaltyValue {
                    value: weight * e / s,
                    d1: weight * e * (s - 1.0) / (s * s),
                    d2: weight * e * (s * s - 2.0 * s + 2.0) / (s * s * s),
                }
            }
            Penalty::Custom { table } => {
                let i = table.partition_point(|row| row[0] <= s).clamp(1, table.len() - 1) - 1;
                let (a, b) = (table[i], table[i + 1]);
                let h = b[0] - a[0];
                let t = (s - a[0]) / h;
                let weights = [a[1], h * a[2], h * h * a[3], h * h * b[3], h * b[2], b[1]];
                let mut coeffs = [0.0; 6];
                for (w, basis) in weights.iter().zip(HERMITE5.iter()) {
                    for (c, bk) in coeffs.iter_mut().zip(basis) {
                        *c += w * bk;
                    }
                }
                let (p, dp, ddp) = poly_with_derivatives(&coeffs, t);
                PenaltyValue { value: p, d1: dp / h, d2: ddp / (h * h) }
            }
        })
    }

    /// Tabulate `Φ, Φ′, Φ″` of closures at `nodes`.
    pub fn tabulate(nodes: &[f64], f: impl Fn(f64) -> (f64, f64, f64)) -> Self {
        Penalty::Custom {
            table: nodes
                .iter()
                .map(|&s| {
                    let (v, d1, d2) = f(s);
                    [s, v, d1, d2]
                })
                .collect(),
        }
    }
}

/// `Φ(s), Φ′(s), Φ″(s)`.
pub fn penalty_eval(p: &Penalty, s: f64) -> Result<PenaltyValue> {
    p.eval(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetProvenance {
    Constant { value: f64 },
    /// Solution at `s_true`, on the noise of `seed` or noiseless when `None`.
    FromSolution { s_true: f64, seed: Option<u64> },
    FromFile { path: String },
}

/// Modal coefficients `y_{D,j}(t_n)` of the target, shape `[N, M+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetField {
    pub coeffs: Array2<f64>,
    pub provenance: TargetProvenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSidecar {
    pub provenance: TargetProvenance,
    pub n_modes: usize,
    pub n_steps: usize,
}

impl TargetField {
    pub fn new(coeffs: Array2<f64>, provenance: TargetProvenance) -> Self {
        TargetField { coeffs, provenance }
    }

    pub fn constant(n_modes: usize, grid: TimeGrid, value: f64) -> Self {
        TargetField {
            coeffs: Array2::from_elem((n_modes, grid.n_steps + 1), value),
            provenance: TargetProvenance::Constant { value },
        }
    }

    pub fn check_shape(&self, n_modes: usize, n_steps: usize) -> Result<()> {
        if self.coeffs.dim() != (n_modes, n_steps + 1) {
            return Err(Error::Shape(format!(
                "target is {:?}, expected ({n_modes}, {})",
                self.coeffs.dim(),
                n_steps + 1
            )));
        }
        Ok(())
    }

    pub fn sidecar(&self) -> TargetSidecar {
        TargetSidecar {
            provenance: self.provenance.clone(),
            n_modes: self.coeffs.nrows(),
            n_steps: self.coeffs.ncols() - 1,
        }
    }

    /// CSV with header `mode,step,value`; modes are 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mode,step,value")?;
        for ((j, n), v) in self.coeffs.indexed_iter() {
            writeln!(out, "{},{},{}", j + 1, n, float17(*v))?;
        }
        Ok(())
    }

    /// Read the `mode,step,value` layout; every `(mode, step)` of the expected
    /// shape must appear exactly once.
    pub fn read_csv<R: BufRead>(input: R, n_modes: usize, n_steps: usize, provenance: TargetProvenance) -> Result<Self> {
        let mut coeffs = Array2::from_elem((n_modes, n_steps + 1), f64::NAN);
        let mut seen = 0usize;
        for (line_no, line) in input.lines().enumerate() {
            let line = line?;
            if line_no == 0 {
                if line.trim() != "mode,step,value" {
                    return Err(Error::Validation(format!("unexpected target header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Validation(format!("malformed target row {}: {line:?}", line_no + 1));
            let mut parts = line.split(',');
            let j: usize = parts.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let n: usize = parts.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            if j == 0 || j > n_modes || n > n_steps {
                return Err(Error::Shape(format!("target row ({j}, {n}) outside {n_modes} modes x {n_steps} steps")));
            }
            if !coeffs[[j - 1, n]].is_nan() {
                return Err(Error::Validation(format!("duplicate target entry ({j}, {n})")));
            }
            coeffs[[j - 1, n]] = v;
            seen += 1;
        }
        if seen != coeffs.len() {
            return Err(Error::Shape(format!("target file has {seen} entries, expected {}", coeffs.len())));
        }
        Ok(TargetField { coeffs, provenance })
    }
}

/// Synthetic target: the solution at `s_true` on the noise of `seed`, or only
/// its deterministic part when `seed` is `None`.
pub fn target_from_solution(
    model: &SpectralModel,
    y0: &InitialData,
    grid: TimeGrid,
    seed: Option<u64>,
    s_true: f64,
) -> Result<TargetField> {
    if y0.len() != model.n_modes() {
        return Err(Error::Shape(format!("initial data has {} modes, model {}", y0.len(), model.n_modes())));
    }
    let provenance = TargetProvenance::FromSolution { s_true, seed };
    let coeffs = match seed {
        Some(seed) => {
            let lat = BrownianLattice::generate(seed, model, grid)?;
            solve_path(model, y0, &lat, s_true)?.field()
        }
        None => {
            if !(s_true > 0.0) {
                return Err(Error::Domain(format!("s_true must be positive, got {s_true}")));
            }
            let mut c = Array2::zeros((model.n_modes(), grid.n_steps + 1));
            for ((j, n), v) in c.indexed_iter_mut() {
                *v = mean_mode(y0.coeffs()[j], model.eigenvalues()[j], s_true, grid.time(n));
            }
            c
        }
    };
    Ok(TargetField { coeffs, provenance })
}

/// `J` with its breakdown; `J1`, `J2` are present when derivatives were requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEvaluation {
    pub s: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J1")]
    pub j1: Option<f64>,
    #[serde(rename = "J2")]
    pub j2: Option<f64>,
    pub misfit: f64,
    pub penalty_value: f64,
}

pub fn cost(sol: &ModalSolution, target: &TargetField, p: &Penalty) -> Result<CostEvaluation> {
    target.check_shape(sol.n_modes(), sol.grid.n_steps)?;
    let phi = p.eval(sol.s)?;
    let density: Vec<f64> = (0..=sol.grid.n_steps)
        .map(|n| field_misfit_density(sol, target, n))
        .collect::<Result<_>>()?;
    let misfit = trapezoid(&density, sol.grid.dt());
    Ok(CostEvaluation { s: sol.s, j: misfit + phi.value, j1: None, j2: None, misfit, penalty_value: phi.value })
}

pub fn cost_derivatives(
    sol: &ModalSolution,
    sens: &SensitivitySolution,
    target: &TargetField,
    p: &Penalty,
) -> Result<CostEvaluation> {
    if sol.s != sens.s || sol.grid != sens.grid || sol.seed != sens.seed || sol.n_modes() != sens.n_modes() {
        return Err(Error::Consistency(format!(
            "solution (s = {}, seed {}) and sensitivities (s = {}, seed {}) differ",
            sol.s, sol.seed, sens.s, sens.seed
        )));
    }
    target.check_shape(sol.n_modes(), sol.grid.n_steps)?;
    let phi = p.eval(sol.s)?;
    let resid = &sol.field() - &target.coeffs;
    let d1 = sens.d1_field();
    let d2 = sens.d2_field();
    let cols = sol.grid.n_steps + 1;
    let mut misfit_t = Vec::with_capacity(cols);
    let mut grad_t = Vec::with_capacity(cols);
    let mut curv_t = Vec::with_capacity(cols);
    for n in 0..cols {
        let (r, g, h) = (resid.column(n), d1.column(n), d2.column(n));
        misfit_t.push(r.dot(&r));
        grad_t.push(r.dot(&g));
        curv_t.push(g.dot(&g) + r.dot(&h));
    }
    let dt = sol.grid.dt();
    let misfit = trapezoid(&misfit_t, dt);
    Ok(CostEvaluation {
        s: sol.s,
        j: misfit + phi.value,
        j1: Some(2.0 * trapezoid(&grad_t, dt) + phi.d1),
        j2: Some(2.0 * trapezoid(&curv_t, dt) + phi.d2),
        misfit,
        penalty_value: phi.value,
    })
}

/// One noise realization of the identification problem: everything `J(·, ω)`
/// needs except the exponent.
#[derive(Debug, Clone)]
pub struct IdentificationProblem {
    pub model: SpectralModel,
    pub initial: InitialData,
    pub lattice: BrownianLattice,
    pub target: TargetField,
    pub penalty: Penalty,
}

impl IdentificationProblem {
    pub fn new(
        model: SpectralModel,
        initial: InitialData,
        lattice: BrownianLattice,
        target: TargetField,
        penalty: Penalty,
    ) -> Result<Self> {
        crate::state::check_shapes(&model, &initial, &lattice)?;
        target.check_shape(model.n_modes(), lattice.grid().n_steps)?;
        penalty.validate()?;
        Ok(IdentificationProblem { model, initial, lattice, target, penalty })
    }

    pub fn evaluate(&self, s: f64) -> Result<CostEvaluation> {
        let sol = solve_path(&self.model, &self.initial, &self.lattice, s)?;
        cost(&sol, &self.target, &self.penalty)
    }

    pub fn evaluate_with_derivatives(&self, s: f64) -> Result<CostEvaluation> {
        let sol = solve_path(&self.model, &self.initial, &self.lattice, s)?;
        let sens = assemble_sensitivities(&self.model, &self.initial, &self.lattice, s)?;
        cost_derivatives(&sol, &sens, &self.target, &self.penalty)
    }
}

impl Objective for IdentificationProblem {
    fn value(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.j)
    }

    fn derivatives(&self, s: f64) -> Result<(f64, f64, f64)> {
        let e = self.evaluate_with_derivatives(s)?;
        Ok((e.j, e.j1.unwrap_or(f64::NAN), e.j2.unwrap_or(f64::NAN)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::CovarianceLaw;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn problem(n: usize, m: usize, seed: u64, target_seed: Option<u64>, s_true: f64) -> IdentificationProblem {
        let model = SpectralModel::dirichlet_laplacian(n, CovarianceLaw::MatchedDecay { epsilon: 1.0, s_ref: 1.0 }).unwrap();
        let grid = TimeGrid::new(1.0, m).unwrap();
        let y0 = InitialData::inverse_mode(n);
        let lat = BrownianLattice::generate(seed, &model, grid).unwrap();
        let target = target_from_solution(&model, &y0, grid, target_seed, s_true).unwrap();
        IdentificationProblem::new(model, y0, lat, target, Penalty::Barrier { limit: 2.0, weight: 0.01 }).unwrap()
    }

    #[test]
    fn penalty_examples() {
        let b = Penalty::Barrier { limit: 2.0, weight: 1.0 };
        let v = b.eval(1.0).unwrap();
        assert_eq!((v.value, v.d1), (1.0, 0.0));
        assert_relative_eq!(b.eval(0.5).unwrap().value, 1.0 / 0.75, max_relative = 1e-15);
        let e = Penalty::ExpOverS { weight: 1.0 };
        let v = e.eval(1.0).unwrap();
        assert_relative_eq!(v.value, std::f64::consts::E, max_relative = 1e-15);
        assert_eq!(v.d1, 0.0);
        assert!(matches!(b.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(b.eval(2.0), Err(Error::Domain(_))));
        assert!(matches!(e.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn penalty_derivatives_match_differences() {
        let h = 1e-5;
        for p in [
            Penalty::Barrier { limit: 2.0, weight: 0.7 },
            Penalty::ExpOverS { weight: 1.3 },
            Penalty::tabulate(&[0.2, 0.7, 1.1, 1.9], |s| ((s - 1.3).powi(2), 2.0 * (s - 1.3), 2.0)),
        ] {
            for s in [0.3, 0.9, 1.35, 1.8] {
                let v = p.eval(s).unwrap();
                let (lo, hi) = (p.eval(s - h).unwrap(), p.eval(s + h).unwrap());
                assert_relative_eq!(v.d1, (hi.value - lo.value) / (2.0 * h), epsilon = 1e-7, max_relative = 1e-7);
                assert_relative_eq!(v.d2, (hi.d1 - lo.d1) / (2.0 * h), epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn custom_penalty_reproduces_quintics() {
        let f = |s: f64| 0.3 + s - 2.0 * s.powi(2) + 0.5 * s.powi(3) + 0.25 * s.powi(5);
        let df = |s: f64| 1.0 - 4.0 * s + 1.5 * s.powi(2) + 1.25 * s.powi(4);
        let ddf = |s: f64| -4.0 + 3.0 * s + 5.0 * s.powi(3);
        let p = Penalty::tabulate(&[0.0, 0.4, 1.0, 1.7], |s| (f(s), df(s), ddf(s)));
        p.validate().unwrap();
        for s in [0.0, 0.1, 0.55, 1.0, 1.31, 1.7] {
            let v = p.eval(s).unwrap();
            assert_relative_eq!(v.value, f(s), epsilon = 1e-12);
            assert_relative_eq!(v.d1, df(s), epsilon = 1e-11);
            assert_relative_eq!(v.d2, ddf(s), epsilon = 1e-10);
        }
        assert!(p.eval(1.71).is_err());
        assert!(Penalty::Custom { table: vec![[1.0, 0.0, 0.0, 0.0]] }.validate().is_err());
        assert!(Penalty::Custom { table: vec![[1.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0]] }.validate().is_err());
    }

    #[test]
    fn trapezoid_rules() {
        assert_eq!(trapezoid(&[], 0.1), 0.0);
        assert_eq!(trapezoid(&[3.0], 0.1), 0.0);
        assert_relative_eq!(trapezoid(&[2.0; 11], 0.1), 2.0, max_relative = 1e-15);
        let err = |m: usize| {
            let dt = 1.0 / m as f64;
            let v: Vec<f64> = (0..=m).map(|n| (n as f64 * dt).exp()).collect();
            (trapezoid(&v, dt) - (std::f64::consts::E - 1.0)).abs()
        };
        let order = (err(64) / err(128)).log2();
        assert!((order - 2.0).abs() < 0.05, "order {order}");
    }

    #[test]
    fn cost_examples() {
        let p = problem(3, 64, 5, Some(5), 1.1);
        let e = p.evaluate(1.1).unwrap();
        assert_eq!(e.misfit, 0.0);
        assert_eq!(e.j, p.penalty.eval(1.1).unwrap().value);

        // single mode, constant residual c
        let model = SpectralModel::dirichlet_laplacian(1, CovarianceLaw::Explicit { values: vec![0.0] }).unwrap();
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let lat = BrownianLattice::generate(1, &model, grid).unwrap();
        let sol = solve_path(&model, &InitialData::zeros(1), &lat, 1.0).unwrap();
        let target = TargetField::constant(1, grid, 0.5);
        let c = cost(&sol, &target, &Penalty::Barrier { limit: 2.0, weight: 1.0 }).unwrap();
        assert_relative_eq!(c.misfit, 0.25 * 2.0, max_relative = 1e-14);
        assert_relative_eq!(c.j, c.misfit + 1.0, max_relative = 1e-15);
    }

    #[test]
    fn misfit_of_linear_residuals() {
        // y − y_D = (t, 1 − t) on [0, 1]
        let model = SpectralModel::dirichlet_laplacian(2, CovarianceLaw::Explicit { values: vec![0.0; 2] }).unwrap();
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let lat = BrownianLattice::generate(1, &model, grid).unwrap();
        let sol = solve_path(&model, &InitialData::zeros(2), &lat, 1.0).unwrap();
        let mut coeffs = Array2::zeros((2, 1001));
        for n in 0..=1000 {
            let t = grid.time(n);
            coeffs[[0, n]] = -t;
            coeffs[[1, n]] = t - 1.0;
        }
        let target = TargetField::new(coeffs, TargetProvenance::Constant { value: 0.0 });
        let c = cost(&sol, &target, &Penalty::ExpOverS { weight: 1.0 }).unwrap();
        assert!((c.misfit - 2.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn matched_target_leaves_penalty_derivatives() {
        let p = problem(3, 64, 5, Some(5), 1.2);
        let e = p.evaluate_with_derivatives(1.2).unwrap();
        let phi = p.penalty.eval(1.2).unwrap();
        assert_eq!(e.j1.unwrap(), phi.d1);
        let sens = assemble_sensitivities(&p.model, &p.initial, &p.lattice, 1.2).unwrap();
        let d1 = sens.d1_field();
        let per_t: Vec<f64> = d1.columns().into_iter().map(|c| c.dot(&c)).collect();
        assert_relative_eq!(e.j2.unwrap(), 2.0 * trapezoid(&per_t, p.lattice.grid().dt()) + phi.d2, max_relative = 1e-13);
    }

    #[test]
    fn noiseless_gradient_matches_symbolic_derivative() {
        // one mode, y0 = 1, target 0: misfit ≈ (1 − e^{-2λ^s T})/(2λ^s)
        let lambda = 3.0f64;
        let model = SpectralModel::new(
            crate::spectrum::EigenvalueLaw::Explicit { values: vec![lambda] },
            CovarianceLaw::Explicit { values: vec![0.0] },
            1.0,
            1,
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 4000).unwrap();
        let lat = BrownianLattice::generate(0, &model, grid).unwrap();
        let y0 = InitialData::new(vec![1.0]).unwrap();
        let penalty = Penalty::ExpOverS { weight: 0.1 };
        let p = IdentificationProblem::new(model, y0, lat, TargetField::constant(1, grid, 0.0), penalty.clone()).unwrap();
        let s = 0.8;
        let a = lambda.powf(s);
        let ln_l = lambda.ln();
        // d/ds (1 − e^{-2aT})/(2a) with da/ds = a ln λ
        let symbolic = ln_l * ((2.0 * a * (-2.0 * a).exp()) / (2.0 * a) - (1.0 - (-2.0 * a).exp()) / (2.0 * a));
        let e = p.evaluate_with_derivatives(s).unwrap();
        let j1 = e.j1.unwrap() - penalty.eval(s).unwrap().d1;
        assert_relative_eq!(j1, symbolic, max_relative = 1e-5);
    }

    #[test]
    fn derivatives_match_differences_on_shared_noise() {
        let p = problem(6, 128, 11, Some(99), 1.0);
        let h = 1e-4;
        for s in [0.7, 1.0, 1.4] {
            let e = p.evaluate_with_derivatives(s).unwrap();
            let j1 = e.j1.unwrap();
            let fd1 = (p.evaluate(s + h).unwrap().j - p.evaluate(s - h).unwrap().j) / (2.0 * h);
            assert!((fd1 - j1).abs() <= 1e-4 * j1.abs().max(1.0), "J1 {j1} fd {fd1}");
            let j2 = e.j2.unwrap();
            let fd2 = (p.evaluate_with_derivatives(s + h).unwrap().j1.unwrap()
                - p.evaluate_with_derivatives(s - h).unwrap().j1.unwrap())
                / (2.0 * h);
            assert!((fd2 - j2).abs() <= 1e-3 * j2.abs().max(1.0), "J2 {j2} fd {fd2}");
        }
    }

    #[test]
    fn consistency_errors() {
        let p = problem(3, 16, 1, None, 1.0);
        let sol = solve_path(&p.model, &p.initial, &p.lattice, 1.0).unwrap();
        let sens = assemble_sensitivities(&p.model, &p.initial, &p.lattice, 1.1).unwrap();
        assert!(matches!(cost_derivatives(&sol, &sens, &p.target, &p.penalty), Err(Error::Consistency(_))));
        let wrong = TargetField::constant(2, p.lattice.grid(), 0.0);
        assert!(matches!(cost(&sol, &wrong, &p.penalty), Err(Error::Shape(_))));
    }

    #[test]
    fn synthetic_targets() {
        let model = SpectralModel::dirichlet_laplacian(4, CovarianceLaw::MatchedDecay { epsilon: 1.0, s_ref: 1.0 }).unwrap();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let t = target_from_solution(&model, &InitialData::zeros(4), grid, None, 1.0).unwrap();
        assert!(t.coeffs.iter().all(|v| *v == 0.0));

        // noiseless misfit scan has its zero at s_true
        let y0 = InitialData::inverse_mode(4);
        let target = target_from_solution(&model, &y0, grid, None, 1.0).unwrap();
        let quiet = model.with_noise_scale(0.0).unwrap();
        let lat = BrownianLattice::generate(0, &quiet, grid).unwrap();
        let scan: Vec<(f64, f64)> = (0..=1000)
            .map(|i| {
                let s = 0.6 + 0.8 * i as f64 / 1000.0;
                (s, cost(&solve_path(&quiet, &y0, &lat, s).unwrap(), &target, &Penalty::ExpOverS { weight: 1.0 }).unwrap().misfit)
            })
            .collect();
        let best = scan.iter().cloned().fold((0.0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        assert!((best.0 - 1.0).abs() < 1e-9 && best.1 == 0.0);
        assert!(scan.iter().filter(|(_, m)| *m == 0.0).count() == 1);
    }

    #[test]
    fn target_csv_round_trip_and_errors() {
        let model = SpectralModel::dirichlet_laplacian(2, CovarianceLaw::MatchedDecay { epsilon: 1.0, s_ref: 1.0 }).unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let t = target_from_solution(&model, &InitialData::inverse_mode(2), grid, Some(3), 0.9).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = TargetField::read_csv(&buf[..], 2, 5, t.provenance.clone()).unwrap();
        assert_eq!(back, t);
        assert!(TargetField::read_csv(&buf[..], 2, 6, t.provenance.clone()).is_err());
        assert!(TargetField::read_csv(&b"mode,step,value\n1,0,abc\n"[..], 1, 0, t.provenance.clone()).is_err());
        let sidecar = serde_json::to_value(t.sidecar()).unwrap();
        assert_eq!(sidecar["provenance"]["kind"], "from_solution");
    }

    proptest! {
        #[test]
        fn cost_is_nonnegative(s in 0.3f64..1.9, seed in 0u64..50) {
            let p = problem(3, 32, seed, Some(seed + 1), 1.0);
            let e = p.evaluate(s).unwrap();
            prop_assert!(e.j >= 0.0 && e.misfit >= 0.0);
            prop_assert_eq!(e.j, e.misfit + e.penalty_value);
        }
    }
}
