//! Pathwise modal solutions of the state equation.
//!
//! Each mode is a fractional Ornstein–Uhlenbeck process
//! `y_j(t) = y_{0,j} e^{-λ_j^s t} + √μ_j ∫_0^t e^{-λ_j^s (t-τ)} dB_j(τ)`.
//! The deterministic part is evaluated in closed form; the stochastic
//! convolution is the left-point Riemann–Itô sum over the shared
//! increments, so every `s` sees the same noise.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::float17;
use crate::noise::{BrownianLattice, TimeGrid};
use crate::objective::TargetField;
use crate::spectrum::SpectralModel;

/// Modal coefficients `y_{0,j} = ⟨y_0, e_j⟩` of a deterministic initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    coeffs: Vec<f64>,
}

impl InitialData {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(v) = coeffs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("initial coefficient {v} is not finite")));
        }
        Ok(InitialData { coeffs })
    }

    pub fn zeros(n_modes: usize) -> Self {
        InitialData { coeffs: vec![0.0; n_modes] }
    }

    /// `y_{0,j} = 1/j`.
    pub fn inverse_mode(n_modes: usize) -> Self {
        InitialData { coeffs: (1..=n_modes).map(|j| 1.0 / j as f64).collect() }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum()
    }
}

/// `y_{0,j} e^{-λ_j^s t}`.
pub fn mean_mode(y0j: f64, lambda_j: f64, s: f64, t: f64) -> f64 {
    y0j * (-lambda_j.powf(s) * t).exp()
}

/// Left-point Riemann–Itô sum `√μ Σ_{m<n} e^{-λ^s (t_n - t_m)} ΔB_m` for every
/// grid index, via `w[n+1] = e^{-λ^s dt} (w[n] + √μ ΔB_n)`.
pub fn convolution_mode(increments: ArrayView1<'_, f64>, dt: f64, mu_j: f64, lambda_j: f64, s: f64) -> Vec<f64> {
    let mut w = vec![0.0; increments.len() + 1];
    if mu_j == 0.0 {
        return w;
    }
    let decay = (-lambda_j.powf(s) * dt).exp();
    let amp = mu_j.sqrt();
    for (n, db) in increments.iter().enumerate() {
        w[n + 1] = decay * (w[n] + amp * db);
    }
    w
}

/// `E|W^j(t)|² = μ (1 − e^{-2λ^s t}) / (2λ^s)`.
pub fn second_moment_convolution(mu_j: f64, lambda_j: f64, s: f64, t: f64) -> f64 {
    let a = lambda_j.powf(s);
    // -expm1 keeps accuracy for small a·t.
    mu_j * -(-2.0 * a * t).exp_m1() / (2.0 * a)
}

/// Deterministic part and stochastic convolution of every mode on the grid,
/// for one exponent and one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalSolution {
    pub s: f64,
    /// `m_j(t_n, s)`, shape `[N, M+1]`.
    pub mean: Array2<f64>,
    /// `W_{𝓛,s}^j(t_n)`, shape `[N, M+1]`.
    pub convolution: Array2<f64>,
    pub grid: TimeGrid,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub s: f64,
    pub seed: u64,
    pub grid: TimeGrid,
    pub n_modes: usize,
    /// `‖y(T)‖²_{L²(D)}` by Parseval.
    pub final_l2_norm_sq: f64,
    /// Trapezoidal `∫_0^T ‖y(t)‖² dt`.
    pub space_time_l2_norm_sq: f64,
}

impl ModalSolution {
    pub fn n_modes(&self) -> usize {
        self.mean.nrows()
    }

    /// `y_j(t_n)` for 0-based `j`.
    pub fn coefficient(&self, j: usize, n: usize) -> f64 {
        self.mean[[j, n]] + self.convolution[[j, n]]
    }

    /// `y = m + W`, shape `[N, M+1]`.
    pub fn field(&self) -> Array2<f64> {
        &self.mean + &self.convolution
    }

    pub fn summary(&self) -> SolutionSummary {
        let field = self.field();
        let m = self.grid.n_steps;
        let norms: Vec<f64> = field.columns().into_iter().map(|c| c.dot(&c)).collect();
        SolutionSummary {
            s: self.s,
            seed: self.seed,
            grid: self.grid,
            n_modes: self.n_modes(),
            final_l2_norm_sq: norms[m],
            space_time_l2_norm_sq: crate::objective::trapezoid(&norms, self.grid.dt()),
        }
    }

    /// CSV with header `mode,step,mean,convolution`; modes are 1-based.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mode,step,mean,convolution")?;
        for j in 0..self.n_modes() {
            for n in 0..=self.grid.n_steps {
                writeln!(
                    out,
                    "{},{},{},{}",
                    j + 1,
                    n,
                    float17(self.mean[[j, n]]),
                    float17(self.convolution[[j, n]])
                )?;
            }
        }
        Ok(())
    }
}

pub(crate) fn check_shapes(model: &SpectralModel, y0: &InitialData, lat: &BrownianLattice) -> Result<()> {
    if y0.len() != model.n_modes() || lat.n_modes() != model.n_modes() {
        return Err(Error::Shape(format!(
            "model has {} modes, initial data {}, lattice {}",
            model.n_modes(),
            y0.len(),
            lat.n_modes()
        )));
    }
    Ok(())
}

pub(crate) fn check_exponent(model: &SpectralModel, s: f64) -> Result<()> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Domain(format!("exponent s must be positive, got {s}")));
    }
    if let Ok(interval) = model.admissible_interval(f64::INFINITY) {
        if s <= interval.s_min {
            log::warn!("s = {s} is outside the admissible set (s_min = {})", interval.s_min);
        }
    }
    if let Some(limit) = model.noise_regularity_limit() {
        if s >= limit {
            log::warn!("s = {s} exceeds the exponent {limit} up to which Σ μ_j λ_j^s converges");
        }
    }
    Ok(())
}

/// Solve every mode for exponent `s` on the lattice's noise.
pub fn solve_path(model: &SpectralModel, y0: &InitialData, lat: &BrownianLattice, s: f64) -> Result<ModalSolution> {
    check_shapes(model, y0, lat)?;
    check_exponent(model, s)?;
    let grid = lat.grid();
    let n_modes = model.n_modes();
    let cols = grid.n_steps + 1;
    let mut mean = Array2::zeros((n_modes, cols));
    let mut convolution = Array2::zeros((n_modes, cols));
    for j in 0..n_modes {
        let lambda = model.eigenvalues()[j];
        let y0j = y0.coeffs()[j];
        for (n, t) in grid.times().enumerate() {
            mean[[j, n]] = mean_mode(y0j, lambda, s, t);
        }
        let w = convolution_mode(lat.increments().row(j), grid.dt(), model.covariances()[j], lambda, s);
        convolution.row_mut(j).assign(&ArrayView1::from(&w));
    }
    Ok(ModalSolution { s, mean, convolution, grid, seed: lat.seed() })
}

/// `Σ_j (y_j(t_n) − y_{D,j}(t_n))²`, the squared `L²(D)` misfit at one time by Parseval.
pub fn field_misfit_density(sol: &ModalSolution, target: &TargetField, n: usize) -> Result<f64> {
    target.check_shape(sol.n_modes(), sol.grid.n_steps)?;
    if n > sol.grid.n_steps {
        return Err(Error::Index { what: "grid step", index: n, len: sol.grid.n_steps });
    }
    Ok((0..sol.n_modes())
        .map(|j| {
            let d = sol.coefficient(j, n) - target.coeffs[[j, n]];
            d * d
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::path_seed;
    use crate::objective::TargetProvenance;
    use crate::spectrum::CovarianceLaw;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rayon::prelude::*;

    fn direct_sum(incs: &[f64], dt: f64, mu: f64, a: f64) -> Vec<f64> {
        (0..=incs.len())
            .map(|n| {
                (0..n)
                    .map(|m| (-a * (n - m) as f64 * dt).exp() * mu.sqrt() * incs[m])
                    .sum()
            })
            .collect()
    }

    fn const_noise_model(n: usize, mu: f64) -> SpectralModel {
        SpectralModel::dirichlet_laplacian(n, CovarianceLaw::Explicit { values: vec![mu; n] }).unwrap()
    }

    #[test]
    fn mean_mode_examples() {
        assert_eq!(mean_mode(0.7, 3.0, 1.2, 0.0), 0.7);
        assert_relative_eq!(mean_mode(1.0, 2.0, 1.0, 1.0), 0.1353353, epsilon = 1e-7);
        assert_relative_eq!(mean_mode(3.0, 4.0, 0.5, 2.0), 0.0549469, epsilon = 1e-7);
        // one-step transition is exact
        let (a, b) = (mean_mode(1.3, 5.0, 0.8, 0.4), mean_mode(1.3, 5.0, 0.8, 0.45));
        assert_relative_eq!(b, (-(5.0f64).powf(0.8) * 0.05).exp() * a, max_relative = 1e-14);
    }

    #[test]
    fn convolution_examples() {
        let incs = ndarray::array![0.1, -0.05, 0.2, 0.0];
        assert!(convolution_mode(incs.view(), 0.25, 0.0, 2.0, 1.0).iter().all(|w| *w == 0.0));

        let one = ndarray::array![0.3];
        let w = convolution_mode(one.view(), 0.1, 4.0, 3.0, 0.5);
        assert_relative_eq!(w[1], 2.0 * (-(3.0f64).sqrt() * 0.1).exp() * 0.3, max_relative = 1e-15);

        // λ^s = 2 with λ = 2, s = 1
        let w = convolution_mode(incs.view(), 0.25, 1.0, 2.0, 1.0);
        let direct: f64 = [0.1, -0.05, 0.2, 0.0]
            .iter()
            .enumerate()
            .map(|(m, db)| (-2.0 * (1.0 - 0.25 * m as f64)).exp() * db)
            .sum();
        assert!((w[4] - direct).abs() < 1e-12);
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment_convolution(1.0, 2.0, 1.0, 0.0), 0.0);
        assert_relative_eq!(second_moment_convolution(1.0, 2.0, 1.0, 1.0), 0.24542109027781645, max_relative = 1e-14);
        assert_relative_eq!(second_moment_convolution(2.0, 4.0, 0.5, 50.0), 0.5, max_relative = 1e-15);
        let exact = (1.0 - (-4.0f64).exp()) / 4.0;
        let quad = crate::quadrature::adaptive_simpson(&|tau: f64| (-4.0 * (1.0 - tau)).exp(), 0.0, 1.0, 1e-13);
        assert_relative_eq!(exact, quad, max_relative = 1e-10);
        assert!(second_moment_convolution(3.0, 1.5, 0.7, 9.0) <= 3.0 / (2.0 * 0.5f64.powf(0.7)));
    }

    #[test]
    fn null_dynamics() {
        let model = const_noise_model(3, 0.0);
        let lat = BrownianLattice::generate(1, &model, TimeGrid::new(1.0, 50).unwrap()).unwrap();
        let sol = solve_path(&model, &InitialData::zeros(3), &lat, 1.0).unwrap();
        assert!(sol.field().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_decays_to_convolution_regime() {
        let model = const_noise_model(2, 1.0);
        let lat = BrownianLattice::generate(1, &model, TimeGrid::new(1.0, 50).unwrap()).unwrap();
        // λ_1 = 1 so use s with λ_2^s T = 4^s > 30
        let sol = solve_path(&model, &InitialData::new(vec![1.0, 1.0]).unwrap(), &lat, 2.5).unwrap();
        assert!(sol.mean[[1, 50]].abs() < 1e-10);
        for j in 0..2 {
            assert_eq!(sol.mean[[j, 0]], 1.0);
            assert_eq!(sol.convolution[[j, 0]], 0.0);
            assert!(sol.mean.row(j).iter().all(|m| m.abs() <= 1.0));
        }
    }

    #[test]
    fn shape_mismatch() {
        let model = const_noise_model(3, 1.0);
        let lat = BrownianLattice::generate(1, &const_noise_model(2, 1.0), TimeGrid::new(1.0, 8).unwrap()).unwrap();
        assert!(matches!(solve_path(&model, &InitialData::zeros(3), &lat, 1.0), Err(Error::Shape(_))));
        let lat = BrownianLattice::generate(1, &model, TimeGrid::new(1.0, 8).unwrap()).unwrap();
        assert!(matches!(solve_path(&model, &InitialData::zeros(2), &lat, 1.0), Err(Error::Shape(_))));
        assert!(matches!(solve_path(&model, &InitialData::zeros(3), &lat, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn terminal_variance_matches_isometry() {
        // λ = 2, s = 1, μ = 1, y0 = 0, T = 1
        let model = SpectralModel::new(
            crate::spectrum::EigenvalueLaw::Explicit { values: vec![2.0] },
            CovarianceLaw::Explicit { values: vec![1.0] },
            1.0,
            1,
        )
        .unwrap();
        let grid = TimeGrid::new(1.0, 1024).unwrap();
        let n_paths = 100_000u64;
        let samples: Vec<f64> = (0..n_paths)
            .into_par_iter()
            .map(|k| {
                let lat = BrownianLattice::generate(path_seed(2024, k), &model, grid).unwrap();
                convolution_mode(lat.mode(1).unwrap(), grid.dt(), 1.0, 2.0, 1.0)[1024]
            })
            .collect();
        let n = n_paths as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let exact = second_moment_convolution(1.0, 2.0, 1.0, 1.0);
        let se = exact * (2.0 / (n - 1.0)).sqrt();
        assert!((var - exact).abs() < 3.0 * se, "var {var} exact {exact} se {se}");
    }

    #[test]
    fn misfit_density_examples() {
        let model = const_noise_model(2, 1.0);
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let lat = BrownianLattice::generate(3, &model, grid).unwrap();
        let sol = solve_path(&model, &InitialData::new(vec![1.0, 2.0]).unwrap(), &lat, 1.0).unwrap();
        let same = TargetField::new(sol.field(), TargetProvenance::Constant { value: 0.0 });
        assert_eq!(field_misfit_density(&sol, &same, 1).unwrap(), 0.0);

        let mut coeffs = sol.field();
        coeffs[[0, 0]] = 0.0;
        coeffs[[1, 0]] = -1.0;
        let target = TargetField::new(coeffs, TargetProvenance::Constant { value: 0.0 });
        // y(t_0) = (1, 2) against (0, -1)
        assert_relative_eq!(field_misfit_density(&sol, &target, 0).unwrap(), 10.0);
        let wrong = TargetField::constant(3, grid, 0.0);
        assert!(matches!(field_misfit_density(&sol, &wrong, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_layout() {
        let model = const_noise_model(2, 1.0);
        let lat = BrownianLattice::generate(3, &model, TimeGrid::new(1.0, 3).unwrap()).unwrap();
        let sol = solve_path(&model, &InitialData::inverse_mode(2), &lat, 1.0).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mode,step,mean,convolution\n1,0,1.0000000000000000e0,0.0000000000000000e0\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 4);
    }

    proptest! {
        #[test]
        fn recursion_matches_direct_sum(
            incs in proptest::collection::vec(-0.2f64..0.2, 1..120),
            lambda in 0.6f64..60.0,
            s in 0.2f64..2.0,
            mu in 0.0f64..3.0,
        ) {
            let dt = 1.0 / incs.len() as f64;
            let rec = convolution_mode(ArrayView1::from(&incs), dt, mu, lambda, s);
            let dir = direct_sum(&incs, dt, mu, lambda.powf(s));
            let scale = dir.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
            for (r, d) in rec.iter().zip(&dir) {
                prop_assert!((r - d).abs() <= 1e-10 * scale);
            }
        }
    }
}
