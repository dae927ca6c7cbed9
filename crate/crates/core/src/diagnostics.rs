//! Monte Carlo and quadrature checks of the moment, regularity and norm
//! properties of the simulated process.
//!
//! Empirical averages are accumulated over fixed chunks of paths and combined
//! in chunk order, so results do not depend on the number of threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::float17;
use crate::montecarlo::quantile;
use crate::noise::{path_seed, BrownianLattice, TimeGrid};
use crate::objective::trapezoid;
use crate::quadrature::log_substituted;
use crate::spectrum::SpectralModel;
use crate::state::{check_exponent, convolution_mode, mean_mode, second_moment_convolution, solve_path, InitialData, ModalSolution};

/// Smallest ensemble accepted by the empirical checks.
pub const MIN_PATHS: usize = 1000;
const PATH_CHUNK: usize = 64;
const SIGMAS: f64 = 3.0;

struct Moments {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n as f64
    }

    fn variance(&self, i: usize) -> f64 {
        let n = self.n as f64;
        ((self.sum_sq[i] - self.sum[i] * self.sum[i] / n) / (n - 1.0)).max(0.0)
    }

    fn std_error(&self, i: usize) -> f64 {
        (self.variance(i) / self.n as f64).sqrt()
    }
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(Error::Argument(format!("n_paths must be at least {MIN_PATHS}, got {n_paths}")));
    }
    Ok(())
}

/// Per-path samples of `width` statistics, reduced to sums and sums of squares.
fn path_moments<F>(n_paths: usize, master_seed: u64, width: usize, f: F) -> Result<Moments>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_paths.div_ceil(PATH_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![0.0; width];
            let mut sum_sq = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for k in c * PATH_CHUNK..((c + 1) * PATH_CHUNK).min(n_paths) {
                f(path_seed(master_seed, k as u64), &mut buf)?;
                for ((s, q), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&buf) {
                    *s += x;
                    *q += x * x;
                }
            }
            Ok((sum, sum_sq))
        })
        .collect();
    let mut m = Moments { n: n_paths, sum: vec![0.0; width], sum_sq: vec![0.0; width] };
    for chunk in chunks {
        let (s, q) = chunk?;
        for i in 0..width {
            m.sum[i] += s[i];
            m.sum_sq[i] += q[i];
        }
    }
    Ok(m)
}

fn convolutions(model: &SpectralModel, grid: TimeGrid, s: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let lat = BrownianLattice::generate(seed, model, grid)?;
    Ok((0..model.n_modes())
        .map(|j| convolution_mode(lat.increments().row(j), grid.dt(), model.covariances()[j], model.eigenvalues()[j], s))
        .collect())
}

/// Exact variance of the left-point recursion after `n` steps:
/// `μ dt Σ_{m=1}^n e^{-2 a m dt}`.
pub fn discrete_second_moment(mu: f64, lambda: f64, s: f64, dt: f64, n: usize) -> f64 {
    let a = lambda.powf(s);
    let rho = (-2.0 * a * dt).exp();
    mu * dt * rho * -(-2.0 * a * dt * n as f64).exp_m1() / -(-2.0 * a * dt).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryEntry {
    pub j: usize,
    pub t: f64,
    pub empirical_var: f64,
    pub closed_form: f64,
    pub z_score: f64,
    /// Exact variance of the left-point recursion, for judging discretization bias.
    pub discrete_closed_form: f64,
}

fn z_score(empirical: f64, closed_form: f64, n: usize) -> f64 {
    if closed_form == 0.0 {
        return if empirical == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (empirical - closed_form) / (2.0 * closed_form * closed_form / (n as f64 - 1.0)).sqrt()
}

/// Sample variance of `W^j(t)` over `n_paths` paths against
/// `μ_j (1 − e^{-2λ_j^s t}) / (2λ_j^s)` at each checkpoint (snapped to the grid).
pub fn ito_isometry_check(
    model: &SpectralModel,
    grid: TimeGrid,
    s: f64,
    n_paths: usize,
    master_seed: u64,
    checkpoints: &[f64],
) -> Result<Vec<IsometryEntry>> {
    check_paths(n_paths)?;
    check_exponent(model, s)?;
    let idx: Vec<usize> = checkpoints.iter().map(|&t| grid.nearest_index(t)).collect::<Result<_>>()?;
    let c = idx.len();
    let m = path_moments(n_paths, master_seed, model.n_modes() * c, |seed, out| {
        for (j, w) in convolutions(model, grid, s, seed)?.iter().enumerate() {
            for (k, &n) in idx.iter().enumerate() {
                out[j * c + k] = w[n];
            }
        }
        Ok(())
    })?;
    let mut entries = Vec::with_capacity(model.n_modes() * c);
    for j in 0..model.n_modes() {
        for (k, &n) in idx.iter().enumerate() {
            let t = grid.time(n);
            let emp = m.variance(j * c + k);
            let (mu, l) = (model.covariances()[j], model.eigenvalues()[j]);
            let cf = second_moment_convolution(mu, l, s, t);
            let discrete = discrete_second_moment(mu, l, s, grid.dt(), n);
            let bias = z_score(discrete, cf, n_paths);
            if bias.abs() > 1.0 {
                log::warn!("mode {}: left-point bias at t = {t} is {bias:.2} standard errors; refine the grid", j + 1);
            }
            entries.push(IsometryEntry {
                j: j + 1,
                t,
                empirical_var: emp,
                closed_form: cf,
                z_score: z_score(emp, cf, n_paths),
                discrete_closed_form: discrete,
            });
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub t: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub closed_form: f64,
}

/// `E‖W(t_n)‖²` at every grid time, empirical and closed form.
pub fn moment_curve(model: &SpectralModel, grid: TimeGrid, s: f64, n_paths: usize, master_seed: u64) -> Result<Vec<MomentPoint>> {
    check_paths(n_paths)?;
    check_exponent(model, s)?;
    let cols = grid.n_steps + 1;
    let m = path_moments(n_paths, master_seed, cols, |seed, out| {
        out.fill(0.0);
        for w in convolutions(model, grid, s, seed)? {
            for (o, x) in out.iter_mut().zip(&w) {
                *o += x * x;
            }
        }
        Ok(())
    })?;
    Ok((0..cols)
        .map(|n| {
            let t = grid.time(n);
            let closed_form = (0..model.n_modes())
                .map(|j| second_moment_convolution(model.covariances()[j], model.eigenvalues()[j], s, t))
                .sum();
            MomentPoint { t, empirical: m.mean(n), standard_error: m.std_error(n), closed_form }
        })
        .collect())
}

/// CSV with header `t,empirical,standard_error,closed_form`.
pub fn write_curve_csv<W: Write>(curve: &[MomentPoint], mut out: W) -> Result<()> {
    writeln!(out, "t,empirical,standard_error,closed_form")?;
    for p in curve {
        writeln!(out, "{},{},{},{}", float17(p.t), float17(p.empirical), float17(p.standard_error), float17(p.closed_form))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    pub max_empirical: f64,
    /// `tr Q / (2 α^s)`.
    pub bound: f64,
    pub pass: bool,
}

/// The empirical curve never exceeds `tr Q / (2α^s)` by more than 3 standard errors.
pub fn moment_bound_check(model: &SpectralModel, s: f64, curve: &[MomentPoint]) -> MomentBound {
    let bound = model.trace() / (2.0 * model.alpha().powf(s));
    let max_empirical = curve.iter().map(|p| p.empirical).fold(0.0, f64::max);
    let pass = curve.iter().all(|p| p.empirical <= bound + SIGMAS * p.standard_error);
    MomentBound { max_empirical, bound, pass }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsBound {
    pub t: f64,
    /// `Σ λ_j^{2s} m_j(t)²` for the deterministic part.
    pub mean_part: f64,
    /// `κ(t)² ‖y0‖²`, `κ(t) = 1/(e t)`.
    pub mean_bound: f64,
    /// Empirical `E Σ λ_j^{2s} W_j(t)²`.
    pub empirical: f64,
    pub standard_error: f64,
    pub closed_form: f64,
    /// `½ Σ μ_j λ_j^s`, the supremum in time of the closed form.
    pub theoretical_bound: f64,
    pub pass: bool,
}

/// `𝓗^s` membership at time `t`: the deterministic part against the
/// smoothing bound and the stochastic part against its closed form.
pub fn hs_membership_check(
    model: &SpectralModel,
    y0: &InitialData,
    grid: TimeGrid,
    s: f64,
    t: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<HsBound> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("H^s check needs t > 0, got {t}")));
    }
    check_paths(n_paths)?;
    check_exponent(model, s)?;
    if y0.len() != model.n_modes() {
        return Err(Error::Shape(format!("initial data has {} modes, model has {}", y0.len(), model.n_modes())));
    }
    let n = grid.nearest_index(t)?;
    if n == 0 {
        return Err(Error::Domain(format!("t = {t} rounds to the initial grid time")));
    }
    let t = grid.time(n);
    let lam = model.eigenvalues();
    let mu = model.covariances();
    let weights: Vec<f64> = lam.iter().map(|l| l.powf(2.0 * s)).collect();
    let mean_part = (0..model.n_modes()).map(|j| weights[j] * mean_mode(y0.coeffs()[j], lam[j], s, t).powi(2)).sum();
    let kappa = 1.0 / (std::f64::consts::E * t);
    let mean_bound = kappa * kappa * y0.l2_norm_sq();
    let m = path_moments(n_paths, master_seed, 1, |seed, out| {
        out[0] = convolutions(model, grid, s, seed)?.iter().zip(&weights).map(|(w, wt)| wt * w[n] * w[n]).sum();
        Ok(())
    })?;
    let closed_form = (0..model.n_modes()).map(|j| weights[j] * second_moment_convolution(mu[j], lam[j], s, t)).sum::<f64>();
    let theoretical_bound = 0.5 * (0..model.n_modes()).map(|j| mu[j] * lam[j].powf(s)).sum::<f64>();
    let (empirical, standard_error) = (m.mean(0), m.std_error(0));
    let pass = mean_part <= mean_bound * (1.0 + 1e-12)
        && (empirical - closed_form).abs() <= SIGMAS * standard_error + 1e-14 * closed_form
        && closed_form <= theoretical_bound;
    Ok(HsBound { t, mean_part, mean_bound, empirical, standard_error, closed_form, theoretical_bound, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Bound {
    /// Empirical `E‖y‖²_{L²(D_T)}` (trapezoid in time).
    pub empirical: f64,
    pub standard_error: f64,
    /// Exact time integral of the modal second moments.
    pub closed_form: f64,
    /// Expectation of the discrete estimator under the left-point scheme.
    pub discrete_closed_form: f64,
    /// `‖y0‖²/(2α^s) + T tr Q/(2α^s)`.
    pub bound: f64,
    pub pass_exact: bool,
    pub pass_bound: bool,
    pub pass: bool,
}

/// `Σ_j [y0_j² (1 − e^{-2aT})/(2a) + μ_j (T/(2a) + (e^{-2aT} − 1)/(4a²))]`, `a = λ_j^s`.
pub fn l2_closed_form(model: &SpectralModel, y0: &InitialData, s: f64, t_final: f64) -> f64 {
    (0..model.n_modes())
        .map(|j| {
            let a = model.eigenvalues()[j].powf(s);
            let e = (-2.0 * a * t_final).exp_m1();
            let y = y0.coeffs()[j];
            y * y * -e / (2.0 * a) + model.covariances()[j] * (t_final / (2.0 * a) + e / (4.0 * a * a))
        })
        .sum()
}

/// `‖y0‖²/(2α^s) + T tr Q/(2α^s)`.
pub fn l2_coarse_bound(model: &SpectralModel, y0: &InitialData, s: f64, t_final: f64) -> f64 {
    let a = model.alpha().powf(s);
    (y0.l2_norm_sq() + t_final * model.trace()) / (2.0 * a)
}

/// Monte Carlo `E‖y‖²_{L²(D_T)}` against its exact value and the coarse a-priori bound.
pub fn l2_apriori_check(
    model: &SpectralModel,
    y0: &InitialData,
    grid: TimeGrid,
    s: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<L2Bound> {
    check_paths(n_paths)?;
    check_exponent(model, s)?;
    let dt = grid.dt();
    let m = path_moments(n_paths, master_seed, 1, |seed, out| {
        let lat = BrownianLattice::generate(seed, model, grid)?;
        let sol = solve_path(model, y0, &lat, s)?;
        let density: Vec<f64> = (0..=grid.n_steps).map(|n| (0..model.n_modes()).map(|j| sol.coefficient(j, n).powi(2)).sum()).collect();
        out[0] = trapezoid(&density, dt);
        Ok(())
    })?;
    let expected: Vec<f64> = (0..=grid.n_steps)
        .map(|n| {
            (0..model.n_modes())
                .map(|j| {
                    let (l, mu) = (model.eigenvalues()[j], model.covariances()[j]);
                    mean_mode(y0.coeffs()[j], l, s, grid.time(n)).powi(2) + discrete_second_moment(mu, l, s, dt, n)
                })
                .sum()
        })
        .collect();
    let closed_form = l2_closed_form(model, y0, s, grid.t_final);
    let bound = l2_coarse_bound(model, y0, s, grid.t_final);
    let (empirical, standard_error) = (m.mean(0), m.std_error(0));
    let slack = 1e-12 * closed_form.abs().max(f64::MIN_POSITIVE);
    let pass_exact = (empirical - closed_form).abs() <= SIGMAS * standard_error + slack;
    let pass_bound = empirical <= bound + SIGMAS * standard_error;
    Ok(L2Bound {
        empirical,
        standard_error,
        closed_form,
        discrete_closed_form: trapezoid(&expected, dt),
        bound,
        pass_exact,
        pass_bound,
        pass: pass_exact && pass_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub estimated_delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub lags: Vec<usize>,
    /// Median `L²(D)` increment per lag.
    pub median_increments: Vec<f64>,
    /// The interval meets `(0, 1/2]`.
    pub pass: bool,
    /// The whole interval lies above 1/2, as for a noise-free, differentiable path.
    pub smooth_path: bool,
}

fn median(v: &mut [f64]) -> f64 {
    let (len, k) = (v.len(), v.len() / 2);
    let (lower, mid, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    let mid = *mid;
    if len % 2 == 1 {
        mid
    } else {
        0.5 * (mid + lower.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of `log median ‖y(t + Δ) − y(t)‖` against `log Δ` over the given
/// lags (in grid steps), with a bootstrap 90% interval from resampling the
/// increments of each lag.
pub fn holder_estimate(sol: &ModalSolution, lags: &[usize], n_boot: usize, seed: u64) -> Result<HolderEstimate> {
    let m = sol.grid.n_steps;
    if lags.len() < 3 {
        return Err(Error::Argument(format!("need at least 3 lags, got {}", lags.len())));
    }
    if lags.iter().any(|&l| l == 0 || 4 * l > m) {
        return Err(Error::Argument(format!("lags must lie in [1, {}] for {m} steps", m / 4)));
    }
    if n_boot < 2 {
        return Err(Error::Argument("need at least 2 bootstrap samples".into()));
    }
    let field = sol.field();
    let increments: Vec<Vec<f64>> = lags
        .iter()
        .map(|&l| {
            (0..=m - l)
                .map(|n| (0..sol.n_modes()).map(|j| (field[[j, n + l]] - field[[j, n]]).powi(2)).sum::<f64>().sqrt())
                .collect()
        })
        .collect();
    let x: Vec<f64> = lags.iter().map(|&l| (l as f64 * sol.grid.dt()).ln()).collect();
    let medians: Vec<f64> = increments.iter().map(|v| median(&mut v.clone())).collect();
    if medians.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Estimation("path increments vanish; the path is constant".into()));
    }
    let y: Vec<f64> = medians.iter().map(|v| v.ln()).collect();
    let estimated_delta = ols_slope(&x, &y);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(n_boot);
    let mut buf = Vec::new();
    let mut yb = vec![0.0; lags.len()];
    for _ in 0..n_boot {
        for (i, inc) in increments.iter().enumerate() {
            buf.clear();
            buf.extend((0..inc.len()).map(|_| inc[rng.random_range(0..inc.len())]));
            yb[i] = median(&mut buf).max(f64::MIN_POSITIVE).ln();
        }
        slopes.push(ols_slope(&x, &yb));
    }
    slopes.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = (quantile(&slopes, 0.05), quantile(&slopes, 0.95));
    Ok(HolderEstimate {
        estimated_delta,
        ci_low,
        ci_high,
        lags: lags.to_vec(),
        median_increments: medians,
        pass: ci_high > 0.0 && ci_low <= 0.5,
        smooth_path: ci_low > 0.5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupCheck {
    pub beta: f64,
    pub cutoff: f64,
    /// `∫_cutoff^T t^{-2β} Σ_j μ_j e^{-2λ_j^s t} dt`.
    pub integral: f64,
    /// Increase of the integral when the cutoff shrinks tenfold, relative to the integral.
    pub cutoff_sensitivity: f64,
    /// Ratio of successive increments under tenfold cutoff reductions; below 1
    /// when the contributions near the origin sum geometrically.
    pub increment_ratio: f64,
    pub pass: bool,
}

/// `∫ t^{-2β} ‖S(t) Q^{1/2}‖²_HS dt` for the truncated model, integrated
/// numerically from `cutoff` with the cutoff dependence reported.
pub fn semigroup_condition(model: &SpectralModel, s: f64, beta: f64, t_final: f64, cutoff: f64) -> Result<SemigroupCheck> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Argument(format!("beta must be non-negative, got {beta}")));
    }
    if !(cutoff > 0.0 && cutoff < t_final) {
        return Err(Error::Argument(format!("cutoff must lie in (0, {t_final}), got {cutoff}")));
    }
    check_exponent(model, s)?;
    let a: Vec<f64> = model.eigenvalues().iter().map(|l| l.powf(s)).collect();
    let mu = model.covariances();
    let f = |t: f64| t.powf(-2.0 * beta) * a.iter().zip(mu).map(|(a, m)| m * (-2.0 * a * t).exp()).sum::<f64>();
    let tol = 1e-12 * model.trace().max(1e-300);
    let i0 = log_substituted(&f, cutoff, t_final, tol);
    let i1 = i0 + log_substituted(&f, cutoff / 10.0, cutoff, tol);
    let i2 = i1 + log_substituted(&f, cutoff / 100.0, cutoff / 10.0, tol);
    let (d1, d2) = (i1 - i0, i2 - i1);
    let increment_ratio = if d1 > 0.0 { d2 / d1 } else { 0.0 };
    let cutoff_sensitivity = if i0 > 0.0 { d1 / i0 } else { 0.0 };
    Ok(SemigroupCheck {
        beta,
        cutoff,
        integral: i0,
        cutoff_sensitivity,
        increment_ratio,
        pass: i0.is_finite() && increment_ratio < 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongError {
    pub dt: f64,
    /// Empirical `E‖W_left(T) − W_exact(T)‖²`.
    pub empirical: f64,
    pub standard_error: f64,
    pub expected: f64,
}

/// Variance of one step's discrepancy `∫_0^{dt} (e^{-a dt} − e^{-a u})² du`.
fn step_discrepancy(a: f64, dt: f64) -> f64 {
    let r = (-a * dt).exp();
    r * r * dt - 2.0 * r * -(-a * dt).exp_m1() / a + -(-2.0 * a * dt).exp_m1() / (2.0 * a)
}

/// Mean-square gap at `T` between the left-point recursion and exact
/// Ornstein–Uhlenbeck transitions driven by the same Brownian path. Each step
/// draws `(ΔB, ∫ e^{-a(t_{n+1}−τ)} dB)` jointly.
pub fn strong_error(model: &SpectralModel, grid: TimeGrid, s: f64, n_paths: usize, master_seed: u64) -> Result<StrongError> {
    check_paths(n_paths)?;
    check_exponent(model, s)?;
    let dt = grid.dt();
    let params: Vec<(f64, f64, f64, f64, f64)> = (0..model.n_modes())
        .map(|j| {
            let a = model.eigenvalues()[j].powf(s);
            let var_i = -(-2.0 * a * dt).exp_m1() / (2.0 * a);
            let cov = -(-a * dt).exp_m1() / a;
            let resid = (var_i - cov * cov / dt).max(0.0).sqrt();
            (a, (-a * dt).exp(), model.covariances()[j].sqrt(), cov / dt, resid)
        })
        .collect();
    let m = path_moments(n_paths, master_seed, 1, |seed, out| {
        let mut err = 0.0;
        for (j, &(_, decay, amp, slope, resid)) in params.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let (mut left, mut exact) = (0.0f64, 0.0f64);
            for _ in 0..grid.n_steps {
                let db = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                left = decay * (left + amp * db);
                exact = decay * exact + amp * (slope * db + resid * z);
            }
            err += (left - exact).powi(2);
        }
        out[0] = err;
        Ok(())
    })?;
    let expected = params
        .iter()
        .enumerate()
        .map(|(j, &(a, decay, ..))| {
            let rho2 = decay * decay;
            let geometric = -(-2.0 * a * grid.t_final).exp_m1() / (1.0 - rho2);
            model.covariances()[j] * step_discrepancy(a, dt) * geometric
        })
        .sum();
    Ok(StrongError { dt, empirical: m.mean(0), standard_error: m.std_error(0), expected })
}

fn default_n_paths() -> usize {
    10_000
}
fn default_lags() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}
fn default_bootstrap() -> usize {
    1000
}
fn default_beta() -> f64 {
    0.25
}
fn default_cutoff() -> f64 {
    1e-6
}

/// Settings for a full diagnostics run. Checkpoints default to
/// `0, T/4, T/2, T`; the `𝓗^s` time defaults to `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSettings {
    pub s: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default)]
    pub hs_time: Option<f64>,
    #[serde(default = "default_lags")]
    pub holder_lags: Vec<usize>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_samples: usize,
    #[serde(default = "default_beta")]
    pub semigroup_beta: f64,
    #[serde(default = "default_cutoff")]
    pub semigroup_cutoff: f64,
}

impl DiagnosticsSettings {
    pub fn new(s: f64) -> Self {
        DiagnosticsSettings {
            s,
            n_paths: default_n_paths(),
            master_seed: 0,
            checkpoints: None,
            hs_time: None,
            holder_lags: default_lags(),
            bootstrap_samples: default_bootstrap(),
            semigroup_beta: default_beta(),
            semigroup_cutoff: default_cutoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub s: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub isometry: Vec<IsometryEntry>,
    pub moment_bound: MomentBound,
    pub hs_bound: HsBound,
    pub l2_bound: L2Bound,
    /// Absent when the sample path is constant.
    pub holder: Option<HolderEstimate>,
    pub holder_error: Option<String>,
    pub semigroup: SemigroupCheck,
}

/// Every check, plus the `E‖W(t)‖²` curve for plotting. The Hölder estimate
/// uses the path generated from `master_seed` itself.
pub fn run_diagnostics(
    model: &SpectralModel,
    y0: &InitialData,
    grid: TimeGrid,
    cfg: &DiagnosticsSettings,
) -> Result<(DiagnosticsReport, Vec<MomentPoint>)> {
    let t = grid.t_final;
    let checkpoints = cfg.checkpoints.clone().unwrap_or_else(|| vec![0.0, 0.25 * t, 0.5 * t, t]);
    let isometry = ito_isometry_check(model, grid, cfg.s, cfg.n_paths, cfg.master_seed, &checkpoints)?;
    let curve = moment_curve(model, grid, cfg.s, cfg.n_paths, cfg.master_seed)?;
    let moment_bound = moment_bound_check(model, cfg.s, &curve);
    let hs_bound = hs_membership_check(model, y0, grid, cfg.s, cfg.hs_time.unwrap_or(t), cfg.n_paths, cfg.master_seed)?;
    let l2_bound = l2_apriori_check(model, y0, grid, cfg.s, cfg.n_paths, cfg.master_seed)?;
    let lat = BrownianLattice::generate(cfg.master_seed, model, grid)?;
    let sol = solve_path(model, y0, &lat, cfg.s)?;
    let (holder, holder_error) = match holder_estimate(&sol, &cfg.holder_lags, cfg.bootstrap_samples, cfg.master_seed) {
        Ok(h) => (Some(h), None),
        Err(Error::Estimation(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    let semigroup = semigroup_condition(model, cfg.s, cfg.semigroup_beta, t, cfg.semigroup_cutoff)?;
    let report = DiagnosticsReport {
        s: cfg.s,
        n_paths: cfg.n_paths,
        master_seed: cfg.master_seed,
        isometry,
        moment_bound,
        hs_bound,
        l2_bound,
        holder,
        holder_error,
        semigroup,
    };
    Ok((report, curve))
}
