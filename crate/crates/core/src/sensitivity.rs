//! Analytic `s`-derivatives of the modal solution.
//!
//! Everything reduces to derivatives of the kernel `E_{λ,u}(s) = e^{-λ^s u}`.
//! With `x = λ^s u` and `ℓ = ln λ`, `dx/ds = ℓ x`, so
//! `d^k E/ds^k = ℓ^k P_k(x) e^{-x}` where
//!
//! ```text
//! P_1 = -x
//! P_2 = x² - x
//! P_3 = -x³ + 3x² - x
//! P_4 = x⁴ - 6x³ + 7x² - x
//! ```
//!
//! The stochastic convolution is differentiated under the (discrete) Wiener
//! integral. Its kernel derivatives are polynomial in `u = t_n − t_m` times
//! `e^{-a u}`, so the sums `S_p[n] = Σ_{m<n} u^p e^{-a u} ΔB_m`, `p = 0, 1, 2`,
//! are carried by an O(M) binomial recursion.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::float17;
use crate::noise::{BrownianLattice, TimeGrid};
use crate::spectrum::SpectralModel;
use crate::state::{check_exponent, check_shapes, InitialData};

/// Constants `C_k`, `k = 1..=4`, in `|d^k E/ds^k| ≤ C_k s^{-k} (1 + |ln u|^k)`.
///
/// Frozen from [`fit_majorant_constant`] with `REFERENCE_SWEEP` and rounded up
/// by 1%.
pub const MAJORANT_CONSTANTS: [f64; 4] = [0.3656, 0.6870, 3.5030, 25.481];

/// `(x points, ln u points)` of the reference sweep behind [`MAJORANT_CONSTANTS`].
pub const REFERENCE_SWEEP: (usize, usize) = (4000, 2401);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelDerivatives {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

fn touchard(k: u32, x: f64) -> f64 {
    match k {
        1 => -x,
        2 => x * (x - 1.0),
        3 => -x * (x * x - 3.0 * x + 1.0),
        4 => x * (((x - 6.0) * x + 7.0) * x - 1.0),
        _ => unreachable!("order checked by callers"),
    }
}

/// `E_{λ,u}(s)` with its first two `s`-derivatives.
pub fn kernel_derivatives(lambda: f64, u: f64, s: f64) -> KernelDerivatives {
    let a = lambda.powf(s);
    let ln_l = lambda.ln();
    let value = (-a * u).exp();
    let au = a * u;
    KernelDerivatives {
        value,
        d1: -au * ln_l * value,
        d2: ln_l * ln_l * au * (au - 1.0) * value,
    }
}

/// `d^k E_{λ,u}/ds^k` for `k = 1..=4`.
pub fn kernel_derivative(lambda: f64, u: f64, s: f64, k: u32) -> Result<f64> {
    if !(1..=4).contains(&k) {
        return Err(Error::Argument(format!("derivative order must be in 1..=4, got {k}")));
    }
    let x = lambda.powf(s) * u;
    Ok(lambda.ln().powi(k as i32) * touchard(k, x) * (-x).exp())
}

/// Right-hand side `s^{-k} (1 + |ln u|^k)` of the majorant, without its constant.
pub fn majorant_shape(u: f64, s: f64, k: u32) -> f64 {
    s.powi(-(k as i32)) * (1.0 + u.ln().abs().powi(k as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantCheck {
    pub holds: bool,
    pub derivative: f64,
    pub bound: f64,
    pub constant: f64,
}

/// Test `|d^k E_{λ,u}/ds^k| ≤ C_k s^{-k}(1 + |ln u|^k)` with the frozen `C_k`.
pub fn majorant_check(lambda: f64, u: f64, s: f64, k: u32) -> Result<MajorantCheck> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("majorant needs u > 0, got {u}")));
    }
    let derivative = kernel_derivative(lambda, u, s, k)?;
    let constant = MAJORANT_CONSTANTS[(k - 1) as usize];
    let bound = constant * majorant_shape(u, s, k);
    Ok(MajorantCheck { holds: derivative.abs() <= bound, derivative, bound, constant })
}

/// Supremum of `|d^k E| s^k / (1 + |ln u|^k)` over a grid in the reduced
/// variables `x = λ^s u ∈ [1e-12, 1e3]` (log-spaced) and `ln u ∈ [-60, 60]`.
///
/// Since `s ln λ = ln x − ln u`, the ratio depends only on `(x, ln u)`, so the
/// sweep covers every `(λ, u, s)` at once.
pub fn fit_majorant_constant(k: u32, x_points: usize, l_points: usize) -> Result<f64> {
    if !(1..=4).contains(&k) {
        return Err(Error::Argument(format!("derivative order must be in 1..=4, got {k}")));
    }
    let (lx0, lx1) = (1e-12f64.ln(), 1e3f64.ln());
    let mut best = 0.0f64;
    for ix in 0..x_points {
        let ln_x = lx0 + (lx1 - lx0) * ix as f64 / (x_points - 1) as f64;
        let x = ln_x.exp();
        let shape = touchard(k, x).abs() * (-x).exp();
        for il in 0..l_points {
            let l = -60.0 + 120.0 * il as f64 / (l_points - 1) as f64;
            let ratio = (ln_x - l).abs().powi(k as i32) * shape / (1.0 + l.abs().powi(k as i32));
            best = best.max(ratio);
        }
    }
    Ok(best)
}

/// Auxiliary sums `S_0, S_1, S_2` on every grid index.
fn auxiliary_sums(increments: ArrayView1<'_, f64>, dt: f64, a: f64) -> [Vec<f64>; 3] {
    let m = increments.len();
    let decay = (-a * dt).exp();
    let mut s0 = vec![0.0; m + 1];
    let mut s1 = vec![0.0; m + 1];
    let mut s2 = vec![0.0; m + 1];
    for (n, db) in increments.iter().enumerate() {
        // the new term m = n enters with u = dt after the shift
        let t0 = s0[n] + db;
        s0[n + 1] = decay * t0;
        s1[n + 1] = decay * (s1[n] + dt * t0);
        s2[n + 1] = decay * (s2[n] + 2.0 * dt * s1[n] + dt * dt * t0);
    }
    [s0, s1, s2]
}

fn conv_derivatives(increments: ArrayView1<'_, f64>, dt: f64, mu: f64, lambda: f64, s: f64) -> (Vec<f64>, Vec<f64>) {
    let len = increments.len() + 1;
    if mu == 0.0 {
        return (vec![0.0; len], vec![0.0; len]);
    }
    let a = lambda.powf(s);
    let ln_l = lambda.ln();
    let amp = mu.sqrt();
    let [_, s1, s2] = auxiliary_sums(increments, dt, a);
    let d1 = s1.iter().map(|v| -a * ln_l * amp * v).collect();
    let d2 = s1
        .iter()
        .zip(&s2)
        .map(|(v1, v2)| amp * ln_l * ln_l * a * (a * v2 - v1))
        .collect();
    (d1, d2)
}

/// `Σ_{m<n} ∂_s^order[e^{-λ^s (t_n − t_m)}] √μ ΔB_m` on every grid index.
pub fn sensitivity_conv_mode(
    increments: ArrayView1<'_, f64>,
    dt: f64,
    mu_j: f64,
    lambda_j: f64,
    s: f64,
    order: u32,
) -> Result<Vec<f64>> {
    let (d1, d2) = match order {
        1 | 2 => conv_derivatives(increments, dt, mu_j, lambda_j, s),
        _ => return Err(Error::Argument(format!("sensitivity order must be 1 or 2, got {order}"))),
    };
    Ok(if order == 1 { d1 } else { d2 })
}

/// `∂_s^order m_j(t, s)`.
pub fn sensitivity_mean_mode(y0j: f64, lambda_j: f64, s: f64, t: f64, order: u32) -> Result<f64> {
    let k = kernel_derivatives(lambda_j, t, s);
    match order {
        1 => Ok(y0j * k.d1),
        2 => Ok(y0j * k.d2),
        _ => Err(Error::Argument(format!("sensitivity order must be 1 or 2, got {order}"))),
    }
}

/// First and second `s`-derivatives of the mean and convolution for every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySolution {
    pub s: f64,
    pub d1_mean: Array2<f64>,
    pub d2_mean: Array2<f64>,
    pub d1_conv: Array2<f64>,
    pub d2_conv: Array2<f64>,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl SensitivitySolution {
    pub fn n_modes(&self) -> usize {
        self.d1_mean.nrows()
    }

    /// `∂_s y`, shape `[N, M+1]`.
    pub fn d1_field(&self) -> Array2<f64> {
        &self.d1_mean + &self.d1_conv
    }

    /// `∂²_ss y`, shape `[N, M+1]`.
    pub fn d2_field(&self) -> Array2<f64> {
        &self.d2_mean + &self.d2_conv
    }

    /// CSV with header `mode,step,d1_mean,d2_mean,d1_conv,d2_conv`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "mode,step,d1_mean,d2_mean,d1_conv,d2_conv")?;
        for j in 0..self.n_modes() {
            for n in 0..=self.grid.n_steps {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    j + 1,
                    n,
                    float17(self.d1_mean[[j, n]]),
                    float17(self.d2_mean[[j, n]]),
                    float17(self.d1_conv[[j, n]]),
                    float17(self.d2_conv[[j, n]])
                )?;
            }
        }
        Ok(())
    }
}

pub fn assemble_sensitivities(
    model: &SpectralModel,
    y0: &InitialData,
    lat: &BrownianLattice,
    s: f64,
) -> Result<SensitivitySolution> {
    check_shapes(model, y0, lat)?;
    check_exponent(model, s)?;
    let grid = lat.grid();
    let shape = (model.n_modes(), grid.n_steps + 1);
    let mut out = SensitivitySolution {
        s,
        d1_mean: Array2::zeros(shape),
        d2_mean: Array2::zeros(shape),
        d1_conv: Array2::zeros(shape),
        d2_conv: Array2::zeros(shape),
        grid,
        seed: lat.seed(),
    };
    for j in 0..model.n_modes() {
        let lambda = model.eigenvalues()[j];
        let y0j = y0.coeffs()[j];
        for (n, t) in grid.times().enumerate() {
            let k = kernel_derivatives(lambda, t, s);
            out.d1_mean[[j, n]] = y0j * k.d1;
            out.d2_mean[[j, n]] = y0j * k.d2;
        }
        let (d1, d2) = conv_derivatives(lat.increments().row(j), grid.dt(), model.covariances()[j], lambda, s);
        out.d1_conv.row_mut(j).assign(&ArrayView1::from(&d1));
        out.d2_conv.row_mut(j).assign(&ArrayView1::from(&d2));
    }
    Ok(out)
}
