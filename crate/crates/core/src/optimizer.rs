//! Minimization of `J(·, ω)` over a compact exponent interval.
//!
//! A uniform grid scan picks the best node and its neighbours as a bracket;
//! Newton's method on `J′` then refines inside the bracket, falling back to
//! bisection on the sign of `J′` whenever a step would leave the bracket or
//! `J″ ≤ 0`. The result is certified by re-evaluating `J′` and `J″`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar objective with analytic first and second derivatives.
pub trait Objective {
    fn value(&self, s: f64) -> Result<f64>;
    /// `(J, J′, J″)` at `s`.
    fn derivatives(&self, s: f64) -> Result<(f64, f64, f64)>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn value(&self, s: f64) -> Result<f64> {
        (**self).value(s)
    }
    fn derivatives(&self, s: f64) -> Result<(f64, f64, f64)> {
        (**self).derivatives(s)
    }
}

fn default_grid_points() -> usize {
    16
}
fn default_newton_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    50
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub s_lo: f64,
    pub s_hi: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_newton_iters: usize,
    #[serde(default = "default_true")]
    pub bisection_fallback: bool,
}

impl OptimizerConfig {
    pub fn new(s_lo: f64, s_hi: f64) -> Self {
        OptimizerConfig {
            s_lo,
            s_hi,
            grid_points: default_grid_points(),
            newton_tol: default_newton_tol(),
            max_newton_iters: default_max_iters(),
            bisection_fallback: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_lo.is_finite() && self.s_hi.is_finite() && self.s_lo > 0.0 && self.s_lo < self.s_hi) {
            return Err(Error::Validation(format!(
                "optimizer interval must satisfy 0 < s_lo < s_hi, got [{}, {}]",
                self.s_lo, self.s_hi
            )));
        }
        if self.grid_points < 8 {
            return Err(Error::Validation(format!("grid_points must be at least 8, got {}", self.grid_points)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::Validation("newton_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let g = self.grid_points;
        (0..g).map(move |i| {
            if i + 1 == g {
                self.s_hi
            } else {
                self.s_lo + (self.s_hi - self.s_lo) * i as f64 / (g - 1) as f64
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub s: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J1")]
    pub j1: f64,
    #[serde(rename = "J2")]
    pub j2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub s_star: f64,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    /// `J′(s_star)`.
    pub necessary_residual: f64,
    /// `J″(s_star)`.
    pub sufficient_value: f64,
    pub certified: bool,
    /// `s_star` sits on the search boundary with `J′` pointing outward.
    pub boundary: bool,
    pub trace: Vec<Iterate>,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScan {
    pub s_best: f64,
    pub j_best: f64,
    pub bracket: (f64, f64),
    pub evaluations: Vec<(f64, f64)>,
}

/// Evaluate `J` on the configured grid. Ties go to the smaller `s`; failed or
/// non-finite evaluations are skipped.
pub fn grid_scan<O: Objective>(obj: &O, cfg: &OptimizerConfig) -> Result<GridScan> {
    cfg.validate()?;
    let nodes: Vec<f64> = cfg.grid().collect();
    let mut evaluations = Vec::with_capacity(nodes.len());
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, &s) in nodes.iter().enumerate() {
        match obj.value(s) {
            Ok(j) if j.is_finite() => {
                evaluations.push((s, j));
                if best.is_none_or(|(_, b)| j < b) {
                    best = Some((i, j));
                }
            }
            Ok(j) => evaluations.push((s, j)),
            Err(e) => {
                evaluations.push((s, f64::NAN));
                last_err = Some(e);
            }
        }
    }
    let (i, j_best) = best.ok_or_else(|| {
        Error::OptimizationFailure(match last_err {
            Some(e) => format!("no finite objective value on the grid (last error: {e})"),
            None => "no finite objective value on the grid".into(),
        })
    })?;
    let bracket = (nodes[i.saturating_sub(1)], nodes[(i + 1).min(nodes.len() - 1)]);
    Ok(GridScan { s_best: nodes[i], j_best, bracket, evaluations })
}

fn checked_derivatives<O: Objective>(obj: &O, s: f64) -> Result<Iterate> {
    let (j, j1, j2) = obj.derivatives(s)?;
    if !(j.is_finite() && j1.is_finite() && j2.is_finite()) {
        return Err(Error::OptimizationFailure(format!(
            "non-finite objective or derivative at s = {s}: J = {j}, J1 = {j1}, J2 = {j2}"
        )));
    }
    Ok(Iterate { s, j, j1, j2 })
}

fn on_boundary(s: f64, j1: f64, cfg: &OptimizerConfig) -> bool {
    let eps = 1e-12 * (cfg.s_hi - cfg.s_lo);
    ((s - cfg.s_lo).abs() <= eps && j1 > 0.0) || ((s - cfg.s_hi).abs() <= eps && j1 < 0.0)
}

fn certification(it: &Iterate, cfg: &OptimizerConfig) -> (bool, bool) {
    let boundary = on_boundary(it.s, it.j1, cfg) && it.j1.abs() > cfg.newton_tol;
    (!boundary && it.j1.abs() <= cfg.newton_tol && it.j2 > 0.0, boundary)
}

/// Safeguarded Newton iteration on `J′ = 0` inside `bracket`, started at `start`.
///
/// Exhausting `max_newton_iters` yields an uncertified report, not an error.
pub fn newton_refine<O: Objective>(
    obj: &O,
    start: f64,
    bracket: (f64, f64),
    cfg: &OptimizerConfig,
) -> Result<OptimalityReport> {
    let (mut lo, mut hi) = bracket;
    if !(lo <= start && start <= hi) {
        return Err(Error::Argument(format!("start {start} outside bracket [{lo}, {hi}]")));
    }
    let mut s = start;
    let mut trace = Vec::new();
    for iter in 0..=cfg.max_newton_iters {
        let it = checked_derivatives(obj, s)?;
        trace.push(it);
        if it.j1.abs() <= cfg.newton_tol || iter == cfg.max_newton_iters {
            break;
        }
        // J′ > 0 puts the minimizer to the left of s.
        if it.j1 > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - it.j1 / it.j2;
        let next = if it.j2 > 0.0 && newton > lo && newton < hi {
            newton
        } else if cfg.bisection_fallback {
            0.5 * (lo + hi)
        } else {
            break;
        };
        if next == s || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        s = next;
    }
    let last = *trace.last().expect("at least one iterate");
    let (certified, boundary) = certification(&last, cfg);
    Ok(OptimalityReport {
        s_star: last.s,
        j_star: last.j,
        necessary_residual: last.j1,
        sufficient_value: last.j2,
        certified,
        boundary,
        trace,
        bracket,
    })
}

/// Re-evaluate `J′`, `J″` at `s_star` and reset the certification flags.
pub fn certify<O: Objective>(report: &OptimalityReport, obj: &O, cfg: &OptimizerConfig) -> OptimalityReport {
    let mut out = report.clone();
    match checked_derivatives(obj, report.s_star) {
        Ok(it) => {
            let (certified, boundary) = certification(&it, cfg);
            out.j_star = it.j;
            out.necessary_residual = it.j1;
            out.sufficient_value = it.j2;
            out.certified = certified;
            out.boundary = boundary;
        }
        Err(_) => {
            out.certified = false;
        }
    }
    out
}

/// Grid scan, Newton refinement and certification in sequence.
pub fn optimize<O: Objective>(obj: &O, cfg: &OptimizerConfig) -> Result<OptimalityReport> {
    let scan = grid_scan(obj, cfg)?;
    let refined = newton_refine(obj, scan.s_best, scan.bracket, cfg)?;
    let report = if refined.j_star <= scan.j_best {
        refined
    } else {
        // Refinement drifted to a worse stationary point; keep the grid node.
        let it = checked_derivatives(obj, scan.s_best)?;
        let mut trace = refined.trace;
        trace.push(it);
        OptimalityReport {
            s_star: it.s,
            j_star: it.j,
            necessary_residual: it.j1,
            sufficient_value: it.j2,
            certified: false,
            boundary: false,
            trace,
            bracket: scan.bracket,
        }
    };
    Ok(certify(&report, obj, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Poly<F: Fn(f64) -> (f64, f64, f64)>(F);

    impl<F: Fn(f64) -> (f64, f64, f64)> Objective for Poly<F> {
        fn value(&self, s: f64) -> Result<f64> {
            Ok((self.0)(s).0)
        }
        fn derivatives(&self, s: f64) -> Result<(f64, f64, f64)> {
            Ok((self.0)(s))
        }
    }

    fn quad(c: f64) -> Poly<impl Fn(f64) -> (f64, f64, f64)> {
        Poly(move |s: f64| ((s - c).powi(2), 2.0 * (s - c), 2.0))
    }

    fn cfg(lo: f64, hi: f64, g: usize) -> OptimizerConfig {
        OptimizerConfig { grid_points: g, ..OptimizerConfig::new(lo, hi) }
    }

    #[test]
    fn grid_scan_finds_vertex_node() {
        // nodes 0.5, 0.6, ..., 1.5 (11 points): 1.0 is a node
        let scan = grid_scan(&quad(1.0), &cfg(0.5, 1.5, 11)).unwrap();
        assert!((scan.s_best - 1.0).abs() < 1e-12);
        assert!(scan.bracket.0 < 1.0 && scan.bracket.1 > 1.0);
    }

    #[test]
    fn grid_scan_tie_break_and_failure() {
        let flat = Poly(|_s: f64| (3.0, 0.0, 0.0));
        assert_eq!(grid_scan(&flat, &cfg(0.7, 1.9, 9)).unwrap().s_best, 0.7);
        let broken = Poly(|_s: f64| (f64::NAN, 0.0, 0.0));
        assert!(matches!(grid_scan(&broken, &cfg(0.7, 1.9, 9)), Err(Error::OptimizationFailure(_))));
        assert!(grid_scan(&flat, &cfg(0.7, 1.9, 4)).is_err());
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let r = newton_refine(&quad(1.2), 1.2, (1.0, 1.4), &cfg(0.5, 2.0, 8)).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert!(r.certified && !r.boundary);
    }

    #[test]
    fn quadratic_converges_in_one_step() {
        let c = cfg(0.5, 2.0, 16);
        let r = optimize(&quad(1.3), &c).unwrap();
        assert!((r.s_star - 1.3).abs() < 1e-12);
        assert!(r.trace.len() - 1 <= 3);
        assert!(r.certified);
    }

    #[test]
    fn boundary_minimum_is_flagged() {
        // increasing on the whole interval
        let c = cfg(1.0, 2.0, 8);
        let r = optimize(&quad(0.2), &c).unwrap();
        assert_eq!(r.s_star, 1.0);
        assert!(r.boundary && !r.certified);
        assert!(r.necessary_residual > 0.0);
    }

    #[test]
    fn saddle_is_not_certified() {
        let concave = Poly(|s: f64| (1.0 - (s - 1.0).powi(2), -2.0 * (s - 1.0), -2.0));
        let report = OptimalityReport {
            s_star: 1.0,
            j_star: 1.0,
            necessary_residual: 0.0,
            sufficient_value: 0.0,
            certified: true,
            boundary: false,
            trace: vec![],
            bracket: (0.5, 1.5),
        };
        let r = certify(&report, &concave, &cfg(0.2, 1.8, 8));
        assert!(!r.certified);
        assert_eq!(r.sufficient_value, -2.0);
    }

    #[test]
    fn max_iterations_is_not_an_error() {
        // cubic-like gradient with tiny curvature forces bisection
        let c = OptimizerConfig { max_newton_iters: 2, ..cfg(0.0 + 1e-3, 3.0, 8) };
        let flat_min = Poly(|s: f64| ((s - 1.0).powi(4), 4.0 * (s - 1.0).powi(3), 12.0 * (s - 1.0).powi(2)));
        let r = newton_refine(&flat_min, 0.6, (0.4, 2.5), &c).unwrap();
        assert_eq!(r.trace.len(), 3);
        assert!(!r.certified);
        let bad = Poly(|_s: f64| (1.0, f64::INFINITY, 1.0));
        assert!(matches!(newton_refine(&bad, 1.0, (0.5, 1.5), &c), Err(Error::OptimizationFailure(_))));
    }

    proptest! {
        #[test]
        fn iterates_stay_in_interval_and_improve(c0 in 0.3f64..2.2, w in 0.05f64..3.0, lo in 0.4f64..0.9) {
            let f = Poly(move |s: f64| {
                let z = s - c0;
                (z * z + w * (3.0 * z).cos(), 2.0 * z - 3.0 * w * (3.0 * z).sin(), 2.0 - 9.0 * w * (3.0 * z).cos())
            });
            let c = cfg(lo, 2.0, 12);
            let scan = grid_scan(&f, &c).unwrap();
            let r = optimize(&f, &c).unwrap();
            prop_assert!(r.trace.iter().all(|it| it.s >= c.s_lo && it.s <= c.s_hi));
            prop_assert!(r.j_star <= scan.j_best);
            if r.certified {
                prop_assert!(r.necessary_residual.abs() <= c.newton_tol && r.sufficient_value > 0.0);
            }
            let again = optimize(&f, &c).unwrap();
            prop_assert_eq!(again, r);
        }
    }
}
