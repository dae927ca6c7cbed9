//! Spectral model of the diffusion operator and the noise covariance.
//!
//! The operator is represented only through its eigenvalues `λ_j` and the
//! covariance operator through its eigenvalues `μ_j` in the same basis.
//! Fractional powers act diagonally, `λ_j ↦ λ_j^s`, and every modal sum is
//! truncated at `n_modes`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative size of the tail partial sum below which an explicit spectrum is
/// treated as summable.
pub const TAIL_RATIO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EigenvalueLaw {
    /// `λ_j = c · j^q`
    PowerLaw { c: f64, q: f64 },
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceLaw {
    /// `μ_j = λ_j^(-2·s_ref - epsilon)`
    MatchedDecay { epsilon: f64, s_ref: f64 },
    Explicit { values: Vec<f64> },
    /// `μ_j = c0 · λ_j^(-r)`
    PowerLaw { c0: f64, r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdmissibleBasis {
    Analytic,
    NumericHeuristic,
}

/// Interval of exponents `s` for which `Σ λ_j^{-s}` converges, intersected
/// with the caller's upper limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleInterval {
    pub s_min: f64,
    #[serde(with = "extended_real")]
    pub s_max: f64,
    pub basis: AdmissibleBasis,
}

impl AdmissibleInterval {
    /// Open-interval membership.
    pub fn contains(&self, s: f64) -> bool {
        s > self.s_min && s < self.s_max
    }
}

/// Serializes `+∞` as the string `"inf"` since JSON has no infinity literal.
mod extended_real {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() && *value > 0.0 {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" || s == "+inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(D::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawModel {
    eigenvalue_law: EigenvalueLaw,
    covariance_law: CovarianceLaw,
    alpha: f64,
    n_modes: usize,
}

/// Truncated spectral description of `𝓛` and `Q`.
///
/// Immutable once built; eigenvalues and covariances are tabulated on
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct SpectralModel {
    eigenvalue_law: EigenvalueLaw,
    covariance_law: CovarianceLaw,
    alpha: f64,
    n_modes: usize,
    eigenvalues: Vec<f64>,
    covariances: Vec<f64>,
}

impl TryFrom<RawModel> for SpectralModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        SpectralModel::new(raw.eigenvalue_law, raw.covariance_law, raw.alpha, raw.n_modes)
    }
}

impl From<SpectralModel> for RawModel {
    fn from(m: SpectralModel) -> Self {
        RawModel {
            eigenvalue_law: m.eigenvalue_law,
            covariance_law: m.covariance_law,
            alpha: m.alpha,
            n_modes: m.n_modes,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be positive and finite, got {v}")))
    }
}

impl SpectralModel {
    pub fn new(
        eigenvalue_law: EigenvalueLaw,
        covariance_law: CovarianceLaw,
        alpha: f64,
        n_modes: usize,
    ) -> Result<Self> {
        positive("alpha", alpha)?;
        if n_modes == 0 {
            return Err(Error::Validation("n_modes must be at least 1".into()));
        }

        let eigenvalues: Vec<f64> = match &eigenvalue_law {
            EigenvalueLaw::PowerLaw { c, q } => {
                positive("eigenvalue_law.c", *c)?;
                positive("eigenvalue_law.q", *q)?;
                (1..=n_modes).map(|j| c * (j as f64).powf(*q)).collect()
            }
            EigenvalueLaw::Explicit { values } => {
                if values.len() != n_modes {
                    return Err(Error::Validation(format!(
                        "explicit eigenvalue list has {} entries, expected n_modes = {n_modes}",
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                    return Err(Error::Validation(format!("eigenvalue {v} is not positive")));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::Validation("explicit eigenvalues must be ascending".into()));
                }
                values.clone()
            }
        };
        if eigenvalues[0] <= alpha {
            return Err(Error::Validation(format!(
                "smallest eigenvalue {} must exceed alpha = {alpha}",
                eigenvalues[0]
            )));
        }

        let covariances: Vec<f64> = match &covariance_law {
            CovarianceLaw::MatchedDecay { epsilon, s_ref } => {
                positive("covariance_law.epsilon", *epsilon)?;
                positive("covariance_law.s_ref", *s_ref)?;
                let r = 2.0 * s_ref + epsilon;
                eigenvalues.iter().map(|l| l.powf(-r)).collect()
            }
            CovarianceLaw::PowerLaw { c0, r } => {
                positive("covariance_law.c0", *c0)?;
                if !r.is_finite() {
                    return Err(Error::Validation("covariance_law.r must be finite".into()));
                }
                eigenvalues.iter().map(|l| c0 * l.powf(-r)).collect()
            }
            CovarianceLaw::Explicit { values } => {
                if values.len() != n_modes {
                    return Err(Error::Validation(format!(
                        "explicit covariance list has {} entries, expected n_modes = {n_modes}",
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::Validation(format!("covariance eigenvalue {v} is negative")));
                }
                values.clone()
            }
        };
        let trace: f64 = covariances.iter().sum();
        if !trace.is_finite() {
            return Err(Error::Validation("covariance trace is not finite".into()));
        }

        let model = SpectralModel {
            eigenvalue_law,
            covariance_law,
            alpha,
            n_modes,
            eigenvalues,
            covariances,
        };
        if !model.is_trace_class() {
            log::warn!("covariance decay does not give a trace-class limit as n_modes grows");
        }
        Ok(model)
    }

    /// `λ_j = j²`, the Dirichlet Laplacian on `(0, π)`, with the given noise law.
    pub fn dirichlet_laplacian(n_modes: usize, covariance_law: CovarianceLaw) -> Result<Self> {
        Self::new(EigenvalueLaw::PowerLaw { c: 1.0, q: 2.0 }, covariance_law, 0.5, n_modes)
    }

    pub fn eigenvalue_law(&self) -> &EigenvalueLaw {
        &self.eigenvalue_law
    }

    pub fn covariance_law(&self) -> &CovarianceLaw {
        &self.covariance_law
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.n_modes {
            Err(Error::Index { what: "mode", index: j, len: self.n_modes })
        } else {
            Ok(())
        }
    }

    /// `λ_j` for the 1-based mode index `j`.
    pub fn eigenvalue(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.eigenvalues[j - 1])
    }

    /// `μ_j` for the 1-based mode index `j`.
    pub fn covariance(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.covariances[j - 1])
    }

    /// All eigenvalues, indexed from zero.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn covariances(&self) -> &[f64] {
        &self.covariances
    }

    /// `λ_j^s`.
    pub fn fractional_power(&self, j: usize, s: f64) -> Result<f64> {
        let lambda = self.eigenvalue(j)?;
        fractional_power(lambda, s)
    }

    /// `Σ_j λ_j^{2s} v_j²`.
    pub fn hs_norm_sq(&self, coeffs: &[f64], s: f64) -> Result<f64> {
        if coeffs.len() != self.n_modes {
            return Err(Error::Shape(format!(
                "coefficient vector has length {}, expected {}",
                coeffs.len(),
                self.n_modes
            )));
        }
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("H^s norm needs s >= 0, got {s}")));
        }
        Ok(self
            .eigenvalues
            .iter()
            .zip(coeffs)
            .map(|(l, v)| l.powf(2.0 * s) * v * v)
            .sum())
    }

    /// `Tr Q = Σ_{j≤N} μ_j`.
    pub fn trace(&self) -> f64 {
        self.covariances.iter().sum()
    }

    /// Decay exponent `r` with `μ_j ∝ λ_j^{-r}`, when the covariance law has one.
    fn covariance_exponent(&self) -> Option<f64> {
        match self.covariance_law {
            CovarianceLaw::MatchedDecay { epsilon, s_ref } => Some(2.0 * s_ref + epsilon),
            CovarianceLaw::PowerLaw { r, .. } => Some(r),
            CovarianceLaw::Explicit { .. } => None,
        }
    }

    /// Whether `Σ μ_j` stays bounded as the truncation is lifted. Explicit
    /// spectra are finite by construction.
    pub fn is_trace_class(&self) -> bool {
        match (&self.eigenvalue_law, self.covariance_exponent()) {
            (EigenvalueLaw::PowerLaw { q, .. }, Some(r)) => r * q > 1.0,
            _ => true,
        }
    }

    /// Largest `s` for which `Σ μ_j λ_j^s` converges in the untruncated limit,
    /// when that can be decided analytically.
    pub fn noise_regularity_limit(&self) -> Option<f64> {
        match (&self.eigenvalue_law, self.covariance_exponent()) {
            (EigenvalueLaw::PowerLaw { q, .. }, Some(r)) => Some(r - 1.0 / q),
            _ => None,
        }
    }

    /// Copy of the model with every `μ_j` multiplied by `factor`.
    pub fn with_noise_scale(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::Validation(format!("noise scale must be nonnegative, got {factor}")));
        }
        let values = self.covariances.iter().map(|m| m * factor).collect();
        Self::new(
            self.eigenvalue_law.clone(),
            CovarianceLaw::Explicit { values },
            self.alpha,
            self.n_modes,
        )
    }

    /// Admissible exponents `s` with `Σ λ_j^{-s} < ∞`, capped at `upper`
    /// (pass `f64::INFINITY` for no cap).
    ///
    /// Power-law spectra are decided exactly (`s > 1/q`). Explicit spectra
    /// use a tail test: the sum is declared convergent once
    /// `Σ_{j>N/2} λ_j^{-s} < TAIL_RATIO_THRESHOLD · Σ_{j≤N/2} λ_j^{-s}`.
    pub fn admissible_interval(&self, upper: f64) -> Result<AdmissibleInterval> {
        if upper.is_nan() || upper <= 0.0 {
            return Err(Error::Argument(format!("upper bound must be positive, got {upper}")));
        }
        let (s_min, basis) = match &self.eigenvalue_law {
            EigenvalueLaw::PowerLaw { q, .. } => (reciprocal(*q), AdmissibleBasis::Analytic),
            EigenvalueLaw::Explicit { values } => {
                (heuristic_summability_threshold(values)?, AdmissibleBasis::NumericHeuristic)
            }
        };
        if upper <= s_min {
            return Err(Error::EmptyAdmissible { lower: s_min, upper });
        }
        Ok(AdmissibleInterval { s_min, s_max: upper, basis })
    }
}

/// `λ^s` for a positive exponent.
pub fn fractional_power(lambda: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("fractional power needs s > 0, got {s}")));
    }
    Ok(lambda.powf(s))
}

/// `1/q`, nudged by one ulp when that makes `q · (1/q) == 1` hold exactly.
fn reciprocal(q: f64) -> f64 {
    let r = 1.0 / q;
    [r, r.next_up(), r.next_down()]
        .into_iter()
        .find(|c| q * c == 1.0)
        .unwrap_or(r)
}

fn log_sum_exp(logs: impl Iterator<Item = f64>) -> f64 {
    let logs: Vec<f64> = logs.collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// `ln(Σ_tail λ^{-s} / Σ_head λ^{-s})`, computed in log space.
fn log_tail_ratio(lambdas: &[f64], s: f64) -> f64 {
    let half = lambdas.len() / 2;
    let (head, tail) = lambdas.split_at(lambdas.len() - half);
    log_sum_exp(tail.iter().map(|l| -s * l.ln())) - log_sum_exp(head.iter().map(|l| -s * l.ln()))
}

fn heuristic_summability_threshold(lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() < 2 {
        return Err(Error::Validation(
            "tail-ratio admissibility test needs at least two modes".into(),
        ));
    }
    let target = TAIL_RATIO_THRESHOLD.ln();
    let converged = |s: f64| log_tail_ratio(lambdas, s) < target;

    let mut hi = 1.0;
    while !converged(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::EmptyAdmissible { lower: f64::INFINITY, upper: f64::INFINITY });
        }
    }
    let mut lo = 0.0;
    // The log ratio is nonincreasing in s because tail eigenvalues dominate head ones.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if converged(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
