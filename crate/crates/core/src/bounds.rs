//! Closed-form rate, bound, and sample-complexity calculators.
//!
//! Every asymptotic constant is set to 1 and the formulas are exposed as
//! rate shapes; comparisons against experiments are made through scaling
//! exponents, never absolute constants. Natural logarithm throughout.

use thiserror::Error;

use crate::instance::TheoremTag;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("sample size n = {0} violates the hypothesis n >= 30")]
    SampleSizeTooSmall(usize),
    #[error("target excess epsilon = {0} must be positive")]
    NonPositiveEpsilon(f64),
    #[error("restricted eigenvalue kappa = {0} must be positive")]
    NonPositiveKappa(f64),
    #[error("support eigenvalue lambda1 = {0} must be positive")]
    NonPositiveLambda1(f64),
    #[error("isometry condition violated: delta_2k + 3 theta_k2k = {0} is not < 1")]
    IsometryCondition(f64),
    #[error("delta_2k = {0} must lie in [0, 1)")]
    DeltaOutOfRange(f64),
}

/// Parameter bundle for the calculators, mirroring the quantities the rate
/// formulas consume. Used by the CLI table printer.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub sigma: f64,
    pub budget: f64,
    pub epsilon: f64,
    pub lambda1: f64,
    pub kappa: f64,
    pub delta_2k: f64,
    pub theta_k2k: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            n: 30,
            p: 90,
            k: 2,
            sigma: 0.0,
            budget: 1.0,
            epsilon: 0.01,
            lambda1: 1.0,
            kappa: 1.0,
            delta_2k: 0.0,
            theta_k2k: 0.0,
        }
    }
}

/// Fast and (when its hypotheses hold) slow lower bounds of the two
/// constructions.
///
/// Fast: `1/(32 n ln^2(3n))` for family 1, `1/(288 n ln^2(3n))` for family 2.
/// Slow: `sigma / (K sqrt(n) ln^2(max{3n, ceil(sqrt(n)/sigma)}))` with
/// `K = 102400` resp. `409600`, returned only when `sigma > 0` and
/// `sqrt(n)/sigma >= 100`; the caller checks the dimension-side condition
/// through the instance flag.
pub fn theorem_lower_bound(
    theorem: TheoremTag,
    n: usize,
    sigma: f64,
) -> Result<(f64, Option<f64>), BoundsError> {
    if n < 30 {
        return Err(BoundsError::SampleSizeTooSmall(n));
    }
    let nf = n as f64;
    let log3n = (3.0 * nf).ln();
    let (fast_c, slow_c) = match theorem {
        TheoremTag::One => (32.0, 102_400.0),
        TheoremTag::Two => (288.0, 409_600.0),
    };
    let fast = 1.0 / (fast_c * nf * log3n * log3n);
    let slow = if sigma > 0.0 && nf.sqrt() / sigma >= 100.0 {
        let ratio_ceil = (nf.sqrt() / sigma).ceil();
        let arg = (3.0 * nf).max(ratio_ceil);
        let log = arg.ln();
        Some(sigma / (slow_c * nf.sqrt() * log * log))
    } else {
        None
    };
    Ok((fast, slow))
}

/// Optimistic-rate excess-error shape: `a + sqrt(a * comparator_risk)` with
/// `a = (1 + B)^2 ln(p) / (n / ln^3 n)`.
pub fn optimistic_rate_bound(n: usize, p: usize, budget: f64, comparator_risk: f64) -> f64 {
    assert!(n >= 3, "n >= 3 keeps ln^3(n) positive");
    assert!(p >= 2, "p >= 2 keeps ln(p) positive");
    let nf = n as f64;
    let a = (1.0 + budget).powi(2) * (p as f64).ln() / (nf / nf.ln().powi(3));
    a + (a * comparator_risk.max(0.0)).sqrt()
}

/// Optimistic sample-complexity shape:
/// `(k ln(p) / (lambda1 eps)) * ((sigma^2 + eps)/eps) * ln^3(k/(lambda1 eps))`.
pub fn optimistic_sample_complexity(
    k: usize,
    p: usize,
    lambda1: f64,
    epsilon: f64,
    sigma: f64,
) -> Result<f64, BoundsError> {
    if !(epsilon > 0.0) {
        return Err(BoundsError::NonPositiveEpsilon(epsilon));
    }
    if !(lambda1 > 0.0) {
        return Err(BoundsError::NonPositiveLambda1(lambda1));
    }
    let kf = k as f64;
    let lead = kf * (p as f64).ln() / (lambda1 * epsilon);
    let noise = (sigma * sigma + epsilon) / epsilon;
    let log_term = (kf / (lambda1 * epsilon)).ln().max(0.0).powi(3);
    Ok(lead * noise * log_term)
}

/// Fast-rate excess-error shape: `sigma^2 k ln(p) / (kappa^2 n)`.
pub fn fast_rate_bound(
    n: usize,
    p: usize,
    k: usize,
    sigma: f64,
    kappa: f64,
) -> Result<f64, BoundsError> {
    if !(kappa > 0.0) {
        return Err(BoundsError::NonPositiveKappa(kappa));
    }
    Ok(sigma * sigma * k as f64 * (p as f64).ln() / (kappa * kappa * n as f64))
}

/// Fast-rate sample-complexity shape: `sigma^2 k ln(p) / (kappa^2 eps)`.
pub fn fast_rate_sample_complexity(
    k: usize,
    p: usize,
    sigma: f64,
    kappa: f64,
    epsilon: f64,
) -> Result<f64, BoundsError> {
    if !(kappa > 0.0) {
        return Err(BoundsError::NonPositiveKappa(kappa));
    }
    if !(epsilon > 0.0) {
        return Err(BoundsError::NonPositiveEpsilon(epsilon));
    }
    Ok(sigma * sigma * k as f64 * (p as f64).ln() / (kappa * kappa * epsilon))
}

/// Restricted-eigenvalue constant implied by restricted isometry:
/// `kappa = sqrt(1 - delta_2k) (1 - 3 theta_k2k / (1 - delta_2k))`, valid
/// when `delta_2k + 3 theta_k2k < 1`.
pub fn kappa_from_rip(delta_2k: f64, theta_k2k: f64) -> Result<f64, BoundsError> {
    if !(0.0..1.0).contains(&delta_2k) {
        return Err(BoundsError::DeltaOutOfRange(delta_2k));
    }
    let combined = delta_2k + 3.0 * theta_k2k;
    if !(combined < 1.0) {
        return Err(BoundsError::IsometryCondition(combined));
    }
    Ok((1.0 - delta_2k).sqrt() * (1.0 - 3.0 * theta_k2k / (1.0 - delta_2k)))
}

/// l1 budget implied by sparsity and the support eigenvalue:
/// `sqrt(4 k / lambda1)`.
pub fn l1_budget_from_sparsity(k: usize, lambda1: f64) -> Result<f64, BoundsError> {
    if !(lambda1 > 0.0) {
        return Err(BoundsError::NonPositiveLambda1(lambda1));
    }
    Ok((4.0 * k as f64 / lambda1).sqrt())
}

/// All formula values for one parameter bundle, as `(name, value)` rows.
/// Rows whose preconditions fail are omitted.
pub fn bound_table(params: &BoundParams) -> Vec<(&'static str, f64)> {
    let mut rows = Vec::new();
    if let Ok((fast, slow)) = theorem_lower_bound(TheoremTag::One, params.n, params.sigma) {
        rows.push(("theorem1_fast_lower_bound", fast));
        if let Some(s) = slow {
            rows.push(("theorem1_slow_lower_bound", s));
        }
    }
    if let Ok((fast, slow)) = theorem_lower_bound(TheoremTag::Two, params.n, params.sigma) {
        rows.push(("theorem2_fast_lower_bound", fast));
        if let Some(s) = slow {
            rows.push(("theorem2_slow_lower_bound", s));
        }
    }
    if params.n >= 3 && params.p >= 2 {
        rows.push((
            "optimistic_rate_bound",
            optimistic_rate_bound(params.n, params.p, params.budget, params.sigma * params.sigma),
        ));
    }
    if let Ok(v) =
        optimistic_sample_complexity(params.k, params.p, params.lambda1, params.epsilon, params.sigma)
    {
        rows.push(("optimistic_sample_complexity", v));
    }
    if let Ok(v) = fast_rate_bound(params.n, params.p, params.k, params.sigma, params.kappa) {
        rows.push(("fast_rate_bound", v));
    }
    if let Ok(v) =
        fast_rate_sample_complexity(params.k, params.p, params.sigma, params.kappa, params.epsilon)
    {
        rows.push(("fast_rate_sample_complexity", v));
    }
    if let Ok(v) = kappa_from_rip(params.delta_2k, params.theta_k2k) {
        rows.push(("kappa_from_rip", v));
    }
    if let Ok(v) = l1_budget_from_sparsity(params.k, params.lambda1) {
        rows.push(("l1_budget_from_sparsity", v));
    }
    rows
}
