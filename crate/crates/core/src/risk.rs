//! Population prediction risk of a coefficient vector against an instance.
//!
//! In the well-specified model with noise independent of the covariates,
//! `E[(y - x^T b)^2] = sigma^2 + (b - b*)^T Sigma (b - b*)`, so the excess
//! risk is an exact quadratic form and can be minimized in closed form over
//! each linear segment of a solution path.

use thiserror::Error;

use crate::instance::{Instance, Sample, TheoremTag};
use crate::solver::LassoPath;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("coefficient length {got} does not match dimension p = {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("empty test sample")]
    EmptyTestSample,
    #[error("empty path")]
    EmptyPath,
}

/// Excess and total risk, with the three-term split for family 2.
#[derive(Debug, Clone)]
pub struct ExcessRiskReport {
    /// `(b - b*)^T Sigma (b - b*)`.
    pub excess: f64,
    /// `sigma^2 + excess`.
    pub total_risk: f64,
    /// Family 2 only: the u-mismatch term and the two w-channel terms, which
    /// sum to the excess.
    pub term_decomposition: Option<[f64; 3]>,
}

/// Exact population risk of `beta` under the instance.
pub fn excess_risk(instance: &Instance, beta: &[f64]) -> Result<ExcessRiskReport, RiskError> {
    if beta.len() != instance.p {
        return Err(RiskError::LengthMismatch {
            got: beta.len(),
            expected: instance.p,
        });
    }
    let diff: Vec<f64> = beta
        .iter()
        .zip(instance.beta_star.iter())
        .map(|(b, s)| b - s)
        .collect();
    let excess = instance.covariance.quadratic_form(&diff).max(0.0);
    let term_decomposition = match (&instance.theorem, &instance.covariance) {
        (TheoremTag::Two, crate::instance::CovarianceOp::Theorem2 { tau, c }) => {
            // Coefficient order is (u_1..u_{p-3}, v, w_1, w_2); beta* puts
            // 1/2 on each w. Expanding the collinear covariate v over the
            // latent normals gives one squared mismatch per channel.
            let pu = tau.len();
            let bv = beta[pu];
            let mut term1 = 0.0;
            for j in 0..pu {
                let m = beta[j] - tau[j] * bv;
                term1 += m * m;
            }
            let shift = c * std::f64::consts::FRAC_1_SQRT_2 * bv;
            let term2 = (beta[pu + 1] + shift - 0.5).powi(2);
            let term3 = (beta[pu + 2] + shift - 0.5).powi(2);
            Some([term1, term2, term3])
        }
        _ => None,
    };
    Ok(ExcessRiskReport {
        excess,
        total_risk: instance.sigma * instance.sigma + excess,
        term_decomposition,
    })
}

/// Monte Carlo estimate of the total risk: mean squared residual on an
/// independent test sample.
pub fn empirical_risk(beta: &[f64], test_sample: &Sample) -> Result<f64, RiskError> {
    let n = test_sample.x.nrows();
    let p = test_sample.x.ncols();
    if n == 0 {
        return Err(RiskError::EmptyTestSample);
    }
    if beta.len() != p {
        return Err(RiskError::LengthMismatch {
            got: beta.len(),
            expected: p,
        });
    }
    let xs = test_sample.x.as_slice().expect("row-major design");
    let mut total = 0.0;
    for i in 0..n {
        let row = &xs[i * p..(i + 1) * p];
        let fit: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
        let res = test_sample.y[i] - fit;
        total += res * res;
    }
    Ok(total / n as f64)
}

/// Exact minimum of the excess over one linear segment `a + t (b - a)`,
/// `t` in `[0, 1]`. Returns `(t, value)`.
pub fn segment_min_excess(instance: &Instance, from: &[f64], to: &[f64]) -> (f64, f64) {
    let cov = &instance.covariance;
    let u: Vec<f64> = from
        .iter()
        .zip(instance.beta_star.iter())
        .map(|(b, s)| b - s)
        .collect();
    let w: Vec<f64> = to.iter().zip(from.iter()).map(|(b, a)| b - a).collect();
    let quad = cov.quadratic_form(&w);
    let lin = cov.bilinear_form(&u, &w);
    let base = cov.quadratic_form(&u);
    if quad <= 0.0 {
        // Degenerate direction: excess is constant along the segment.
        return (0.0, base.max(0.0));
    }
    let t = (-lin / quad).clamp(0.0, 1.0);
    let val = base + 2.0 * t * lin + t * t * quad;
    (t, val.max(0.0))
}

/// Continuous minimum of the excess risk over the whole path.
///
/// Within each segment the excess is a quadratic in the interpolation
/// parameter, so the global continuous minimum is exact, not just the best
/// breakpoint. Returns `(B_at_min, min_excess)`.
pub fn min_excess_over_path(
    instance: &Instance,
    path: &LassoPath,
) -> Result<(f64, f64), RiskError> {
    if path.breakpoints.is_empty() {
        return Err(RiskError::EmptyPath);
    }
    if path.p != instance.p {
        return Err(RiskError::LengthMismatch {
            got: path.p,
            expected: instance.p,
        });
    }
    let first = path.breakpoints[0].dense_beta(path.p);
    let mut best = excess_risk(instance, &first)?.excess;
    let mut best_b = path.breakpoints[0].budget;
    let mut prev = first;
    for window in path.breakpoints.windows(2) {
        let next = window[1].dense_beta(path.p);
        let (t, val) = segment_min_excess(instance, &prev, &next);
        if val < best {
            best = val;
            best_b = window[0].budget + t * (window[1].budget - window[0].budget);
        }
        prev = next;
    }
    Ok((best_b, best))
}

/// Export `B,excess,total` at the breakpoints plus the interior minimum of
/// each segment where it is not attained at an endpoint.
pub fn write_risk_curve_csv<W: std::io::Write>(
    out: &mut W,
    instance: &Instance,
    path: &LassoPath,
) -> Result<(), std::io::Error> {
    writeln!(out, "B,excess,total")?;
    let sig2 = instance.sigma * instance.sigma;
    let mut prev: Option<Vec<f64>> = None;
    let mut prev_budget = 0.0;
    for bp in &path.breakpoints {
        let beta = bp.dense_beta(path.p);
        if let Some(ref p0) = prev {
            let (t, val) = segment_min_excess(instance, p0, &beta);
            if t > 0.0 && t < 1.0 {
                let b = prev_budget + t * (bp.budget - prev_budget);
                writeln!(out, "{:.16e},{:.16e},{:.16e}", b, val, sig2 + val)?;
            }
        }
        let excess = excess_risk(instance, &beta).expect("path matches instance").excess;
        writeln!(out, "{:.16e},{:.16e},{:.16e}", bp.budget, excess, sig2 + excess)?;
        prev = Some(beta);
        prev_budget = bp.budget;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{make_theorem1_instance, make_theorem2_instance, sample_design};
    use crate::solver::{compute_path, Breakpoint, PathStop};

    fn synthetic_path(p: usize, points: Vec<Vec<f64>>) -> LassoPath {
        let breakpoints = points
            .into_iter()
            .map(|beta| {
                let coeffs: Vec<(usize, f64)> = beta
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect();
                let budget: f64 = beta.iter().map(|v| v.abs()).sum();
                Breakpoint {
                    budget,
                    lambda: 0.0,
                    rss: 0.0,
                    coeffs,
                }
            })
            .collect();
        LassoPath {
            breakpoints,
            n: 30,
            p,
            reached_min_rss: true,
            truncated: false,
        }
    }

    #[test]
    fn excess_risk_trivial_values() {
        let inst = make_theorem1_instance(30, 90, 0.3).unwrap();
        let at_star = excess_risk(&inst, inst.beta_star.as_slice().unwrap()).unwrap();
        assert!(at_star.excess == 0.0);
        assert!((at_star.total_risk - 0.09).abs() < 1e-15);

        let zero = excess_risk(&inst, &vec![0.0; 90]).unwrap();
        let l2sq: f64 = inst.beta_star.iter().map(|b| b * b).sum();
        assert!((zero.excess - l2sq).abs() < 1e-12);

        assert!(matches!(
            excess_risk(&inst, &vec![0.0; 89]),
            Err(RiskError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn theorem2_dense_predictor_has_zero_excess() {
        let inst = make_theorem2_instance(30, 90, 0.2).unwrap();
        let dense = inst.beta_dense.as_ref().unwrap();
        let report = excess_risk(&inst, dense.as_slice().unwrap()).unwrap();
        assert!(report.excess <= 1e-10, "excess {}", report.excess);
        let terms = report.term_decomposition.unwrap();
        assert!(terms.iter().all(|t| *t <= 1e-10));
    }

    #[test]
    fn term_decomposition_sums_to_quadratic_form() {
        let inst = make_theorem2_instance(30, 90, 0.0).unwrap();
        let dense_sigma = inst.covariance.to_dense().unwrap();
        let mut state = 0x1234_5678_u64;
        let mut next = || {
            // xorshift is plenty for test probes
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        for _ in 0..25 {
            let beta: Vec<f64> = (0..90).map(|_| next()).collect();
            let report = excess_risk(&inst, &beta).unwrap();
            let terms = report.term_decomposition.unwrap();
            let sum: f64 = terms.iter().sum();
            assert!(
                (sum - report.excess).abs() <= 1e-10 * (1.0 + report.excess),
                "terms {sum} vs excess {}",
                report.excess
            );
            // Dense oracle agreement.
            let diff: Vec<f64> = beta
                .iter()
                .zip(inst.beta_star.iter())
                .map(|(b, s)| b - s)
                .collect();
            let mut dense_qf = 0.0;
            for i in 0..90 {
                for j in 0..90 {
                    dense_qf += diff[i] * dense_sigma[(i, j)] * diff[j];
                }
            }
            assert!((dense_qf - report.excess).abs() <= 1e-10 * (1.0 + dense_qf));
        }
    }

    #[test]
    fn empirical_risk_matches_population() {
        // sigma = 0.2 at beta*: total risk is sigma^2 = 0.04. The squared
        // residuals are sigma^2 chi^2_1 with variance 2 sigma^4. 1e5 test
        // rows drawn as 100 independent samples of a moderate instance.
        let inst = make_theorem1_instance(1000, 3000, 0.2).unwrap();
        let mut total = 0.0;
        let reps = 100; // 1e5 rows in total
        for r in 0..reps {
            let s = sample_design(&inst, 40_000 + r);
            total += empirical_risk(inst.beta_star.as_slice().unwrap(), &s).unwrap()
                * inst.n as f64;
        }
        let n_total = (reps as usize * inst.n) as f64;
        let mean = total / n_total;
        let se = (2.0f64 * 0.04 * 0.04 / n_total).sqrt();
        assert!((mean - 0.04).abs() <= 3.0 * se, "mean {mean}, se {se}");

        // Noiseless with beta = 0: risk is ||beta*||_2^2.
        let inst0 = make_theorem1_instance(1000, 3000, 0.0).unwrap();
        let l2sq: f64 = inst0.beta_star.iter().map(|b| b * b).sum();
        let mut total0 = 0.0;
        let mut sq_total = 0.0;
        for r in 0..reps {
            let s = sample_design(&inst0, 80_000 + r);
            for i in 0..inst0.n {
                let res = s.y[i]; // beta = 0
                total0 += res * res;
                sq_total += res * res * res * res;
            }
        }
        let mean0 = total0 / n_total;
        let var0 = (sq_total / n_total - mean0 * mean0).max(0.0);
        let se0 = (var0 / n_total).sqrt();
        assert!((mean0 - l2sq).abs() <= 3.0 * se0, "mean {mean0} vs {l2sq}");
    }

    #[test]
    fn empty_test_sample_is_rejected() {
        use ndarray::{Array1, Array2};
        let empty = Sample {
            x: Array2::zeros((0, 4)),
            y: Array1::zeros(0),
            z: Array1::zeros(0),
            seed: 0,
        };
        assert!(matches!(
            empirical_risk(&[0.0; 4], &empty),
            Err(RiskError::EmptyTestSample)
        ));
    }

    #[test]
    fn segment_minimum_is_projection_under_identity() {
        let inst = make_theorem1_instance(30, 90, 0.0).unwrap();
        // Single segment from 0 to some endpoint: under the identity
        // covariance the minimizer of ||t*end - beta*||^2 over t is the
        // projection coefficient <beta*, end>/||end||^2.
        let mut end = vec![0.0; 90];
        end[0] = 2.0;
        end[10] = -1.0;
        let (t, val) = segment_min_excess(&inst, &vec![0.0; 90], &end);
        let dot: f64 = end
            .iter()
            .zip(inst.beta_star.iter())
            .map(|(e, b)| e * b)
            .sum();
        let t_expect = (dot / end.iter().map(|e| e * e).sum::<f64>()).clamp(0.0, 1.0);
        assert!((t - t_expect).abs() < 1e-12);
        // Grid oracle.
        let mut grid_best = f64::INFINITY;
        for k in 0..=10_000 {
            let tt = k as f64 / 10_000.0;
            let beta: Vec<f64> = end.iter().map(|e| tt * e).collect();
            let e = excess_risk(&inst, &beta).unwrap().excess;
            grid_best = grid_best.min(e);
        }
        assert!(val <= grid_best + 1e-8);
        assert!((val - grid_best).abs() < 1e-6);
    }

    #[test]
    fn path_through_beta_star_attains_zero() {
        let inst = make_theorem1_instance(30, 90, 0.0).unwrap();
        let beta_star: Vec<f64> = inst.beta_star.to_vec();
        let double: Vec<f64> = beta_star.iter().map(|b| 2.0 * b).collect();
        let path = synthetic_path(90, vec![vec![0.0; 90], beta_star, double]);
        let (b_at, min) = min_excess_over_path(&inst, &path).unwrap();
        assert!(min <= 1e-20);
        let l1: f64 = inst.beta_star.iter().map(|b| b.abs()).sum();
        assert!((b_at - l1).abs() < 1e-10);
    }

    #[test]
    fn min_is_below_every_breakpoint() {
        let inst = make_theorem1_instance(30, 90, 0.1).unwrap();
        let sample = sample_design(&inst, 11);
        let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        let (_, min) = min_excess_over_path(&inst, &path).unwrap();
        for bp in &path.breakpoints {
            let e = excess_risk(&inst, &bp.dense_beta(90)).unwrap().excess;
            assert!(min <= e + 1e-12);
        }
    }

    #[test]
    fn noiseless_min_excess_respects_lower_bound() {
        // Direct evaluation of 1/(32 n ln^2(3n)) at n = 30.
        let bound = 1.0 / (32.0 * 30.0 * 90f64.ln().powi(2));
        assert!((bound - 5.14446e-5).abs() < 1e-9);
        let inst = make_theorem1_instance(30, 90, 0.0).unwrap();
        for seed in 0..3u64 {
            let sample = sample_design(&inst, seed);
            let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
            let (_, min) = min_excess_over_path(&inst, &path).unwrap();
            assert!(min >= bound, "seed {seed}: min {min} < bound {bound}");
        }
    }
}
