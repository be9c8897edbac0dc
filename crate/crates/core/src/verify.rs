//! Seeded Monte Carlo verification of the proof-level inequalities: the
//! spectral upper bound on `X_J^T X` increments, the projected-noise lower
//! bound, the chi-square norm fact, the Gaussian spectral-norm bound, and
//! restricted-eigenvalue / support-eigenvalue conditions.
//!
//! Every trial is reproducible from `(seed, trial_id)`: the per-trial RNG
//! stream is derived from those two values alone.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::experiment::derive_seed;
use crate::instance::{CovarianceOp, Instance, InstanceError, Sample};
use crate::linalg;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("at least one trial is required")]
    ZeroTrials,
    #[error("enumeration limits exceeded: {0}")]
    EnumerationLimit(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// One logged inequality evaluation.
#[derive(Debug, Clone)]
pub struct InequalityTrialLog {
    pub trial_id: u64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; zero when both sides vanish.
    pub ratio: f64,
    pub satisfied: bool,
    /// Trial provenance: derived seed plus the index-set sizes or probe kind.
    pub context: String,
}

/// Inequality slack tolerance used by the trial logs.
const SLACK: f64 = 1e-9;

fn upper_satisfied(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + SLACK) + SLACK
}

fn lower_satisfied(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs * (1.0 - SLACK) - SLACK
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs == 0.0 {
        if lhs.abs() <= SLACK {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        lhs / rhs
    }
}

/// Write the trial logs as `trial_id,lhs,rhs,ratio,satisfied` rows.
pub fn write_trial_logs_csv<W: std::io::Write>(
    out: &mut W,
    logs: &[InequalityTrialLog],
) -> std::io::Result<()> {
    writeln!(out, "trial_id,lhs,rhs,ratio,satisfied")?;
    for log in logs {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{}",
            log.trial_id, log.lhs, log.rhs, log.ratio, log.satisfied
        )?;
    }
    Ok(())
}

/// Largest observed `lhs/rhs` across a batch of logs.
pub fn max_ratio(logs: &[InequalityTrialLog]) -> f64 {
    logs.iter().fold(0.0f64, |m, l| m.max(l.ratio))
}

fn random_subset(rng: &mut ChaCha8Rng, universe: usize, size: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..universe).collect();
    idx.partial_shuffle(rng, size);
    let mut out: Vec<usize> = idx[..size].to_vec();
    out.sort_unstable();
    out
}

/// Per-trial check of the spectral increment bound
/// `||X_J^T X (bt - b*)||_2 <= ||Sigma||_sp 16 sqrt(2) n ln(p) sqrt((bt-b*)^T Sigma (bt-b*))`
/// for a random `|J| = n` and random `bt` supported on `J` (one Gaussian
/// draw plus the scaled directions `t b*_J`, `t` in `{0.5, 1, 2}`); the worst
/// candidate per trial is logged.
pub fn check_lemma_max(
    instance: &Instance,
    sample: &Sample,
    trials: usize,
    seed: u64,
) -> Result<Vec<InequalityTrialLog>, VerifyError> {
    if trials == 0 {
        return Err(VerifyError::ZeroTrials);
    }
    let n = instance.n;
    let p = instance.p;
    if sample.x.nrows() != n || sample.x.ncols() != p {
        return Err(VerifyError::Hypothesis(
            "sample dimensions do not match the instance".into(),
        ));
    }
    let sigma_sp = instance.covariance.spectral_norm();
    let factor = sigma_sp * 16.0 * std::f64::consts::SQRT_2 * n as f64 * (p as f64).ln();
    let xs = sample.x.as_slice().expect("row-major design");
    let mut logs = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let trial_seed = derive_seed(seed, 0x11_eaa, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let j_set = random_subset(&mut rng, p, n);
        let gauss: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

        let mut worst: Option<InequalityTrialLog> = None;
        let mut candidate = |bt: Vec<f64>, kind: &str| {
            let delta: Vec<f64> = bt
                .iter()
                .zip(instance.beta_star.iter())
                .map(|(b, s)| b - s)
                .collect();
            // lhs = ||X_J^T (X delta)||.
            let mut xd = vec![0.0; n];
            for i in 0..n {
                xd[i] = linalg::dot(&xs[i * p..(i + 1) * p], &delta);
            }
            let mut lhs_sq = 0.0;
            for &j in &j_set {
                let mut dotv = 0.0;
                for i in 0..n {
                    dotv += xs[i * p + j] * xd[i];
                }
                lhs_sq += dotv * dotv;
            }
            let lhs = lhs_sq.sqrt();
            let rhs = factor * instance.covariance.quadratic_form(&delta).max(0.0).sqrt();
            let log = InequalityTrialLog {
                trial_id: trial,
                lhs,
                rhs,
                ratio: ratio(lhs, rhs),
                satisfied: upper_satisfied(lhs, rhs),
                context: format!("seed={trial_seed};|J|={n};kind={kind}"),
            };
            match &worst {
                Some(w) if w.ratio >= log.ratio => {}
                _ => worst = Some(log),
            }
        };

        let mut bt = vec![0.0; p];
        for (slot, &j) in j_set.iter().enumerate() {
            bt[j] = gauss[slot];
        }
        candidate(bt, "gauss");
        for t in [0.5, 1.0, 2.0] {
            let mut bt = vec![0.0; p];
            for &j in &j_set {
                bt[j] = t * instance.beta_star[j];
            }
            candidate(bt, &format!("scaled-{t}"));
        }
        logs.push(worst.expect("at least one candidate per trial"));
    }
    Ok(logs)
}

/// Whether a candidate index-set size is admissible for the projected-noise
/// bound.
pub fn admissible_j1_size(size: usize, n: usize, sigma: f64) -> bool {
    size as f64 >= (n as f64).sqrt() / (2.0 * sigma)
}

/// Per-trial check of the projected-noise lower bound
/// `||Proj_{1}^perp (X_{J1}^T z)||^2 >= lambda_min^2(Sigma_[m]) n^{3/2} / (200 sigma)`
/// over random admissible `J1` inside the leading window `[m]`,
/// `m = ceil(sqrt(n)/sigma)`. The fixed vector `z` is resampled until
/// `||z||^2 >= 0.5 n`, and `lambda_min` is taken on the ambient leading
/// block, matching how the bound is applied.
pub fn check_lemma_min(
    instance: &Instance,
    trials: usize,
    seed: u64,
) -> Result<Vec<InequalityTrialLog>, VerifyError> {
    if trials == 0 {
        return Err(VerifyError::ZeroTrials);
    }
    let n = instance.n;
    let sigma = instance.sigma;
    if sigma <= 0.0 || (n as f64).sqrt() / sigma < 100.0 {
        return Err(VerifyError::Hypothesis(format!(
            "sqrt(n)/sigma = {} must be >= 100",
            (n as f64).sqrt() / sigma
        )));
    }
    let m = ((n as f64).sqrt() / sigma).ceil() as usize;
    if m > instance.p {
        return Err(VerifyError::Hypothesis(format!(
            "window size {m} exceeds the dimension p = {}",
            instance.p
        )));
    }
    let lambda_min = match &instance.covariance {
        CovarianceOp::Identity { .. } => 1.0,
        CovarianceOp::Theorem2 { tau, .. } if m <= tau.len() => 1.0,
        other => {
            if m > 1000 {
                return Err(VerifyError::EnumerationLimit(format!(
                    "dense eigensolve on the leading block needs m <= 1000, got {m}"
                )));
            }
            let support: Vec<usize> = (0..m).collect();
            let block = other.restrict(&support);
            linalg::jacobi_eigenvalues(&block)[0]
        }
    };
    let rhs = lambda_min * lambda_min * (n as f64).powf(1.5) / (200.0 * sigma);
    let min_size = ((n as f64).sqrt() / (2.0 * sigma)).ceil() as usize;
    let xs_needed = m;
    let mut logs = Vec::with_capacity(trials);
    for trial in 0..trials as u64 {
        let trial_seed = derive_seed(seed, 0x11_e1b, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        // The lemma treats z as fixed with ||z||^2 >= 0.5 n.
        let mut z: Vec<f64>;
        loop {
            z = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            if linalg::norm2_sq(&z) >= 0.5 * n as f64 {
                break;
            }
        }
        let design_seed = derive_seed(trial_seed, 0xde5167, 0);
        let sample = crate::instance::sample_design(instance, design_seed);
        let xs = sample.x.as_slice().expect("row-major design");
        let p = instance.p;
        let size = rng.gen_range(min_size..=m.max(min_size));
        debug_assert!(admissible_j1_size(size, n, sigma));
        let j1 = random_subset(&mut rng, xs_needed, size);
        let mut w = vec![0.0; size];
        for (slot, &j) in j1.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..n {
                acc += xs[i * p + j] * z[i];
            }
            w[slot] = acc;
        }
        let mean = w.iter().sum::<f64>() / size as f64;
        let lhs: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum();
        logs.push(InequalityTrialLog {
            trial_id: trial,
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
            satisfied: lower_satisfied(lhs, rhs),
            context: format!("seed={trial_seed};|J1|={size};m={m};lmin_ambient={lambda_min}"),
        });
    }
    Ok(logs)
}

/// Aggregate result of the chi-square norm check.
#[derive(Debug, Clone)]
pub struct ChiSquareReport {
    pub n: usize,
    pub trials: usize,
    /// Observed frequency of `||z||^2 < 0.5 n`.
    pub frequency: f64,
    /// Stated tail probability `exp(-0.0625 n)`.
    pub bound: f64,
    pub binomial_se: f64,
    pub passes: bool,
}

/// Empirical tail frequency of `||z||^2 < 0.5 n` for `z ~ N(0, I_n)`,
/// compared against `exp(-0.0625 n)` plus three binomial standard errors.
pub fn check_chi_square_fact(
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ChiSquareReport, VerifyError> {
    if trials == 0 {
        return Err(VerifyError::ZeroTrials);
    }
    if n == 0 {
        return Err(VerifyError::Hypothesis("n >= 1 required".into()));
    }
    let mut below = 0usize;
    for trial in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc415_u64, trial));
        let mut norm_sq = 0.0;
        for _ in 0..n {
            let v: f64 = StandardNormal.sample(&mut rng);
            norm_sq += v * v;
        }
        if norm_sq < 0.5 * n as f64 {
            below += 1;
        }
    }
    let frequency = below as f64 / trials as f64;
    let bound = (-0.0625 * n as f64).exp();
    let binomial_se = (bound * (1.0 - bound) / trials as f64).sqrt();
    Ok(ChiSquareReport {
        n,
        trials,
        frequency,
        bound,
        binomial_se,
        passes: frequency <= bound + 3.0 * binomial_se,
    })
}

/// Result of the restricted-eigenvalue check.
#[derive(Debug, Clone)]
pub struct RestrictedEigReport {
    /// Smallest support eigenvalue over every `|J| <= k`, with its support.
    pub lambda1_min: f64,
    pub lambda1_min_support: Vec<usize>,
    /// Per-size minima `(|J|, min lambda_min(Sigma_J))`.
    pub lambda1_by_size: Vec<(usize, f64)>,
    /// Smallest observed cone ratio `b^T Sigma b / ||b_J||_2^2`; an upper
    /// estimate of the restricted-eigenvalue constant. Probes certify
    /// violations, not satisfaction.
    pub kappa_upper: f64,
    /// A probe that drove the ratio essentially to zero, if any.
    pub witness: Option<Vec<f64>>,
}

/// Exact support eigenvalue for one index set (closed forms, |J| <= 3).
pub fn lambda1_for_support(cov: &CovarianceOp, support: &[usize]) -> f64 {
    linalg::sym_eig_min_small(&cov.restrict(support))
}

fn for_each_combination(p: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 || k > p {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // Advance the rightmost index that has room, resetting the tail.
        let mut i = k;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if idx[i] < i + p - k {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            return;
        }
    }
}

/// Brute-force enumeration of every support eigenvalue `lambda_min(Sigma_J)`
/// for `|J| <= k`, plus a one-sided probe estimate of the restricted
/// eigenvalue constant on the cone `||b_Jbar||_1 <= 3 ||b_J||_1`.
pub fn check_restricted_eigenvalue(
    cov: &CovarianceOp,
    k: usize,
    probes: usize,
    seed: u64,
) -> Result<RestrictedEigReport, VerifyError> {
    let p = cov.dim();
    if p > 200 {
        return Err(VerifyError::EnumerationLimit(format!(
            "restricted-eigenvalue enumeration needs p <= 200, got {p}"
        )));
    }
    if k == 0 || k > 3 {
        return Err(VerifyError::EnumerationLimit(format!(
            "support size k must be in 1..=3, got {k}"
        )));
    }
    let mut lambda1_min = f64::INFINITY;
    let mut lambda1_support = Vec::new();
    let mut by_size = Vec::new();
    for size in 1..=k.min(p) {
        let mut size_min = f64::INFINITY;
        for_each_combination(p, size, |j_set| {
            let v = lambda1_for_support(cov, j_set);
            if v < size_min {
                size_min = v;
            }
            if v < lambda1_min {
                lambda1_min = v;
                lambda1_support = j_set.to_vec();
            }
        });
        by_size.push((size, size_min));
    }

    let mut kappa_upper = lambda1_min;
    let mut witness: Option<Vec<f64>> = None;
    let consider = |beta: &[f64], j_set: &[usize], kappa: &mut f64, wit: &mut Option<Vec<f64>>| {
        let denom: f64 = j_set.iter().map(|&j| beta[j] * beta[j]).sum();
        if denom <= 0.0 {
            return;
        }
        let r = cov.quadratic_form(beta).max(0.0) / denom;
        if r < *kappa {
            *kappa = r;
        }
        if r < 1e-10 && wit.is_none() {
            *wit = Some(beta.to_vec());
        }
    };

    // Structured pair probes catch duplicated or collinear covariates:
    // b = e_i -+ e_j with J = {i} stays in the cone since ||b_Jbar||_1 = 1
    // <= 3 ||b_J||_1.
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let qf_minus = cov.entry(i, i) + cov.entry(j, j) - 2.0 * cov.entry(i, j);
            let qf_plus = cov.entry(i, i) + cov.entry(j, j) + 2.0 * cov.entry(i, j);
            for (qf, sgn) in [(qf_minus, -1.0), (qf_plus, 1.0)] {
                let r = qf.max(0.0);
                if r < kappa_upper || (r < 1e-10 && witness.is_none()) {
                    let mut beta = vec![0.0; p];
                    beta[i] = 1.0;
                    beta[j] = sgn;
                    consider(&beta, &[i], &mut kappa_upper, &mut witness);
                }
            }
        }
    }

    // Random cone probes.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4e0, 0));
    for _ in 0..probes {
        let size = rng.gen_range(1..=k.min(p));
        let j_set = random_subset(&mut rng, p, size);
        let mut beta = vec![0.0; p];
        let mut l1_j = 0.0;
        for &j in &j_set {
            let v: f64 = StandardNormal.sample(&mut rng);
            beta[j] = v;
            l1_j += v.abs();
        }
        if l1_j == 0.0 {
            continue;
        }
        let budget = 3.0 * l1_j * rng.gen::<f64>();
        let comp_size = rng.gen_range(0..=8.min(p - size));
        if comp_size > 0 {
            let complement: Vec<usize> = (0..p).filter(|j| !j_set.contains(j)).collect();
            let mut picks = complement;
            picks.partial_shuffle(&mut rng, comp_size);
            let weights: Vec<f64> = (0..comp_size).map(|_| rng.gen::<f64>() + 1e-9).collect();
            let total: f64 = weights.iter().sum();
            for (slot, &j) in picks[..comp_size].iter().enumerate() {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                beta[j] = sign * budget * weights[slot] / total;
            }
        }
        consider(&beta, &j_set, &mut kappa_upper, &mut witness);
    }

    Ok(RestrictedEigReport {
        lambda1_min,
        lambda1_min_support: lambda1_support,
        lambda1_by_size: by_size,
        kappa_upper,
        witness,
    })
}

/// Aggregate result of the Gaussian spectral-norm check.
#[derive(Debug, Clone)]
pub struct SpectralBoundReport {
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    pub violations: usize,
    pub frequency: f64,
    /// The bound `sqrt(16 n ln p)`.
    pub threshold: f64,
    /// Stated failure probability `exp(-2 n ln p)`.
    pub bound: f64,
    pub passes: bool,
}

/// Frequency of `||A||_sp > sqrt(16 n ln p)` for `A` an `n x n` standard
/// Gaussian matrix.
pub fn check_gaussian_spectral_bound(
    n: usize,
    p: usize,
    trials: usize,
    seed: u64,
) -> Result<SpectralBoundReport, VerifyError> {
    if trials == 0 {
        return Err(VerifyError::ZeroTrials);
    }
    if n == 0 || p < n {
        return Err(VerifyError::Hypothesis(
            "need n >= 1 and p >= n for an n-column window".into(),
        ));
    }
    let threshold = (16.0 * n as f64 * (p as f64).ln()).sqrt();
    let mut violations = 0usize;
    for trial in 0..trials as u64 {
        let trial_seed = derive_seed(seed, 0x59ec, trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let a: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = square_spectral_norm(&a, n, trial_seed);
        if norm > threshold * (1.0 + SLACK) {
            violations += 1;
        }
    }
    let frequency = violations as f64 / trials as f64;
    let bound = (-2.0 * n as f64 * (p as f64).ln()).exp();
    let binomial_se = (bound * (1.0 - bound) / trials as f64).sqrt();
    Ok(SpectralBoundReport {
        n,
        p,
        trials,
        violations,
        frequency,
        threshold,
        bound,
        passes: frequency <= bound + 3.0 * binomial_se,
    })
}

/// Spectral norm of a square matrix via power iteration on `A^T A`.
pub fn square_spectral_norm(a: &[f64], n: usize, seed: u64) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    let mut scratch = vec![0.0; n];
    let top = linalg::power_iteration(
        n,
        |v, out| {
            for i in 0..n {
                scratch[i] = linalg::dot(&a[i * n..(i + 1) * n], v);
            }
            linalg::xt_matvec(a, n, n, &scratch, out);
        },
        1e-10,
        10_000,
        seed,
    );
    top.max(0.0).sqrt()
}

/// Idempotent projector onto the complement of the all-ones direction.
pub fn project_out_ones(w: &[f64]) -> Vec<f64> {
    if w.is_empty() {
        return Vec::new();
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v - mean).collect()
}
