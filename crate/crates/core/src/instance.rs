//! Construction of the two adversarial regression families and Gaussian
//! sampling from them.
//!
//! Family 1 places a slowly decaying dense coefficient vector under an
//! identity covariance. Family 2 is 2-sparse but adds one covariate `v`
//! that is an exact linear combination of all the others, so the same
//! response admits both a sparse and a (cheaper in l1 norm) dense optimal
//! predictor. Covariances are kept as structured operators; the dense
//! matrix is only materialized as a small test oracle.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::io::Write;
use thiserror::Error;

use crate::linalg;

/// Largest dimension at which the dense covariance oracle may be assembled.
pub const DENSE_COVARIANCE_LIMIT: usize = 2000;

/// Current on-disk instance format version.
pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("sample size n = {n} violates the hypothesis n >= 30")]
    SampleSizeTooSmall { n: usize },
    #[error("dimension p = {p} violates the hypothesis p >= 3n = {threshold} (n = {n})")]
    DimensionTooSmall { n: usize, p: usize, threshold: usize },
    #[error("dimension p = {p} violates the hypothesis p >= 90")]
    DimensionBelow90 { p: usize },
    #[error("noise level sigma = {sigma} must be finite and nonnegative")]
    InvalidSigma { sigma: f64 },
    #[error("vector length {got} does not match dimension p = {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("dense covariance oracle limited to p <= {limit}, got p = {p}")]
    DenseTooLarge { p: usize, limit: usize },
    #[error("unknown theorem tag {0}; expected 1 or 2")]
    UnknownTheorem(u8),
    #[error("unsupported instance format version {0}")]
    UnsupportedVersion(u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed instance file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which of the two constructions an instance realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TheoremTag {
    One,
    Two,
}

impl TheoremTag {
    pub fn as_u8(self) -> u8 {
        match self {
            TheoremTag::One => 1,
            TheoremTag::Two => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self, InstanceError> {
        match v {
            1 => Ok(TheoremTag::One),
            2 => Ok(TheoremTag::Two),
            other => Err(InstanceError::UnknownTheorem(other)),
        }
    }
}

/// Structured covariance operator.
///
/// `Theorem2` keeps only the tail weights `tau` and the normalizer
/// `c = sqrt(1 - ||tau||_2^2)`; every operation runs in O(p) through the
/// factor map [`CovarianceOp::factor_map`]. `Dense` is the small escape
/// hatch used by tests and the restricted-eigenvalue checker.
#[derive(Debug, Clone)]
pub enum CovarianceOp {
    Identity { p: usize },
    Theorem2 { tau: Vec<f64>, c: f64 },
    Dense { matrix: Array2<f64> },
}

impl CovarianceOp {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceOp::Identity { p } => *p,
            CovarianceOp::Theorem2 { tau, .. } => tau.len() + 3,
            CovarianceOp::Dense { matrix } => matrix.nrows(),
        }
    }

    /// Image of `a` under a factor `L` with `Sigma = L^T L`.
    ///
    /// For the structured kind, `L` maps onto the latent standard normals
    /// `(u_1..u_{p-3}, w_1, w_2)`: the covariate order is
    /// `(u_1..u_{p-3}, v, w_1, w_2)` with `v = c/sqrt(2) (w_1+w_2) - u^T tau`,
    /// so a coefficient `a_v` on `v` contributes `-tau a_v` to the `u`
    /// channels and `c/sqrt(2) a_v` to each `w` channel. For the identity
    /// kind this is the identity map; the dense kind has no cheap factor and
    /// returns `None`.
    fn factor_map(&self, a: &[f64]) -> Option<Vec<f64>> {
        match self {
            CovarianceOp::Identity { .. } => Some(a.to_vec()),
            CovarianceOp::Theorem2 { tau, c } => {
                let pu = tau.len();
                let av = a[pu];
                let mut out = Vec::with_capacity(pu + 2);
                for j in 0..pu {
                    out.push(a[j] - tau[j] * av);
                }
                let shift = c * FRAC_1_SQRT_2 * av;
                out.push(a[pu + 1] + shift);
                out.push(a[pu + 2] + shift);
                Some(out)
            }
            CovarianceOp::Dense { .. } => None,
        }
    }

    /// Quadratic form `a^T Sigma a`.
    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "probe length must equal p");
        match self {
            CovarianceOp::Dense { matrix } => {
                let mut total = 0.0;
                for i in 0..a.len() {
                    let mut row = 0.0;
                    for j in 0..a.len() {
                        row += matrix[(i, j)] * a[j];
                    }
                    total += a[i] * row;
                }
                total
            }
            _ => linalg::norm2_sq(&self.factor_map(a).unwrap()),
        }
    }

    /// Bilinear form `a^T Sigma b`.
    pub fn bilinear_form(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim());
        assert_eq!(b.len(), self.dim());
        match self {
            CovarianceOp::Dense { .. } => {
                let sb = self.matvec(b);
                linalg::dot(a, &sb)
            }
            _ => {
                let la = self.factor_map(a).unwrap();
                let lb = self.factor_map(b).unwrap();
                linalg::dot(&la, &lb)
            }
        }
    }

    /// Matrix-vector product `Sigma a`.
    pub fn matvec(&self, a: &[f64]) -> Vec<f64> {
        assert_eq!(a.len(), self.dim());
        match self {
            CovarianceOp::Identity { .. } => a.to_vec(),
            CovarianceOp::Theorem2 { tau, c } => {
                let m = self.factor_map(a).unwrap();
                let pu = tau.len();
                let mut out = Vec::with_capacity(pu + 3);
                out.extend_from_slice(&m[..pu]);
                let mut v_entry = c * FRAC_1_SQRT_2 * (m[pu] + m[pu + 1]);
                for j in 0..pu {
                    v_entry -= tau[j] * m[j];
                }
                out.push(v_entry);
                out.push(m[pu]);
                out.push(m[pu + 1]);
                out
            }
            CovarianceOp::Dense { matrix } => {
                let p = a.len();
                let mut out = vec![0.0; p];
                for i in 0..p {
                    out[i] = (0..p).map(|j| matrix[(i, j)] * a[j]).sum();
                }
                out
            }
        }
    }

    /// Single entry `Sigma[i, j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            CovarianceOp::Identity { .. } => {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            }
            CovarianceOp::Theorem2 { tau, c } => {
                let pu = tau.len();
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                match (i < pu, j) {
                    // u-u block
                    (true, j) if j < pu => {
                        if i == j {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    // u-v
                    (true, j) if j == pu => -tau[i],
                    // u-w
                    (true, _) => 0.0,
                    // v, w rows
                    (false, j) => {
                        if i == j {
                            1.0
                        } else if i == pu {
                            // v-w covariance
                            c * FRAC_1_SQRT_2
                        } else {
                            // w1-w2
                            0.0
                        }
                    }
                }
            }
            CovarianceOp::Dense { matrix } => matrix[(i, j)],
        }
    }

    /// Restriction `Sigma_J` as a dense block.
    pub fn restrict(&self, support: &[usize]) -> Array2<f64> {
        let k = support.len();
        let mut block = Array2::<f64>::zeros((k, k));
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                block[(a, b)] = self.entry(i, j);
            }
        }
        block
    }

    /// Full dense materialization, guarded for test-oracle scale.
    pub fn to_dense(&self) -> Result<Array2<f64>, InstanceError> {
        let p = self.dim();
        if p > DENSE_COVARIANCE_LIMIT {
            return Err(InstanceError::DenseTooLarge {
                p,
                limit: DENSE_COVARIANCE_LIMIT,
            });
        }
        let mut m = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = self.entry(i, j);
            }
        }
        Ok(m)
    }

    /// Spectral norm by power iteration at relative tolerance 1e-8.
    pub fn spectral_norm(&self) -> f64 {
        let p = self.dim();
        // Fixed probe seed keeps the estimate deterministic.
        linalg::power_iteration(
            p,
            |v, out| {
                let sv = self.matvec(v);
                out.copy_from_slice(&sv);
            },
            1e-8,
            100_000,
            0x9e37_79b9_7f4a_7c15,
        )
    }
}

/// A fully specified regression problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub theorem: TheoremTag,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    /// True coefficients; for family 2 this is the 2-sparse predictor.
    pub beta_star: Array1<f64>,
    /// Family 2 only: the equivalent dense optimal predictor.
    pub beta_dense: Option<Array1<f64>>,
    pub covariance: CovarianceOp,
    /// Whether the probabilistic (slow) lower bound's hypotheses hold.
    pub slow_bound_applicable: bool,
}

/// One draw of a design and response from an [`Instance`].
#[derive(Debug, Clone)]
pub struct Sample {
    /// Row-major n x p design; row i is the i-th covariate vector.
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// The standard normal noise vector used to build `y`.
    pub z: Array1<f64>,
    pub seed: u64,
}

fn check_common(n: usize, p: usize, sigma: f64) -> Result<(), InstanceError> {
    if n < 30 {
        return Err(InstanceError::SampleSizeTooSmall { n });
    }
    if p < 3 * n {
        return Err(InstanceError::DimensionTooSmall {
            n,
            p,
            threshold: 3 * n,
        });
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(InstanceError::InvalidSigma { sigma });
    }
    Ok(())
}

fn slow_applicable(n: usize, p_limit: usize, sigma: f64) -> bool {
    if sigma <= 0.0 {
        return false;
    }
    let ratio = (n as f64).sqrt() / sigma;
    (100.0..=p_limit as f64).contains(&ratio)
}

/// Family 1: dense coefficients `beta*_j = 1/(4 j ln p)` for `j < p` and
/// `beta*_p = 1/2`, identity covariance. Natural logarithm throughout.
pub fn make_theorem1_instance(n: usize, p: usize, sigma: f64) -> Result<Instance, InstanceError> {
    check_common(n, p, sigma)?;
    let logp = (p as f64).ln();
    let mut beta = Array1::<f64>::zeros(p);
    for j in 0..p - 1 {
        beta[j] = 1.0 / ((j + 1) as f64 * 4.0 * logp);
    }
    beta[p - 1] = 0.5;
    Ok(Instance {
        theorem: TheoremTag::One,
        n,
        p,
        sigma,
        beta_star: beta,
        beta_dense: None,
        covariance: CovarianceOp::Identity { p },
        slow_bound_applicable: slow_applicable(n, p, sigma),
    })
}

/// Family 2: covariate order `(u_1..u_{p-3}, v, w_1, w_2)` with
/// `v = c/sqrt(2) (w_1 + w_2) - u^T tau`, `tau_j = 1/(4 j ln p)`,
/// `c = sqrt(1 - ||tau||_2^2)`. The sparse predictor puts 1/2 on each `w`;
/// the dense one rides `v` and the `u` tail instead.
pub fn make_theorem2_instance(n: usize, p: usize, sigma: f64) -> Result<Instance, InstanceError> {
    check_common(n, p, sigma)?;
    if p < 90 {
        return Err(InstanceError::DimensionBelow90 { p });
    }
    let logp = (p as f64).ln();
    let pu = p - 3;
    let tau: Vec<f64> = (0..pu)
        .map(|j| 1.0 / ((j + 1) as f64 * 4.0 * logp))
        .collect();
    let tau_sq = linalg::norm2_sq(&tau);
    let c = (1.0 - tau_sq).sqrt();

    let mut beta_sparse = Array1::<f64>::zeros(p);
    beta_sparse[p - 2] = 0.5;
    beta_sparse[p - 1] = 0.5;

    // s = 1/sqrt(2 (1 - ||tau||^2)); the dense predictor is (s*tau, s, 0, 0).
    let s = 1.0 / (2.0 * (1.0 - tau_sq)).sqrt();
    let mut beta_dense = Array1::<f64>::zeros(p);
    for j in 0..pu {
        beta_dense[j] = s * tau[j];
    }
    beta_dense[pu] = s;

    Ok(Instance {
        theorem: TheoremTag::Two,
        n,
        p,
        sigma,
        beta_star: beta_sparse,
        beta_dense: Some(beta_dense),
        covariance: CovarianceOp::Theorem2 { tau, c },
        slow_bound_applicable: slow_applicable(n, p - 3, sigma),
    })
}

/// Draw an i.i.d. Gaussian sample from the instance.
///
/// The stream order is fixed so regeneration from `(instance, seed)` is
/// bit-identical: rows in order, within a row the latent normals in
/// coordinate order (for family 2: `u_1..u_{p-3}, w_1, w_2`, with `v`
/// computed, never sampled), then the noise vector `z`.
pub fn sample_design(instance: &Instance, seed: u64) -> Sample {
    let n = instance.n;
    let p = instance.p;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut x = Array2::<f64>::zeros((n, p));
    {
        let xs = x.as_slice_mut().expect("row-major design");
        match &instance.covariance {
            CovarianceOp::Identity { .. } => {
                for v in xs.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            CovarianceOp::Theorem2 { tau, c } => {
                let pu = tau.len();
                for i in 0..n {
                    let row = &mut xs[i * p..(i + 1) * p];
                    let mut ut = 0.0;
                    for j in 0..pu {
                        let u: f64 = normal.sample(&mut rng);
                        row[j] = u;
                        ut += u * tau[j];
                    }
                    let w1: f64 = normal.sample(&mut rng);
                    let w2: f64 = normal.sample(&mut rng);
                    row[pu] = c * FRAC_1_SQRT_2 * (w1 + w2) - ut;
                    row[pu + 1] = w1;
                    row[pu + 2] = w2;
                }
            }
            CovarianceOp::Dense { .. } => {
                unreachable!("dense covariances are a test oracle, not a sampling family")
            }
        }
    }
    let z = Array1::from_iter((0..n).map(|_| -> f64 { normal.sample(&mut rng) }));
    let mut y = x.dot(&instance.beta_star);
    if instance.sigma > 0.0 {
        y = y + instance.sigma * &z;
    }
    Sample { x, y, z, seed }
}

/// Quadratic form `vec^T Sigma vec` against the instance covariance.
pub fn covariance_quadratic_form(instance: &Instance, vec: &[f64]) -> Result<f64, InstanceError> {
    if vec.len() != instance.p {
        return Err(InstanceError::LengthMismatch {
            got: vec.len(),
            expected: instance.p,
        });
    }
    Ok(instance.covariance.quadratic_form(vec))
}

/// Spectral norm estimate of the instance covariance.
pub fn spectral_norm(instance: &Instance) -> f64 {
    instance.covariance.spectral_norm()
}

/// On-disk instance description: structural parameters only; `beta*` and
/// `tau` are recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub version: u32,
    pub theorem: u8,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
}

impl Instance {
    pub fn to_spec(&self) -> InstanceSpec {
        InstanceSpec {
            version: INSTANCE_FORMAT_VERSION,
            theorem: self.theorem.as_u8(),
            n: self.n,
            p: self.p,
            sigma: self.sigma,
        }
    }

    pub fn from_spec(spec: &InstanceSpec) -> Result<Self, InstanceError> {
        if spec.version != INSTANCE_FORMAT_VERSION {
            return Err(InstanceError::UnsupportedVersion(spec.version));
        }
        match TheoremTag::from_u8(spec.theorem)? {
            TheoremTag::One => make_theorem1_instance(spec.n, spec.p, spec.sigma),
            TheoremTag::Two => make_theorem2_instance(spec.n, spec.p, spec.sigma),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("instance spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let spec: InstanceSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }
}

/// Debug export of a sample: `i,j,value` rows for X and `i,y,z` for the
/// responses.
pub fn write_sample_csv<W: Write>(
    design_out: &mut W,
    response_out: &mut W,
    sample: &Sample,
) -> Result<(), InstanceError> {
    writeln!(design_out, "i,j,value")?;
    let (n, p) = (sample.x.nrows(), sample.x.ncols());
    for i in 0..n {
        for j in 0..p {
            writeln!(design_out, "{},{},{:.16e}", i, j, sample.x[(i, j)])?;
        }
    }
    writeln!(response_out, "i,y,z")?;
    for i in 0..n {
        writeln!(
            response_out,
            "{},{:.16e},{:.16e}",
            i, sample.y[i], sample.z[i]
        )?;
    }
    Ok(())
}
