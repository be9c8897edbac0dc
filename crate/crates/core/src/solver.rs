//! Exact l1-constrained least-squares solver.
//!
//! [`compute_path`] traces the full piecewise-linear homotopy of
//! `min ||y - X b||^2  s.t.  ||b||_1 <= B` from `B = 0` to the unconstrained
//! optimum, emitting a breakpoint whenever the equicorrelation set changes.
//! Every emitted point satisfies the Lagrange stationarity conditions (all
//! active coordinates share one gradient magnitude `C`, inactive gradients do
//! not exceed it) and carries at most `n` nonzeros: coordinates whose Gram
//! column is numerically dependent on the active ones are never activated.
//!
//! [`solve_penalized_oracle`] is an independent cyclic coordinate-descent
//! solver for the penalized form `||y - X b||^2 + lambda ||b||_1`, used to
//! cross-check the path through the data-dependent correspondence
//! `lambda = 2 C`.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::instance::Sample;
use crate::linalg::{self, UpdatableCholesky};

/// Relative Schur-complement threshold below which a Gram column counts as
/// dependent on the active set.
const DEPENDENCE_TOL: f64 = 1e-12;
/// Step events closer than this (relative to the current lambda scale) are
/// treated as simultaneous.
const STEP_TOL: f64 = 1e-12;
/// Full recomputation cadence for the residual and correlation vectors.
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("degenerate path at step {step}: {reason}")]
    Degenerate { step: usize, reason: String },
    #[error("homotopy exceeded the safety step limit ({limit}) at lambda = {lambda}")]
    StepLimit { limit: usize, lambda: f64 },
    #[error("coordinate descent did not converge after {sweeps} sweeps (last change {last_change:e})")]
    OracleNonConvergence { sweeps: usize, last_change: f64 },
    #[error("budget must be finite and nonnegative, got {0}")]
    InvalidBudget(f64),
    #[error("penalty must be finite and nonnegative, got {0}")]
    InvalidPenalty(f64),
}

/// Stopping rule for the path computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStop {
    /// Run until the residual cannot be improved (lambda reaches zero).
    ToUnconstrained,
    /// Stop once the l1 budget reaches this value, cutting the last segment.
    MaxBudget(f64),
    /// Stop after this many emitted breakpoints.
    MaxBreakpoints(usize),
}

/// One path breakpoint.
#[derive(Debug, Clone)]
pub struct Breakpoint {
    /// l1 budget `B_k`; equals the l1 norm of the coefficients.
    pub budget: f64,
    /// Common gradient magnitude `C` of the active coordinates.
    pub lambda: f64,
    /// Residual sum of squares.
    pub rss: f64,
    /// Active coordinates `(index, value)` in ascending index order. Values
    /// can be exactly zero for a coordinate that joined at this breakpoint.
    pub coeffs: Vec<(usize, f64)>,
}

impl Breakpoint {
    pub fn nnz(&self) -> usize {
        self.coeffs.iter().filter(|(_, v)| *v != 0.0).count()
    }

    pub fn dense_beta(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for &(j, v) in &self.coeffs {
            out[j] = v;
        }
        out
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, v)| v.abs()).sum()
    }
}

/// The piecewise-linear solution path.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub breakpoints: Vec<Breakpoint>,
    pub n: usize,
    pub p: usize,
    /// Whether the last breakpoint attains the minimal residual.
    pub reached_min_rss: bool,
    /// Whether a stopping rule cut the path before the minimal residual.
    pub truncated: bool,
}

impl LassoPath {
    /// Coefficients at an arbitrary budget by segment interpolation.
    pub fn coefficients_at(&self, budget: f64) -> Vec<f64> {
        let bps = &self.breakpoints;
        assert!(!bps.is_empty());
        if budget <= bps[0].budget {
            return bps[0].dense_beta(self.p);
        }
        let last = bps.len() - 1;
        if budget >= bps[last].budget {
            return bps[last].dense_beta(self.p);
        }
        let hi = bps.partition_point(|b| b.budget < budget).min(last);
        let lo = hi - 1;
        let span = bps[hi].budget - bps[lo].budget;
        let t = if span > 0.0 {
            (budget - bps[lo].budget) / span
        } else {
            0.0
        };
        let mut beta = bps[lo].dense_beta(self.p);
        let upper = bps[hi].dense_beta(self.p);
        for (b, u) in beta.iter_mut().zip(&upper) {
            *b += t * (u - *b);
        }
        beta
    }

    /// Lagrange value at a budget, linear along each segment.
    pub fn lambda_at(&self, budget: f64) -> f64 {
        let bps = &self.breakpoints;
        if budget <= bps[0].budget {
            return bps[0].lambda;
        }
        let last = bps.len() - 1;
        if budget >= bps[last].budget {
            return bps[last].lambda;
        }
        let hi = bps.partition_point(|b| b.budget < budget).min(last);
        let lo = hi - 1;
        let span = bps[hi].budget - bps[lo].budget;
        let t = if span > 0.0 {
            (budget - bps[lo].budget) / span
        } else {
            0.0
        };
        bps[lo].lambda + t * (bps[hi].lambda - bps[lo].lambda)
    }

    pub fn final_budget(&self) -> f64 {
        self.breakpoints.last().map(|b| b.budget).unwrap_or(0.0)
    }

    /// Export `k,B,rss,nnz` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "k,B,rss,nnz")?;
        for (k, bp) in self.breakpoints.iter().enumerate() {
            writeln!(out, "{},{:.16e},{:.16e},{}", k, bp.budget, bp.rss, bp.nnz())?;
        }
        Ok(())
    }

    /// Export the per-breakpoint coefficient dump `k,j,beta`.
    pub fn write_coefficients_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "k,j,beta")?;
        for (k, bp) in self.breakpoints.iter().enumerate() {
            for &(j, v) in &bp.coeffs {
                writeln!(out, "{},{},{:.16e}", k, j, v)?;
            }
        }
        Ok(())
    }
}

enum Event {
    Zero,
    Drop(usize),
    Join(usize, f64),
}

/// Incremental homotopy driver; [`compute_path`] wraps it, and callers that
/// need to inspect breakpoints as they appear (adaptive stopping) can drive
/// it directly.
pub struct Homotopy<'a> {
    x: &'a [f64],
    n: usize,
    p: usize,
    col_norm_sq: Vec<f64>,
    active: Vec<usize>,
    in_active: Vec<bool>,
    sign: Vec<f64>,
    beta_a: Vec<f64>,
    acols: Vec<f64>,
    chol: UpdatableCholesky,
    c: Vec<f64>,
    r: Vec<f64>,
    lambda: f64,
    budget: f64,
    excluded: Vec<bool>,
    recently_dropped: Option<(usize, f64)>,
    steps: usize,
    step_limit: usize,
    emitted_initial: bool,
    last_emitted_budget: f64,
    finished: bool,
    reached_min_rss: bool,
    max_budget: f64,
}

impl<'a> Homotopy<'a> {
    pub fn new(sample: &'a Sample) -> Result<Self, PathError> {
        let n = sample.x.nrows();
        let p = sample.x.ncols();
        let x = sample.x.as_slice().expect("row-major design");
        let mut col_norm_sq = vec![0.0; p];
        for i in 0..n {
            let row = &x[i * p..(i + 1) * p];
            for (cn, &v) in col_norm_sq.iter_mut().zip(row) {
                *cn += v * v;
            }
        }
        let r: Vec<f64> = sample.y.iter().cloned().collect();
        let mut c = vec![0.0; p];
        linalg::xt_matvec(x, n, p, &r, &mut c);
        let mut state = Self {
            x,
            n,
            p,
            col_norm_sq,
            active: Vec::new(),
            in_active: vec![false; p],
            sign: Vec::new(),
            beta_a: Vec::new(),
            acols: Vec::new(),
            chol: UpdatableCholesky::new(),
            c,
            r,
            lambda: 0.0,
            budget: 0.0,
            excluded: vec![false; p],
            recently_dropped: None,
            steps: 0,
            step_limit: 200 * (n + p) + 10_000,
            emitted_initial: false,
            last_emitted_budget: -1.0,
            finished: false,
            reached_min_rss: false,
            max_budget: f64::INFINITY,
        };
        let (j0, lambda0) = state.argmax_correlation();
        state.lambda = lambda0;
        if lambda0 <= 1e-14 * state.rss_scale() {
            state.finished = true;
            state.reached_min_rss = true;
        } else {
            state.activate(j0, state.c[j0].signum())?;
        }
        Ok(state)
    }

    pub fn set_max_budget(&mut self, b: f64) {
        self.max_budget = b;
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn reached_min_rss(&self) -> bool {
        self.reached_min_rss
    }

    fn rss_scale(&self) -> f64 {
        linalg::norm2_sq(&self.r).max(1.0)
    }

    fn argmax_correlation(&self) -> (usize, f64) {
        let mut best = 0usize;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..self.p {
            if self.in_active[j] || self.excluded[j] {
                continue;
            }
            let v = self.c[j].abs();
            if v > best_val {
                best_val = v;
                best = j;
            }
        }
        (best, best_val.max(0.0))
    }

    fn activate(&mut self, j: usize, sign: f64) -> Result<bool, PathError> {
        let col: Vec<f64> = (0..self.n).map(|i| self.x[i * self.p + j]).collect();
        let k = self.active.len();
        let mut cross = vec![0.0; k];
        for (slot, a) in cross.iter_mut().enumerate() {
            *a = linalg::dot(&self.acols[slot * self.n..(slot + 1) * self.n], &col);
        }
        if !self
            .chol
            .push_column(&cross, self.col_norm_sq[j], DEPENDENCE_TOL)
        {
            self.excluded[j] = true;
            return Ok(false);
        }
        self.active.push(j);
        self.in_active[j] = true;
        self.sign.push(sign);
        self.beta_a.push(0.0);
        self.acols.extend_from_slice(&col);
        Ok(true)
    }

    fn deactivate(&mut self, slot: usize) {
        let j = self.active.remove(slot);
        self.in_active[j] = false;
        self.sign.remove(slot);
        self.beta_a.remove(slot);
        self.acols
            .drain(slot * self.n..(slot + 1) * self.n);
        self.chol.remove_column(slot);
        self.recently_dropped = Some((j, self.budget));
        // Spans shrank; previously dependent columns may be independent now.
        self.excluded.fill(false);
    }

    /// Advance to the next emitted breakpoint. Returns `None` once finished.
    fn next_breakpoint_inner(&mut self, y: &[f64]) -> Result<Option<Breakpoint>, PathError> {
        if !self.emitted_initial {
            self.emitted_initial = true;
            self.last_emitted_budget = 0.0;
            return Ok(Some(self.emit()));
        }
        if self.finished {
            return Ok(None);
        }
        loop {
            self.steps += 1;
            if self.steps > self.step_limit {
                return Err(PathError::StepLimit {
                    limit: self.step_limit,
                    lambda: self.lambda,
                });
            }
            if self.steps % REFRESH_EVERY == 0 {
                self.refresh_with(y);
            }
            if self.active.is_empty() {
                let (j0, lambda0) = self.argmax_correlation();
                self.lambda = lambda0;
                if lambda0 <= 1e-14 * self.rss_scale() {
                    self.finished = true;
                    self.reached_min_rss = true;
                    return Ok(None);
                }
                self.activate(j0, self.c[j0].signum())?;
                continue;
            }

            // Direction: (X_A^T X_A) d = s.
            let mut d = self.sign.clone();
            self.chol.solve_in_place(&mut d);
            let rate = linalg::dot(&self.sign, &d);
            if !rate.is_finite() || rate <= 0.0 {
                return Err(PathError::Degenerate {
                    step: self.steps,
                    reason: format!("nonpositive l1 growth rate {rate}"),
                });
            }
            // v = X_A d, a = X^T v.
            let mut v = vec![0.0; self.n];
            for (slot, &dj) in d.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                let col = &self.acols[slot * self.n..(slot + 1) * self.n];
                for (vi, &ci) in v.iter_mut().zip(col) {
                    *vi += dj * ci;
                }
            }
            let mut a = vec![0.0; self.p];
            linalg::xt_matvec(self.x, self.n, self.p, &v, &mut a);

            let gamma_zero = self.lambda;
            let tiny = STEP_TOL * self.lambda.max(1.0);

            let mut gamma_drop = f64::INFINITY;
            let mut drop_slot = usize::MAX;
            for (slot, (&dj, &bj)) in d.iter().zip(&self.beta_a).enumerate() {
                if dj * self.sign[slot] < 0.0 {
                    let g = (-bj / dj).max(0.0);
                    if g < gamma_drop {
                        gamma_drop = g;
                        drop_slot = slot;
                    }
                }
            }

            let mut gamma_join = f64::INFINITY;
            let mut join_j = usize::MAX;
            let mut join_sign = 1.0;
            for j in 0..self.p {
                if self.in_active[j] || self.excluded[j] {
                    continue;
                }
                if let Some((dj, db)) = self.recently_dropped {
                    if dj == j && (self.budget - db).abs() <= tiny {
                        continue;
                    }
                }
                let cj = self.c[j];
                let aj = a[j];
                let denom_top = 1.0 - aj;
                if denom_top > 1e-14 {
                    let g = ((self.lambda - cj) / denom_top).max(0.0);
                    if g < gamma_join {
                        gamma_join = g;
                        join_j = j;
                        join_sign = 1.0;
                    }
                }
                let denom_bot = 1.0 + aj;
                if denom_bot > 1e-14 {
                    let g = ((self.lambda + cj) / denom_bot).max(0.0);
                    if g < gamma_join {
                        gamma_join = g;
                        join_j = j;
                        join_sign = -1.0;
                    }
                }
            }

            let (mut gamma, event) = if gamma_drop <= gamma_join && gamma_drop <= gamma_zero {
                (gamma_drop, Event::Drop(drop_slot))
            } else if gamma_zero <= gamma_join {
                (gamma_zero, Event::Zero)
            } else {
                (gamma_join, Event::Join(join_j, join_sign))
            };
            if !gamma.is_finite() {
                return Err(PathError::Degenerate {
                    step: self.steps,
                    reason: "no finite event".into(),
                });
            }

            // Budget cut takes precedence when it lands strictly inside the
            // segment.
            let mut cut = false;
            if self.max_budget.is_finite() {
                let gamma_cut = ((self.max_budget - self.budget) / rate).max(0.0);
                if gamma_cut < gamma {
                    gamma = gamma_cut;
                    cut = true;
                }
            }

            // Advance the state by gamma along d.
            if gamma > 0.0 {
                for (slot, &dj) in d.iter().enumerate() {
                    self.beta_a[slot] += gamma * dj;
                }
                self.budget += gamma * rate;
                self.lambda -= gamma;
                for (ri, &vi) in self.r.iter_mut().zip(&v) {
                    *ri -= gamma * vi;
                }
                for (cj, &aj) in self.c.iter_mut().zip(&a) {
                    *cj -= gamma * aj;
                }
                if let Some((_, db)) = self.recently_dropped {
                    if (self.budget - db).abs() > tiny {
                        self.recently_dropped = None;
                    }
                }
            }

            if cut {
                self.finished = true;
                return Ok(Some(self.emit()));
            }

            match event {
                Event::Zero => {
                    self.lambda = 0.0;
                    self.finished = true;
                    self.reached_min_rss = true;
                    return Ok(Some(self.emit()));
                }
                Event::Drop(slot) => {
                    self.beta_a[slot] = 0.0;
                    self.deactivate(slot);
                }
                Event::Join(j, s) => {
                    self.activate(j, s)?;
                }
            }

            if self.budget > self.last_emitted_budget + tiny {
                return Ok(Some(self.emit()));
            }
            // Simultaneous event at the same budget: keep processing.
        }
    }

    fn refresh_with(&mut self, y: &[f64]) {
        self.r.copy_from_slice(y);
        for (slot, &b) in self.beta_a.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let col = &self.acols[slot * self.n..(slot + 1) * self.n];
            for (ri, &ci) in self.r.iter_mut().zip(col) {
                *ri -= b * ci;
            }
        }
        linalg::xt_matvec(self.x, self.n, self.p, &self.r, &mut self.c);
        if !self.active.is_empty() {
            let mut acc = 0.0;
            for (slot, &j) in self.active.iter().enumerate() {
                acc += self.sign[slot] * self.c[j];
            }
            self.lambda = (acc / self.active.len() as f64).max(0.0);
        }
    }

    fn emit(&mut self) -> Breakpoint {
        let mut coeffs: Vec<(usize, f64)> = self
            .active
            .iter()
            .cloned()
            .zip(self.beta_a.iter().cloned())
            .collect();
        coeffs.sort_by_key(|&(j, _)| j);
        // Resynchronize the tracked budget with the exact l1 norm.
        let exact: f64 = coeffs.iter().map(|(_, v)| v.abs()).sum();
        self.budget = exact;
        self.last_emitted_budget = exact;
        Breakpoint {
            budget: exact,
            lambda: self.lambda.max(0.0),
            rss: linalg::norm2_sq(&self.r),
            coeffs,
        }
    }
}

/// Public stepping interface that carries the response vector.
pub struct PathDriver<'a> {
    homotopy: Homotopy<'a>,
    y: Vec<f64>,
}

impl<'a> PathDriver<'a> {
    pub fn new(sample: &'a Sample) -> Result<Self, PathError> {
        Ok(Self {
            homotopy: Homotopy::new(sample)?,
            y: sample.y.iter().cloned().collect(),
        })
    }

    pub fn set_max_budget(&mut self, b: f64) {
        self.homotopy.set_max_budget(b);
    }

    pub fn next_breakpoint(&mut self) -> Result<Option<Breakpoint>, PathError> {
        self.homotopy.next_breakpoint_inner(&self.y)
    }

    pub fn reached_min_rss(&self) -> bool {
        self.homotopy.reached_min_rss()
    }
}

/// Trace the whole path under a stopping rule.
pub fn compute_path(sample: &Sample, stop: PathStop) -> Result<LassoPath, PathError> {
    let n = sample.x.nrows();
    let p = sample.x.ncols();
    let mut driver = PathDriver::new(sample)?;
    let mut max_bps = usize::MAX;
    match stop {
        PathStop::ToUnconstrained => {}
        PathStop::MaxBudget(b) => {
            if !b.is_finite() || b < 0.0 {
                return Err(PathError::InvalidBudget(b));
            }
            driver.set_max_budget(b);
        }
        PathStop::MaxBreakpoints(k) => max_bps = k.max(1),
    }
    let mut breakpoints = Vec::new();
    while breakpoints.len() < max_bps {
        match driver.next_breakpoint()? {
            Some(bp) => breakpoints.push(bp),
            None => break,
        }
    }
    let reached = driver.reached_min_rss();
    Ok(LassoPath {
        breakpoints,
        n,
        p,
        reached_min_rss: reached,
        truncated: !reached,
    })
}

/// Constrained solution at a single budget, with its certificate.
#[derive(Debug, Clone)]
pub struct ConstrainedFit {
    pub beta: Vec<f64>,
    pub rss: f64,
    pub certificate: ParetoCertificate,
}

/// Solve at one budget by evaluating the path there.
pub fn solve_constrained(sample: &Sample, budget: f64) -> Result<ConstrainedFit, PathError> {
    if !budget.is_finite() || budget < 0.0 {
        return Err(PathError::InvalidBudget(budget));
    }
    let path = compute_path(sample, PathStop::MaxBudget(budget))?;
    let beta = path.coefficients_at(budget);
    let r = residual(sample, &beta);
    let rss = linalg::norm2_sq(&r);
    let certificate = pareto_certificate(sample, &beta, 1e-8);
    Ok(ConstrainedFit {
        beta,
        rss,
        certificate,
    })
}

fn residual(sample: &Sample, beta: &[f64]) -> Vec<f64> {
    let n = sample.x.nrows();
    let p = sample.x.ncols();
    let xs = sample.x.as_slice().expect("row-major design");
    let mut r: Vec<f64> = sample.y.iter().cloned().collect();
    for i in 0..n {
        let row = &xs[i * p..(i + 1) * p];
        r[i] -= linalg::dot(row, beta);
    }
    r
}

/// Lagrange stationarity certificate for a candidate solution.
#[derive(Debug, Clone)]
pub struct ParetoCertificate {
    /// Common gradient magnitude `C = max_j |X_j^T (y - X beta)|`.
    pub lagrange_value: f64,
    /// Largest deviation of `sign(beta_j) g_j` from `C` over the support.
    pub max_active_residual: f64,
    /// Largest amount by which an off-support `|g_j|` exceeds `C`; never
    /// positive by construction of `C`, reported for symmetry.
    pub max_inactive_excess: f64,
    /// Number of nonzero coefficients.
    pub sparsity: usize,
    /// Whether the certificate passed at the requested tolerance.
    pub passed: bool,
}

/// Check the equicorrelation conditions at `beta` against the sample.
pub fn pareto_certificate(sample: &Sample, beta: &[f64], tol: f64) -> ParetoCertificate {
    let n = sample.x.nrows();
    let p = sample.x.ncols();
    assert_eq!(beta.len(), p);
    let r = residual(sample, beta);
    let mut g = vec![0.0; p];
    linalg::xt_matvec(sample.x.as_slice().unwrap(), n, p, &r, &mut g);
    let c = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut max_active_residual = 0.0f64;
    let mut max_inactive_excess = f64::NEG_INFINITY;
    let mut sparsity = 0usize;
    for j in 0..p {
        if beta[j] != 0.0 {
            sparsity += 1;
            let dev = (beta[j].signum() * g[j] - c).abs();
            max_active_residual = max_active_residual.max(dev);
        } else {
            max_inactive_excess = max_inactive_excess.max(g[j].abs() - c);
        }
    }
    if !max_inactive_excess.is_finite() {
        max_inactive_excess = 0.0;
    }
    let passed = max_active_residual <= tol && max_inactive_excess <= tol && sparsity <= n;
    ParetoCertificate {
        lagrange_value: c,
        max_active_residual,
        max_inactive_excess,
        sparsity,
        passed,
    }
}

/// Cyclic coordinate descent for `||y - X b||^2 + lambda ||b||_1`, run to a
/// 1e-12 tolerance on coordinate updates. Cross-check oracle only; the path
/// solver never calls it.
pub fn solve_penalized_oracle(sample: &Sample, lambda: f64) -> Result<Vec<f64>, PathError> {
    solve_penalized_warm(sample, lambda, None)
}

/// Same as [`solve_penalized_oracle`] with an optional warm start.
pub fn solve_penalized_warm(
    sample: &Sample,
    lambda: f64,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>, PathError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(PathError::InvalidPenalty(lambda));
    }
    let n = sample.x.nrows();
    let p = sample.x.ncols();
    let xs = sample.x.as_slice().expect("row-major design");
    let col = |j: usize, i: usize| xs[i * p + j];
    let mut norms = vec![0.0; p];
    for j in 0..p {
        norms[j] = (0..n).map(|i| col(j, i) * col(j, i)).sum();
    }
    let mut beta = match warm {
        Some(w) => {
            assert_eq!(w.len(), p);
            w.to_vec()
        }
        None => vec![0.0; p],
    };
    let mut r: Vec<f64> = sample.y.iter().cloned().collect();
    for j in 0..p {
        if beta[j] != 0.0 {
            for i in 0..n {
                r[i] -= col(j, i) * beta[j];
            }
        }
    }
    let half = lambda / 2.0;
    let max_sweeps = 200_000usize;
    let mut last_change = f64::INFINITY;
    for _sweep in 0..max_sweeps {
        let mut max_delta = 0.0f64;
        let mut max_beta = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let mut rho = old * norms[j];
            for i in 0..n {
                rho += col(j, i) * r[i];
            }
            let new = if rho > half {
                (rho - half) / norms[j]
            } else if rho < -half {
                (rho + half) / norms[j]
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                for i in 0..n {
                    r[i] -= col(j, i) * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
            max_beta = max_beta.max(beta[j].abs());
        }
        last_change = max_delta;
        if max_delta <= 1e-12 * (1.0 + max_beta) {
            return Ok(beta);
        }
    }
    Err(PathError::OracleNonConvergence {
        sweeps: max_sweeps,
        last_change,
    })
}

/// Objective of the penalized problem, shared by the oracle comparisons.
pub fn penalized_objective(sample: &Sample, beta: &[f64], lambda: f64) -> f64 {
    let r = residual(sample, beta);
    linalg::norm2_sq(&r) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Assemble a [`Sample`] from raw parts, for solver-level callers that are
/// not tied to a generated instance (tests, oracles).
pub fn sample_from_parts(x: Array2<f64>, y: Array1<f64>) -> Sample {
    let n = x.nrows();
    let z = Array1::zeros(n);
    Sample { x, y, z, seed: 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, p: usize, sigma: f64, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<f64>::zeros((n, p));
        for v in x.iter_mut() {
            *v = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        }
        let mut beta0 = vec![0.0; p];
        for b in beta0.iter_mut().take(3) {
            *b = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..p {
                s += x[(i, j)] * beta0[j];
            }
            let noise: f64 =
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            y[i] = s + sigma * noise;
        }
        sample_from_parts(x, y)
    }

    #[test]
    fn single_column_path_is_soft_threshold() {
        let sample = sample_from_parts(
            arr2(&[[1.0], [1.0]]),
            Array1::from_vec(vec![1.0, 1.0]),
        );
        let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        assert_eq!(path.breakpoints.len(), 2);
        assert_eq!(path.breakpoints[0].budget, 0.0);
        assert!((path.breakpoints[0].rss - 2.0).abs() < 1e-12);
        assert!((path.breakpoints[1].budget - 1.0).abs() < 1e-12);
        assert!(path.breakpoints[1].rss < 1e-20);
        assert!(path.reached_min_rss);
        // RSS(B) = 2 (1 - min(B,1))^2 from one-dimensional calculus.
        for b in [0.0, 0.3, 0.7, 1.0, 2.0] {
            let fit = solve_constrained(&sample, b).unwrap();
            let expect_beta = b.min(1.0);
            let expect_rss = 2.0 * (1.0 - expect_beta).powi(2);
            assert!((fit.beta[0] - expect_beta).abs() < 1e-12);
            assert!((fit.rss - expect_rss).abs() < 1e-12);
            assert!(fit.certificate.passed);
        }
    }

    #[test]
    fn orthonormal_design_matches_water_filling() {
        // X = I_2, correlations (3, 1): coordinate 2 joins when the common
        // gradient reaches 1, i.e. at budget 2.
        let sample = sample_from_parts(
            arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            Array1::from_vec(vec![3.0, 1.0]),
        );
        let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        let budgets: Vec<f64> = path.breakpoints.iter().map(|b| b.budget).collect();
        assert_eq!(budgets.len(), 3);
        assert!((budgets[1] - 2.0).abs() < 1e-12);
        assert!((budgets[2] - 4.0).abs() < 1e-12);

        // Closed-form water filling for c = (3, 1).
        let oracle = |budget: f64| -> Vec<f64> {
            // threshold t with (3-t)_+ + (1-t)_+ = min(budget, 4)
            let b = budget.min(4.0);
            if b <= 2.0 {
                vec![b, 0.0]
            } else {
                let t = (4.0 - b) / 2.0;
                vec![3.0 - t, 1.0 - t]
            }
        };
        for b in [0.0, 0.5, 1.0, 2.0, 2.5, 3.7, 4.0, 5.0] {
            let got = path.coefficients_at(b);
            let want = oracle(b);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "budget {b}: {got:?} vs {want:?}");
            }
        }
        assert_eq!(path.coefficients_at(2.0), vec![2.0, 0.0]);
    }

    #[test]
    fn zero_budget_returns_zero() {
        let sample = random_problem(8, 12, 0.3, 5);
        let fit = solve_constrained(&sample, 0.0).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn large_budget_recovers_least_squares_on_tall_design() {
        let sample = random_problem(20, 4, 0.1, 9);
        let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        let end = path.breakpoints.last().unwrap();
        // Compare with the normal-equations solution.
        let xt = sample.x.t().to_owned();
        let g = xt.dot(&sample.x);
        let b = xt.dot(&sample.y);
        let mut chol = UpdatableCholesky::new();
        for k in 0..4 {
            let cross: Vec<f64> = (0..k).map(|i| g[(i, k)]).collect();
            assert!(chol.push_column(&cross, g[(k, k)], 1e-12));
        }
        let mut ols: Vec<f64> = b.to_vec();
        chol.solve_in_place(&mut ols);
        let beta_end = end.dense_beta(4);
        for (a, o) in beta_end.iter().zip(&ols) {
            assert!((a - o).abs() < 1e-8, "{beta_end:?} vs {ols:?}");
        }
        // Asking beyond the end leaves the constraint slack.
        let slack_fit = solve_constrained(&sample, end.budget + 1.0).unwrap();
        let l1: f64 = slack_fit.beta.iter().map(|v| v.abs()).sum();
        assert!(l1 < end.budget + 1.0 - 0.5);
    }

    #[test]
    fn duplicated_column_is_never_activated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10;
        let mut x = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            let v: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let w: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            x[(i, 0)] = v;
            x[(i, 1)] = v; // exact duplicate
            x[(i, 2)] = w;
        }
        let y = Array1::from_iter((0..n).map(|i| 2.0 * x[(i, 0)] - x[(i, 2)]));
        let sample = sample_from_parts(x, y);
        let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        for bp in &path.breakpoints {
            assert!(bp.nnz() <= n);
            // The duplicate pair must never be active together.
            let has0 = bp.coeffs.iter().any(|&(j, v)| j == 0 && v != 0.0);
            let has1 = bp.coeffs.iter().any(|&(j, v)| j == 1 && v != 0.0);
            assert!(!(has0 && has1), "duplicates active together: {bp:?}");
        }
        assert!(path.reached_min_rss);
        assert!(path.breakpoints.last().unwrap().rss < 1e-18);
    }

    #[test]
    fn path_matches_coordinate_descent_at_breakpoint_penalties() {
        for seed in 0..10u64 {
            let sample = random_problem(5, 8, 0.4, 100 + seed);
            let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
            for bp in path.breakpoints.iter().skip(1) {
                if bp.lambda <= 1e-10 {
                    continue;
                }
                let lambda_pen = 2.0 * bp.lambda;
                let cd = solve_penalized_oracle(&sample, lambda_pen).unwrap();
                let beta = bp.dense_beta(8);
                let obj_path = penalized_objective(&sample, &beta, lambda_pen);
                let obj_cd = penalized_objective(&sample, &cd, lambda_pen);
                assert!(
                    (obj_path - obj_cd).abs() <= 1e-8 * (1.0 + obj_cd.abs()),
                    "objectives {obj_path} vs {obj_cd} at lambda {lambda_pen}"
                );
            }
        }
    }

    #[test]
    fn penalized_oracle_trivial_cases() {
        // Large penalty gives the zero solution.
        let sample = random_problem(6, 10, 0.5, 77);
        let mut g = vec![0.0; 10];
        linalg::xt_matvec(
            sample.x.as_slice().unwrap(),
            6,
            10,
            &sample.y.to_vec(),
            &mut g,
        );
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let beta = solve_penalized_oracle(&sample, 2.0 * gmax * 1.0001).unwrap();
        assert!(beta.iter().all(|&b| b == 0.0));

        // Zero penalty on a full-rank square design gives the interpolant.
        let sample2 = random_problem(5, 5, 0.2, 78);
        let beta2 = solve_penalized_oracle(&sample2, 0.0).unwrap();
        let r = residual(&sample2, &beta2);
        assert!(linalg::norm2_sq(&r) < 1e-16);
    }

    #[test]
    fn certificate_detects_perturbation() {
        let sample = random_problem(10, 15, 0.3, 21);
        let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        let mid = &path.breakpoints[path.breakpoints.len() / 2];
        let beta = mid.dense_beta(15);
        let cert = pareto_certificate(&sample, &beta, 1e-8);
        assert!(cert.passed, "clean breakpoint must certify: {cert:?}");

        let mut tampered = beta.clone();
        let j = tampered.iter().position(|&b| b != 0.0).unwrap();
        tampered[j] += 1e-3;
        let cert2 = pareto_certificate(&sample, &tampered, 1e-8);
        assert!(!cert2.passed);
        assert!(cert2.max_active_residual > 1e-8);
    }

    #[test]
    fn certificate_passes_for_zero_vector() {
        let sample = random_problem(6, 9, 0.2, 30);
        let cert = pareto_certificate(&sample, &vec![0.0; 9], 1e-8);
        assert!(cert.passed);
        assert_eq!(cert.sparsity, 0);
    }

    #[test]
    fn breakpoints_satisfy_path_invariants() {
        for seed in 0..20u64 {
            let n = 6 + (seed as usize % 10);
            let p = 4 + ((seed as usize * 7) % 30);
            let sample = random_problem(n, p, 0.3, 500 + seed);
            let path = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
            let bps = &path.breakpoints;
            assert!(!bps.is_empty());
            assert_eq!(bps[0].budget, 0.0);
            for w in bps.windows(2) {
                assert!(w[1].budget > w[0].budget, "budgets must strictly increase");
                assert!(
                    w[1].rss <= w[0].rss + 1e-9 * (1.0 + w[0].rss),
                    "rss must not increase"
                );
                if w[0].lambda > 1e-8 {
                    assert!(w[1].rss < w[0].rss, "rss must strictly decrease");
                }
            }
            for bp in bps {
                assert!((bp.l1_norm() - bp.budget).abs() <= 1e-10 * (1.0 + bp.budget));
                assert!(bp.nnz() <= n, "sparsity contract violated");
                let beta = bp.dense_beta(p);
                let cert = pareto_certificate(&sample, &beta, 1e-8);
                assert!(cert.passed, "certificate failed: {cert:?}");
            }
        }
    }

    #[test]
    fn max_budget_stops_exactly_at_cut() {
        let sample = random_problem(10, 20, 0.2, 900);
        let full = compute_path(&sample, PathStop::ToUnconstrained).unwrap();
        let target = 0.5 * full.final_budget();
        let cut = compute_path(&sample, PathStop::MaxBudget(target)).unwrap();
        let end = cut.breakpoints.last().unwrap();
        assert!((end.budget - target).abs() < 1e-10);
        assert!(cut.truncated);
        // The cut point agrees with the full path's interpolation.
        let via_full = full.coefficients_at(target);
        let via_cut = end.dense_beta(20);
        for (a, b) in via_full.iter().zip(&via_cut) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn max_breakpoints_truncates() {
        let sample = random_problem(12, 24, 0.2, 901);
        let path = compute_path(&sample, PathStop::MaxBreakpoints(4)).unwrap();
        assert_eq!(path.breakpoints.len(), 4);
        assert!(path.truncated);
    }
}
