//! Dense linear-algebra kernels shared by the solver and the verifiers:
//! an incrementally updatable Cholesky factorization, power iteration for
//! spectral norms, and small symmetric eigensolvers.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dot product over slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm.
#[inline]
pub fn norm2_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `out[j] = sum_i u[i] * x[i*p + j]` for a row-major `n x p` matrix.
///
/// Streams the matrix once; this is the hot operation of the homotopy loop.
pub fn xt_matvec(x: &[f64], n: usize, p: usize, u: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), n * p);
    debug_assert_eq!(u.len(), n);
    debug_assert_eq!(out.len(), p);
    out.fill(0.0);
    for (i, &ui) in u.iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        let row = &x[i * p..(i + 1) * p];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += ui * v;
        }
    }
}

/// Upper-triangular Cholesky factor of a growing Gram matrix, stored packed
/// by columns: column `k` holds `R[0..=k, k]` at offset `k*(k+1)/2`.
///
/// Columns can be appended (with a rank test) and removed (Givens
/// re-triangularization), so the factor tracks an active set that changes
/// one coordinate at a time.
#[derive(Debug, Clone, Default)]
pub struct UpdatableCholesky {
    dim: usize,
    cols: Vec<f64>,
}

impl UpdatableCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j);
        self.cols[j * (j + 1) / 2 + i]
    }

    /// Try to extend the factorization with a new Gram column.
    ///
    /// `cross[i]` is the inner product of the new data column with active
    /// column `i`, and `diag` is the squared norm of the new data column.
    /// Returns `false` (leaving the factor unchanged) when the new column is
    /// numerically dependent on the active ones: the Schur complement falls
    /// at or below `rel_tol * diag`.
    pub fn push_column(&mut self, cross: &[f64], diag: f64, rel_tol: f64) -> bool {
        debug_assert_eq!(cross.len(), self.dim);
        if !(diag > 0.0) {
            return false;
        }
        let k = self.dim;
        let mut w = vec![0.0; k];
        for i in 0..k {
            let mut s = cross[i];
            for j in 0..i {
                s -= self.at(j, i) * w[j];
            }
            w[i] = s / self.at(i, i);
        }
        let d2 = diag - norm2_sq(&w);
        if !(d2 > rel_tol * diag) {
            return false;
        }
        self.cols.extend_from_slice(&w);
        self.cols.push(d2.sqrt());
        self.dim = k + 1;
        true
    }

    /// Remove active column `k` and re-triangularize with Givens rotations.
    pub fn remove_column(&mut self, k: usize) {
        assert!(k < self.dim);
        let old_dim = self.dim;
        let new_dim = old_dim - 1;
        // Rebuild packed storage without column k; later columns keep one
        // subdiagonal entry that the rotations below eliminate.
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(new_dim);
        for j in 0..old_dim {
            if j == k {
                continue;
            }
            let start = j * (j + 1) / 2;
            cols.push(self.cols[start..start + j + 1].to_vec());
        }
        for g in k..new_dim {
            // cols[g] currently has g+2 entries (rows 0..=g+1).
            let a = cols[g][g];
            let b = cols[g][g + 1];
            let r = a.hypot(b);
            let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
            cols[g][g] = r;
            cols[g].truncate(g + 1);
            for col in cols.iter_mut().skip(g + 1) {
                let hi = col[g];
                let lo = col[g + 1];
                col[g] = c * hi + s * lo;
                col[g + 1] = -s * hi + c * lo;
            }
        }
        self.cols.clear();
        for col in &cols {
            self.cols.extend_from_slice(col);
        }
        self.dim = new_dim;
    }

    /// Solve `(R^T R) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.dim);
        let k = self.dim;
        for i in 0..k {
            let mut s = b[i];
            for j in 0..i {
                s -= self.at(j, i) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
        for i in (0..k).rev() {
            let mut s = b[i];
            for j in i + 1..k {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }
}

/// Largest eigenvalue of a symmetric PSD operator given through its
/// matrix-vector product, by power iteration with a Rayleigh-quotient
/// stopping rule at relative tolerance `tol`.
pub fn power_iteration<F>(dim: usize, mut apply: F, tol: f64, max_iter: usize, seed: u64) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nv = norm2_sq(&v).sqrt();
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    let mut w = vec![0.0; dim];
    let mut rho_prev = f64::NAN;
    for _ in 0..max_iter {
        apply(&v, &mut w);
        let rho = dot(&v, &w);
        let nw = norm2_sq(&w).sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        if rho_prev.is_finite() && (rho - rho_prev).abs() <= tol * rho.abs().max(1e-300) {
            return rho;
        }
        rho_prev = rho;
    }
    rho_prev
}

/// All eigenvalues of a small symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order.
pub fn jacobi_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    let mut a: Vec<f64> = m.iter().cloned().collect();
    let idx = |i: usize, j: usize| i * n + j;
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[idx(i, j)] * a[idx(i, j)];
                }
            }
        }
        s
    };
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..100 {
        if off(&a) <= 1e-28 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[idx(q, q)] - a[idx(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[idx(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

/// Smallest eigenvalue of a symmetric matrix of size 1, 2, or 3 by the
/// closed-form characteristic-polynomial solutions.
pub fn sym_eig_min_small(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    assert!(n >= 1 && n <= 3, "closed forms cover sizes 1..=3");
    match n {
        1 => m[(0, 0)],
        2 => {
            let a = m[(0, 0)];
            let c = m[(1, 1)];
            let b = m[(0, 1)];
            let mid = 0.5 * (a + c);
            let rad = (0.5 * (a - c)).hypot(b);
            mid - rad
        }
        _ => {
            let a11 = m[(0, 0)];
            let a22 = m[(1, 1)];
            let a33 = m[(2, 2)];
            let a12 = m[(0, 1)];
            let a13 = m[(0, 2)];
            let a23 = m[(1, 2)];
            let p1 = a12 * a12 + a13 * a13 + a23 * a23;
            if p1 == 0.0 {
                return a11.min(a22).min(a33);
            }
            let q = (a11 + a22 + a33) / 3.0;
            let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b11 = (a11 - q) / p;
            let b22 = (a22 - q) / p;
            let b33 = (a33 - q) / p;
            let b12 = a12 / p;
            let b13 = a13 / p;
            let b23 = a23 / p;
            let detb = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13)
                + b13 * (b12 * b23 - b22 * b13);
            let r = (detb / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn random_spd(dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Array2::<f64>::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                g[(i, j)] = rng.gen::<f64>() - 0.5;
            }
        }
        let gt = g.t().to_owned();
        let mut spd = gt.dot(&g);
        for i in 0..dim {
            spd[(i, i)] += 0.5;
        }
        spd
    }

    #[test]
    fn cholesky_push_and_solve_matches_direct() {
        let spd = random_spd(6, 7);
        let mut chol = UpdatableCholesky::new();
        for k in 0..6 {
            let cross: Vec<f64> = (0..k).map(|i| spd[(i, k)]).collect();
            assert!(chol.push_column(&cross, spd[(k, k)], 1e-12));
        }
        // Solve against a known x.
        let x_true: Vec<f64> = (0..6).map(|i| (i as f64) - 2.5).collect();
        let mut b = vec![0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                b[i] += spd[(i, j)] * x_true[j];
            }
        }
        chol.solve_in_place(&mut b);
        for (got, want) in b.iter().zip(&x_true) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn cholesky_detects_dependent_column() {
        // Second column equals the first: Schur complement is zero.
        let mut chol = UpdatableCholesky::new();
        assert!(chol.push_column(&[], 4.0, 1e-12));
        assert!(!chol.push_column(&[4.0], 4.0, 1e-12));
        assert_eq!(chol.dim(), 1);
    }

    #[test]
    fn cholesky_remove_matches_refactorization() {
        let spd = random_spd(5, 11);
        let mut chol = UpdatableCholesky::new();
        for k in 0..5 {
            let cross: Vec<f64> = (0..k).map(|i| spd[(i, k)]).collect();
            assert!(chol.push_column(&cross, spd[(k, k)], 1e-12));
        }
        chol.remove_column(2);
        // Compare solves against a fresh factorization of the 4x4 principal
        // submatrix without index 2.
        let keep = [0usize, 1, 3, 4];
        let mut fresh = UpdatableCholesky::new();
        for (knew, &k) in keep.iter().enumerate() {
            let cross: Vec<f64> = keep[..knew].iter().map(|&i| spd[(i, k)]).collect();
            assert!(fresh.push_column(&cross, spd[(k, k)], 1e-12));
        }
        let b0 = [1.0, -2.0, 0.5, 3.0];
        let mut b1 = b0;
        let mut b2 = b0;
        chol.solve_in_place(&mut b1);
        fresh.solve_in_place(&mut b2);
        for (a, b) in b1.iter().zip(&b2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let m = arr2(&[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]]);
        let top = power_iteration(
            3,
            |v, out| {
                for i in 0..3 {
                    out[i] = (0..3).map(|j| m[(i, j)] * v[j]).sum();
                }
            },
            1e-10,
            10_000,
            1,
        );
        assert!((top - 2.0).abs() < 1e-8);
    }

    #[test]
    fn jacobi_matches_closed_forms() {
        let m2 = arr2(&[[2.0, 0.7], [0.7, 1.0]]);
        let eigs = jacobi_eigenvalues(&m2);
        assert!((eigs[0] - sym_eig_min_small(&m2)).abs() < 1e-12);

        let m3 = arr2(&[[3.0, 1.0, 0.2], [1.0, 2.0, -0.4], [0.2, -0.4, 1.5]]);
        let eigs3 = jacobi_eigenvalues(&m3);
        assert!((eigs3[0] - sym_eig_min_small(&m3)).abs() < 1e-10);
        // Trace is preserved.
        let tr: f64 = eigs3.iter().sum();
        assert!((tr - 6.5).abs() < 1e-10);
    }
}
