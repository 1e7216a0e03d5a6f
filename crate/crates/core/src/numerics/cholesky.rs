use super::matrix::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `L L^T = A + jitter I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
    logdet: f64,
    jitter: f64,
}

/// Factorizes a symmetric positive-definite matrix.
///
/// If the plain factorization breaks down, a single diagonal jitter of
/// `1e-8 * trace(a) / n` is added and the factorization retried once.
pub fn cholesky(a: &DenseMatrix) -> Result<CholeskyFactor> {
    a.ensure_symmetric()?;
    if let Some(f) = try_factor(a, 0.0) {
        return Ok(f);
    }
    let n = a.rows() as f64;
    let jitter = 1e-8 * a.trace().max(0.0) / n;
    if jitter > 0.0 {
        if let Some(f) = try_factor(a, jitter) {
            log::debug!("cholesky succeeded after jitter {jitter:e}");
            return Ok(f);
        }
    }
    Err(Error::NotPositiveDefinite { jitter })
}

fn try_factor(a: &DenseMatrix, jitter: f64) -> Option<CholeskyFactor> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    let mut logdet = 0.0;
    for i in 0..n {
        let (done, rest) = l.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + n];
            let s = dot(&row_i[..j], &row_j[..j]);
            row_i[j] = (a[(i, j)] - s) / row_j[j];
        }
        let d = a[(i, i)] + jitter - dot(&row_i[..i], &row_i[..i]);
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        row_i[i] = d.sqrt();
        logdet += d.ln();
    }
    Some(CholeskyFactor {
        lower: DenseMatrix::from_row_major(n, n, l).ok()?,
        logdet,
        jitter,
    })
}

impl CholeskyFactor {
    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// `log |A|` of the (possibly jittered) matrix.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Diagonal jitter that was added, zero for a clean factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length");
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.lower.row(i);
            let s = dot(&row[..i], &x[..i]);
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `L^T x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length");
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let row = self.lower.row(i);
            x[i] /= row[i];
            let xi = x[i];
            for (xk, lik) in x[..i].iter_mut().zip(&row[..i]) {
                *xk -= lik * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows(), self.dim(), "right-hand side rows");
        let mut out = DenseMatrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.column(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// `b^T A^{-1} b` computed as `|L^{-1} b|^2`.
    pub fn inv_quad_form(&self, b: &[f64]) -> f64 {
        let z = self.solve_lower(b);
        dot(&z, &z)
    }

    /// `A^{-1}`.
    pub fn inverse(&self) -> DenseMatrix {
        let mut inv = self.solve_matrix(&DenseMatrix::identity(self.dim()));
        inv.symmetrize();
        inv
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| dot(&self.lower.row(i)[..=i], &z[..=i])).collect()
    }
}

/// Greedy-pivoted factor with `P^T A P = U^T U`.
#[derive(Debug, Clone)]
pub struct PivotedCholeskyFactor {
    /// `permutation[k]` is the original index chosen as the k-th pivot.
    permutation: Vec<usize>,
    upper: DenseMatrix,
    rank: usize,
}

/// Pivoted Cholesky factorization of a symmetric positive semi-definite matrix.
///
/// Pivots greedily on the largest residual diagonal. Pivots below
/// `1e-10 * max diag` end the factorization and fix the rank; a residual
/// diagonal below `-1e-8 * max diag` is reported as `NotPsd`.
pub fn pivoted_cholesky(a: &DenseMatrix) -> Result<PivotedCholeskyFactor> {
    a.ensure_symmetric()?;
    let n = a.rows();
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut upper = DenseMatrix::zeros(n, n);
    let max_diag = a.diagonal().into_iter().fold(0.0f64, f64::max);
    let rank_tol = 1e-10 * max_diag;
    let psd_tol = 1e-8 * max_diag;
    let mut rank = n;

    for k in 0..n {
        let mut p = k;
        for i in (k + 1)..n {
            if work[(i, i)] > work[(p, p)] {
                p = i;
            }
        }
        if p != k {
            swap_symmetric(&mut work, k, p);
            perm.swap(k, p);
            for r in 0..k {
                let t = upper[(r, k)];
                upper[(r, k)] = upper[(r, p)];
                upper[(r, p)] = t;
            }
        }
        let pivot = work[(k, k)];
        if pivot <= rank_tol || max_diag == 0.0 {
            if let Some(bad) = (k..n).map(|i| work[(i, i)]).find(|&d| d < -psd_tol) {
                return Err(Error::NotPsd { pivot: bad });
            }
            rank = k;
            break;
        }
        let ukk = pivot.sqrt();
        upper[(k, k)] = ukk;
        for j in (k + 1)..n {
            upper[(k, j)] = work[(k, j)] / ukk;
        }
        for i in (k + 1)..n {
            let uki = upper[(k, i)];
            for j in i..n {
                let v = work[(i, j)] - uki * upper[(k, j)];
                work[(i, j)] = v;
                work[(j, i)] = v;
            }
        }
    }
    if max_diag == 0.0 {
        rank = 0;
    }
    Ok(PivotedCholeskyFactor {
        permutation: perm,
        upper,
        rank,
    })
}

fn swap_symmetric(m: &mut DenseMatrix, a: usize, b: usize) {
    let n = m.rows();
    for j in 0..n {
        let t = m[(a, j)];
        m[(a, j)] = m[(b, j)];
        m[(b, j)] = t;
    }
    for i in 0..n {
        let t = m[(i, a)];
        m[(i, a)] = m[(i, b)];
        m[(i, b)] = t;
    }
}

impl PivotedCholeskyFactor {
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn upper(&self) -> &DenseMatrix {
        &self.upper
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.permutation.len()
    }

    /// `G = P U^T`, so that `G G^T` reproduces the input matrix.
    pub fn g_matrix(&self) -> DenseMatrix {
        let n = self.dim();
        let mut g = DenseMatrix::zeros(n, n);
        for (k, &orig) in self.permutation.iter().enumerate() {
            for c in 0..n {
                g[(orig, c)] = self.upper[(c, k)];
            }
        }
        g
    }

    /// `G z`.
    pub fn apply_g(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(z.len(), n);
        let mut out = vec![0.0; n];
        for (k, &orig) in self.permutation.iter().enumerate() {
            out[orig] = (0..=k).map(|c| self.upper[(c, k)] * z[c]).sum();
        }
        out
    }

    /// `G^{-1} r`; requires full rank.
    pub fn whiten(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if r.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for a {n}x{n} factor",
                r.len()
            )));
        }
        if self.rank < n {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        // Solve U^T e = P^T r by forward substitution.
        let mut e: Vec<f64> = self.permutation.iter().map(|&i| r[i]).collect();
        for k in 0..n {
            let mut s = e[k];
            for c in 0..k {
                s -= self.upper[(c, k)] * e[c];
            }
            e[k] = s / self.upper[(k, k)];
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factor() {
        let f = cholesky(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.lower(), &DenseMatrix::identity(3));
        assert_eq!(f.logdet(), 0.0);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn diagonal_factor() {
        let f = cholesky(&DenseMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(f.lower().diagonal(), vec![2.0, 3.0]);
        assert!((f.logdet() - 36f64.ln()).abs() < 1e-14);
        assert_eq!(f.solve(&[8.0, 9.0]), vec![2.0, 1.0]);
    }

    #[test]
    fn singular_matrix_is_jittered_once() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let f = cholesky(&a).unwrap();
        assert!(f.jitter() > 0.0 && f.jitter() <= 1e-8);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { .. })));
        let z = DenseMatrix::zeros(2, 2);
        assert!(cholesky(&z).is_err());
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn pivoted_identity_keeps_order() {
        let f = pivoted_cholesky(&DenseMatrix::identity(2)).unwrap();
        assert_eq!(f.permutation(), &[0, 1]);
        assert_eq!(f.upper(), &DenseMatrix::identity(2));
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn pivoted_picks_largest_diagonal_first() {
        let f = pivoted_cholesky(&DenseMatrix::from_diagonal(&[1.0, 4.0])).unwrap();
        assert_eq!(f.permutation(), &[1, 0]);
        assert_eq!(f.upper().diagonal(), vec![2.0, 1.0]);
        assert_eq!(f.whiten(&[1.0, 4.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn pivoted_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(pivoted_cholesky(&a), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn pivoted_zero_matrix_has_rank_zero() {
        let f = pivoted_cholesky(&DenseMatrix::zeros(3, 3)).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(f.apply_g(&[1.0, 2.0, 3.0]), vec![0.0; 3]);
    }
}
