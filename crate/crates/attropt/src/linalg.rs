//! Small dense linear-algebra kernel: row-major matrices, Cholesky and
//! eigenvalue-based solves, and a cyclic Jacobi eigensolver for symmetric
//! matrices. Everything here is sized for desk-scale problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T * v`
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            if vi != 0.0 {
                for (o, &x) in out.iter_mut().zip(self.row(i)) {
                    *o += vi * x;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *t.at_mut(j, i) = self.at(i, j);
            }
        }
        t
    }

    /// `self * other`
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a != 0.0 {
                    for j in 0..other.cols {
                        *out.at_mut(i, j) += a * other.at(k, j);
                    }
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Replaces the matrix with `(A + A^T)/2`. Square matrices only.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self.at(i, j) + self.at(j, i));
                *self.at_mut(i, j) = v;
                *self.at_mut(j, i) = v;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky
/// factorization. Fails with [`Error::Singular`] when a pivot is not
/// strictly positive.
pub fn cholesky_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.len(), a.rows);
    let n = a.rows;
    let mut l = a.clone();
    for j in 0..n {
        let mut d = l.at(j, j);
        for k in 0..j {
            d -= l.at(j, k) * l.at(j, k);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Singular(format!(
                "non-positive pivot {d:.3e} at index {j}"
            )));
        }
        let d = d.sqrt();
        *l.at_mut(j, j) = d;
        for i in (j + 1)..n {
            let mut v = l.at(i, j);
            for k in 0..j {
                v -= l.at(i, k) * l.at(j, k);
            }
            *l.at_mut(i, j) = v / d;
        }
    }
    // forward then backward substitution
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l.at(i, k) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l.at(k, i) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    Ok(y)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, Q)` with `A = Q diag(values) Q^T`; column `j` of
/// `Q` is the eigenvector for `values[j]`. Eigenvalues are in ascending
/// order.
pub fn jacobi_eigh(a: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    m.symmetrize();
    let mut q = Mat::identity(n);
    if n <= 1 {
        return (m.data.clone(), q);
    }

    let frob = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * frob;
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for qi in (p + 1)..n {
                off += m.at(p, qi) * m.at(p, qi);
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n - 1 {
            for r in (p + 1)..n {
                let apq = m.at(p, r);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(r, r);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // rotate rows/columns p and r of m
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkr = m.at(k, r);
                    *m.at_mut(k, p) = c * mkp - s * mkr;
                    *m.at_mut(k, r) = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mrk = m.at(r, k);
                    *m.at_mut(p, k) = c * mpk - s * mrk;
                    *m.at_mut(r, k) = s * mpk + c * mrk;
                }
                // rotations drift the symmetric pair; pin the annihilated entry
                *m.at_mut(p, r) = 0.0;
                *m.at_mut(r, p) = 0.0;

                for k in 0..n {
                    let qkp = q.at(k, p);
                    let qkr = q.at(k, r);
                    *q.at_mut(k, p) = c * qkp - s * qkr;
                    *q.at_mut(k, r) = s * qkp + c * qkr;
                }
            }
        }
    }

    let mut vals: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    // sort ascending, permuting eigenvector columns alongside
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut sorted_q = Mat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            *sorted_q.at_mut(i, new_j) = q.at(i, old_j);
        }
    }
    vals = sorted_vals;
    (vals, sorted_q)
}

/// Least-squares solve of `A x = b` for symmetric `A` through the
/// eigendecomposition, treating eigenvalues below `1e-12 * max|eig|` as
/// zero (minimum-norm solution on the rank-deficient part).
pub fn eigh_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
    let (vals, q) = jacobi_eigh(a);
    let cutoff = 1e-12
        * vals
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
            .max(f64::MIN_POSITIVE);
    let qtb = q.tr_matvec(b);
    let scaled: Vec<f64> = qtb
        .iter()
        .zip(&vals)
        .map(|(&y, &v)| if v.abs() <= cutoff { 0.0 } else { y / v })
        .collect();
    q.matvec(&scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Mat {
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random::<f64>() * 2.0 - 1.0;
                *a.at_mut(i, j) = v;
                *a.at_mut(j, i) = v;
            }
        }
        a
    }

    #[test]
    fn cholesky_solves_spd_system() {
        // A = B^T B + I is SPD
        let b = Mat::from_rows(&[
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.3, 2.0],
            vec![0.2, -0.7, 1.1],
        ]);
        let mut a = b.transpose().matmul(&b);
        for i in 0..3 {
            *a.at_mut(i, i) += 1.0;
        }
        let x_true = vec![0.3, -1.2, 2.5];
        let rhs = a.matvec(&x_true);
        let x = cholesky_solve(&a, &rhs).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert!((xi - ti).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(cholesky_solve(&a, &[1.0, 1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn jacobi_reconstructs_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &n in &[1usize, 2, 5, 16, 64] {
            let a = random_symmetric(n, &mut rng);
            let (vals, q) = jacobi_eigh(&a);
            // reconstruction ||Q L Q^T - A||_F <= 1e-9 ||A||_F
            let mut ql = q.clone();
            for i in 0..n {
                for j in 0..n {
                    *ql.at_mut(i, j) *= vals[j];
                }
            }
            let rec = ql.matmul(&q.transpose());
            let mut diff = rec.clone();
            for (d, a) in diff.data.iter_mut().zip(&a.data) {
                *d -= a;
            }
            assert!(
                diff.frobenius_norm() <= 1e-9 * a.frobenius_norm().max(1.0),
                "n={n}: reconstruction error {}",
                diff.frobenius_norm()
            );
            // orthogonality ||Q^T Q - I|| <= 1e-10 entrywise
            let qtq = q.transpose().matmul(&q);
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq.at(i, j) - expect).abs() < 1e-10);
                }
            }
            // ascending order
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
        }
    }

    #[test]
    fn eigh_solve_handles_rank_deficiency() {
        // centering matrix C = I - (1/3) 11^T has rank 2; rhs in its range
        let n = 3;
        let mut c = Mat::identity(n);
        for i in 0..n {
            for j in 0..n {
                *c.at_mut(i, j) -= 1.0 / n as f64;
            }
        }
        let y = vec![1.0, 2.0, 6.0];
        let rhs = c.matvec(&y); // centered, lies in range(C)
        let x = eigh_solve(&c, &rhs);
        let back = c.matvec(&x);
        for (bi, ri) in back.iter().zip(&rhs) {
            assert!((bi - ri).abs() < 1e-10);
        }
        // minimum-norm solution is orthogonal to the kernel (the ones vector)
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
    }
}
