//! Dense row-major matrices and a cyclic Jacobi eigensolver for symmetric
//! matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix { rows: r, cols: c, data: rows.concat() }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenpairs sorted by descending eigenvalue; eigenvectors are the columns
/// of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub sweeps: usize,
}

pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `JACOBI_TOL` times the Frobenius norm of the input.
pub fn jacobi_eigen(a: &Matrix) -> Result<SymEigen> {
    jacobi_eigen_with(a, JACOBI_TOL, JACOBI_MAX_SWEEPS)
}

pub fn jacobi_eigen_with(a: &Matrix, tol: f64, max_sweeps: usize) -> Result<SymEigen> {
    if a.rows != a.cols {
        return Err(Error::Config(format!("matrix is {}x{}, not square", a.rows, a.cols)));
    }
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let n = a.rows;
    // symmetrize so that tiny rounding asymmetries do not stall convergence
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    let threshold = tol * scale;

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > threshold {
        if sweeps == max_sweeps {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge in {max_sweeps} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Number of eigenvalues of `a` strictly below `x`, from the signs of the
    /// LDL^T pivots of `a - x I` (Sylvester's law of inertia).
    fn count_below(a: &Matrix, x: f64) -> usize {
        let n = a.rows;
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] -= x;
        }
        let mut negatives = 0;
        for k in 0..n {
            let mut piv = m[(k, k)];
            if piv == 0.0 {
                piv = 1e-300;
            }
            if piv < 0.0 {
                negatives += 1;
            }
            for i in (k + 1)..n {
                let f = m[(i, k)] / piv;
                for j in (k + 1)..n {
                    m[(i, j)] -= f * m[(k, j)];
                }
            }
        }
        negatives
    }

    fn bisect_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows;
        let bound = (0..n).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
        (0..n)
            .map(|k| {
                // k-th smallest eigenvalue
                let (mut lo, mut hi) = (-bound, bound);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if count_below(a, mid) > k {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .rev()
            .collect()
    }

    fn random_symmetric(rng: &mut impl Rng, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn check_orthonormal(v: &Matrix, tol: f64) {
        let g = v.transpose().matmul(v);
        assert!(g.max_abs_diff(&Matrix::identity(v.rows)) < tol);
    }

    #[test]
    fn diagonal_input() {
        let e = jacobi_eigen(&Matrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 1.0]);
        assert_eq!(e.vectors.col(0), vec![0.0, 1.0]);
        assert_eq!(e.vectors.col(1), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_matrix_converges_immediately() {
        let e = jacobi_eigen(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e.sweeps, 0);
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_matrices_match_inertia_bisection() {
        let mut rng = rng::stream(42);
        let mut worst = 0.0f64;
        for trial in 0..1000 {
            let n = 1 + trial % 4;
            let a = random_symmetric(&mut rng, n);
            let e = jacobi_eigen(&a).unwrap();
            let reference = bisect_eigenvalues(&a);
            for (x, y) in e.values.iter().zip(&reference) {
                worst = worst.max((x - y).abs());
            }
            check_orthonormal(&e.vectors, 1e-10);
        }
        assert!(worst < 1e-9, "worst eigenvalue error {worst}");
    }

    #[test]
    fn larger_matrices_reconstruct_and_interlace() {
        let mut rng = rng::stream(7);
        for n in [5, 8, 16, 33, 64] {
            let a = random_symmetric(&mut rng, n);
            let e = jacobi_eigen(&a).unwrap();
            check_orthonormal(&e.vectors, 1e-10);
            let recon = e.vectors.matmul(&Matrix::diag(&e.values)).matmul(&e.vectors.transpose());
            assert!(recon.max_abs_diff(&a) < 1e-10 * a.frobenius().max(1.0));
            // inertia between consecutive computed eigenvalues
            let asc: Vec<f64> = e.values.iter().rev().copied().collect();
            for k in 0..n - 1 {
                if asc[k + 1] - asc[k] > 1e-8 {
                    assert_eq!(count_below(&a, 0.5 * (asc[k] + asc[k + 1])), k + 1);
                }
            }
        }
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(matches!(jacobi_eigen(&Matrix::zeros(2, 3)), Err(Error::Config(_))));
    }
}
