//! Small dense vectors and matrices for feature-space algebra (d is tens at most).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(x, y)| *x - *y).collect()
}

/// `y += alpha * x`
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

pub fn scale<S: Scalar>(alpha: S, x: &[S]) -> Vec<S> {
    x.iter().map(|v| alpha * *v).collect()
}

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![S::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[S]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(domain("matrix rows must form a square array"));
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    /// `self += weight * x x^T`
    pub fn add_outer(&mut self, weight: S, x: &[S]) {
        debug_assert_eq!(x.len(), self.dim);
        for i in 0..self.dim {
            let wi = weight * x[i];
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            for (j, xj) in x.iter().enumerate() {
                row[j] = row[j] + wi * *xj;
            }
        }
    }

    pub fn scaled(&self, alpha: S) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * *v).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-S::one()))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        (0..self.dim)
            .map(|i| dot(&self.data[i * self.dim..(i + 1) * self.dim], x))
            .collect()
    }

    /// `u^T M u`
    pub fn quadratic_form(&self, u: &[S]) -> S {
        dot(u, &self.mul_vec(u))
    }

    pub fn max_abs_asymmetry(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl<S> std::ops::Index<(usize, usize)> for Matrix<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.dim + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Matrix<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.dim + j]
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<S: Scalar>(m: &Matrix<S>) -> Result<Vec<S>> {
    if m.max_abs_asymmetry() > S::of(SYMMETRY_TOL) {
        return Err(domain(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {})",
            m.max_abs_asymmetry()
        )));
    }
    let n = m.dim();
    let mut a = m.clone();
    // Symmetrize exactly so rotations act on a truly symmetric array.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)]) / S::of(2.0);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let scale = a.as_slice().iter().fold(S::zero(), |acc, v| acc + *v * *v).sqrt();
    let threshold = S::epsilon() * S::epsilon() * scale * scale;

    for _ in 0..MAX_SWEEPS {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + a[(i, j)] * a[(i, j)];
            }
        }
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (S::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = S::zero();
                a[(q, p)] = S::zero();
            }
        }
    }
    let mut eig: Vec<S> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<S: Scalar>(m: &Matrix<S>) -> Result<S> {
    if m.dim() == 0 {
        return Err(domain("eigenvalue of an empty matrix"));
    }
    Ok(symmetric_eigenvalues(m)?[0])
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue<S: Scalar>(m: &Matrix<S>) -> Result<S> {
    if m.dim() == 0 {
        return Err(domain("eigenvalue of an empty matrix"));
    }
    Ok(*symmetric_eigenvalues(m)?.last().expect("nonempty"))
}
