//! One-sided (Hestenes) Jacobi singular value decomposition.
//!
//! Columns of the working matrix are rotated pairwise until every pair is orthogonal to
//! within a relative tolerance; the column norms are then the singular values.

use crate::error::{Error, Result};
use crate::kernel::matrix::{dot, DenseMatrix};
use crate::scalar::Scalar;

pub const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = left · diag(singular_values) · rightᵀ` with `p = min(m, n)` components.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult<T> {
    /// `m × p`, orthonormal columns.
    pub left: DenseMatrix<T>,
    /// Descending, nonnegative, length `p`.
    pub singular_values: Vec<T>,
    /// `n × p`, orthonormal columns.
    pub right: DenseMatrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    /// `left · diag(values) · rightᵀ` for an arbitrary replacement spectrum.
    pub fn compose(&self, values: &[T]) -> Result<DenseMatrix<T>> {
        self.left.scale_columns(values)?.matmul_t(&self.right)
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        self.compose(&self.singular_values)
            .expect("SVD factors have conforming shapes")
    }

    pub fn rank(&self, tol: T) -> usize {
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Computes the thin SVD of `a` by cyclic one-sided Jacobi sweeps.
///
/// Output is deterministic for a given input. Singular values are sorted descending with a
/// stable sort, so ties keep sweep order.
pub fn svd<T: Scalar>(a: &DenseMatrix<T>) -> Result<SvdResult<T>> {
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            left: t.right,
            singular_values: t.singular_values,
            right: t.left,
        })
    }
}

/// Singular values only.
pub fn singular_values<T: Scalar>(a: &DenseMatrix<T>) -> Result<Vec<T>> {
    Ok(svd(a)?.singular_values)
}

fn jacobi_tall<T: Scalar>(a: &DenseMatrix<T>) -> Result<SvdResult<T>> {
    let (m, n) = a.shape();
    let tol = T::lit(T::JACOBI_TOL);
    // Column-major working copies.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    let mut converged = n < 2;
    let mut worst = 0.0f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        worst = 0.0;
        let mut rotated = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if alpha == T::zero() || beta == T::zero() || gamma == T::zero() {
                    continue;
                }
                let rel = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                worst = worst.max(rel.as_f64());
                if rel <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            sweeps: MAX_SWEEPS,
            off_diagonal: worst,
        });
    }

    let norms: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal values keep sweep order.
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let singular_values: Vec<T> = order.iter().map(|&k| norms[k]).collect();
    let mut left_cols: Vec<Option<Vec<T>>> = order
        .iter()
        .map(|&k| {
            let s = norms[k];
            (s > T::zero()).then(|| cols[k].iter().map(|&x| x / s).collect())
        })
        .collect();
    complete_orthonormal(&mut left_cols, m);

    let left = columns_to_matrix(m, left_cols.into_iter().map(|c| c.expect("completed")));
    let right = columns_to_matrix(n, order.iter().map(|&k| vcols[k].clone()));
    Ok(SvdResult {
        left,
        singular_values,
        right,
    })
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], i: usize, j: usize, c: T, s: T) {
    let (head, tail) = cols.split_at_mut(j);
    let ci = &mut head[i];
    let cj = &mut tail[0];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column
/// (Gram–Schmidt against the standard basis, applied twice).
fn complete_orthonormal<T: Scalar>(cols: &mut [Option<Vec<T>>], m: usize) {
    let mut basis_idx = 0;
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        while basis_idx < m {
            let mut v = vec![T::zero(); m];
            v[basis_idx] = T::one();
            basis_idx += 1;
            for _ in 0..2 {
                for q in cols.iter().flatten() {
                    let p = dot(q, &v);
                    for (vi, &qi) in v.iter_mut().zip(q) {
                        *vi = *vi - p * qi;
                    }
                }
            }
            let nrm = dot(&v, &v).sqrt();
            if nrm > T::lit(1e-3) {
                cols[slot] = Some(v.into_iter().map(|x| x / nrm).collect());
                break;
            }
        }
    }
}

fn columns_to_matrix<T: Scalar>(rows: usize, cols: impl Iterator<Item = Vec<T>>) -> DenseMatrix<T> {
    let cols: Vec<Vec<T>> = cols.collect();
    let p = cols.len();
    let mut data = Vec::with_capacity(rows * p);
    for i in 0..rows {
        for c in &cols {
            data.push(c[i]);
        }
    }
    DenseMatrix::from_parts(rows, p, data)
}
