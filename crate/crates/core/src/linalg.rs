//! Small Hermitian-matrix helpers shared by the numeric modules.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::{CMatrix, CVector, C64};

/// Cholesky factorization that fails unless every pivot is real and positive.
///
/// The complex factorization in nalgebra takes complex square roots of
/// pivots, so on its own it does not detect indefinite Hermitian input.
pub fn cholesky(a: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    let chol = Cholesky::new(a.clone())?;
    let ok = chol.l_dirty().diagonal().iter().all(|z| z.re > 0.0 && z.re.is_finite() && z.im == 0.0);
    ok.then_some(chol)
}

/// `v^H A v`, real part. For Hermitian `A` the imaginary part is rounding noise.
pub fn quad_form(v: &CVector, a: &CMatrix) -> f64 {
    let av = a * v;
    v.dotc(&av).re
}

/// Real part of the trace.
pub fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// `Re tr(A B)`, computed without forming the product.
pub fn inner_re(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = a[(i, j)] * b[(j, i)];
            acc += x.re;
        }
    }
    acc
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// `v v^H`.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest eigenvalue and a unit eigenvector for it.
pub fn leading_eigenpair(a: &CMatrix) -> (f64, CVector) {
    let (values, vectors) = hermitian_eigen(a);
    (values[0], vectors.column(0).into_owned())
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    let (values, _) = hermitian_eigen(a);
    *values.last().unwrap_or(&0.0)
}

pub fn max_eigenvalue(a: &CMatrix) -> f64 {
    let (values, _) = hermitian_eigen(a);
    *values.first().unwrap_or(&0.0)
}

/// Maximum absolute entry of `A - A^H`.
pub fn hermitian_residual(a: &CMatrix) -> f64 {
    (a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Real matrix with entries `Re(a)`; used by tests and dumps.
pub fn real_part(a: &CMatrix) -> DMatrix<f64> {
    a.map(|z| z.re)
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_matches_trace_of_product() {
        let a = CMatrix::from_fn(3, 3, |i, j| c(i as f64 + 1.0, j as f64 - 0.5));
        let a = hermitian_part(&a);
        let b = CMatrix::from_fn(3, 3, |i, j| c((i * j) as f64, i as f64 - j as f64));
        let b = hermitian_part(&b);
        let direct = trace_re(&(&a * &b));
        assert!((inner_re(&a, &b) - direct).abs() < 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let v = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let a = outer(&v) + identity(2).scale(0.5);
        let (vals, vecs) = hermitian_eigen(&a);
        assert!((vals[0] - 2.5).abs() < 1e-12);
        assert!((vals[1] - 0.5).abs() < 1e-12);
        let u = vecs.column(0).into_owned();
        assert!((v.dotc(&u).norm_sqr() / 2.0 - 1.0).abs() < 1e-12);
    }
}
