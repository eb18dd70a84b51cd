//! Small dense helpers: eigen-decomposition of real non-symmetric matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigenvalues of a real square matrix with unit-norm eigenvectors, sorted by
/// decreasing modulus.
///
/// Eigenvalues come from the real Schur form. Each eigenvector is the right
/// singular vector of `A − λI` with the smallest singular value, rotated so
/// that its largest entry is real and positive.
pub fn eigen_decomposition(a: &DMatrix<f64>) -> (Vec<Complex64>, Vec<DVector<Complex64>>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut values: Vec<Complex64> = a.clone().complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.im.total_cmp(&x.im))
    });
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let vectors = values
        .iter()
        .map(|&lambda| {
            let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.expect("requested V^T");
            let (idx, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("non-empty");
            let mut v: DVector<Complex64> = v_t.row(idx).transpose().map(|c| c.conj());
            normalise_phase(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

fn normalise_phase(v: &mut DVector<Complex64>) {
    let pivot = v
        .iter()
        .copied()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        let rot = pivot.conj() / pivot.norm();
        v.iter_mut().for_each(|c| *c *= rot);
    }
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|c| *c /= norm);
    }
}

/// 2-norm condition number via singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 { f64::INFINITY } else { max / min }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_scaling() {
        let (r, th) = (0.8f64, 0.6f64);
        let a = DMatrix::from_row_slice(2, 2, &[r * th.cos(), -r * th.sin(), r * th.sin(), r * th.cos()]);
        let (vals, vecs) = eigen_decomposition(&a);
        for (l, v) in vals.iter().zip(&vecs) {
            assert!((l.norm() - r).abs() < 1e-12);
            assert!((l.arg().abs() - th).abs() < 1e-12);
            let ac = a.map(|x| Complex64::new(x, 0.0));
            let res = &ac * v - v * *l;
            assert!(res.norm() < 1e-12);
        }
        assert!(vals[0].im > 0.0);
    }

    #[test]
    fn real_eigenvectors() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 0.5, 0.3, 0.0, 0.0, -0.1]);
        let (vals, vecs) = eigen_decomposition(&a);
        assert!((vals[0].re - 2.0).abs() < 1e-12);
        assert!((vals[2].re + 0.1).abs() < 1e-12);
        assert!((vecs[0][0].re - 1.0).abs() < 1e-12);
        assert_eq!(condition_number(&DMatrix::identity(3, 3)), 1.0);
    }
}
