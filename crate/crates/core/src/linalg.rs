use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Lower Cholesky factor of `k`, retrying with diagonal jitter on failure.
///
/// Jitter starts at `1e-10 * mean(diag)` and grows tenfold per retry up to
/// `1e-4 * mean(diag)`. Returns the factor and the jitter that was applied.
pub(crate) fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(l) = try_cholesky(k.clone()) {
        return Ok((l, 0.0));
    }
    let n = k.nrows();
    let mean_diag = k.diagonal().sum() / n as f64;
    if !mean_diag.is_finite() || mean_diag <= 0.0 {
        return Err(Error::NotPositiveDefinite { jitter: 0.0 });
    }
    let max = JITTER_MAX * mean_diag;
    let mut jitter = JITTER_START * mean_diag;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(l) = try_cholesky(kj) {
            return Ok((l, jitter));
        }
        if jitter >= max * (1.0 - 1e-12) {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter = (jitter * 10.0).min(max);
    }
}

fn try_cholesky(k: DMatrix<f64>) -> Option<DMatrix<f64>> {
    if k.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let l = nalgebra::Cholesky::new(k)?.unpack();
    l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()).then_some(l)
}

/// Solves `L v = b` in place.
#[inline]
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for j in 0..n {
        let col = l.column(j);
        let vj = b[j] / col[j];
        b[j] = vj;
        for i in (j + 1)..n {
            b[i] -= col[i] * vj;
        }
    }
}

/// Solves `L^T v = b` in place.
pub(crate) fn backward_substitute_transpose(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let col = l.column(i);
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= col[j] * b[j];
        }
        b[i] = s / col[i];
    }
}

/// `K^{-1} y` from the lower factor of `K`.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let mut v: Vec<f64> = y.iter().copied().collect();
    forward_substitute(l, &mut v);
    backward_substitute_transpose(l, &mut v);
    DVector::from_vec(v)
}

/// `K^{-1}` from the lower factor of `K`.
pub(crate) fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        forward_substitute(l, &mut e);
        backward_substitute_transpose(l, &mut e);
        inv.column_mut(c).copy_from_slice(&e);
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_match_dense_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert_eq!(jitter, 0.0);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = cholesky_solve(&l, &y);
        let dense = a.clone().try_inverse().unwrap() * &y;
        assert!((x - dense).norm() < 1e-12);
        let inv = cholesky_inverse(&l);
        assert!((&inv * &a - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (l, jitter) = cholesky_with_jitter(&a).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-4);
        assert!(l.diagonal().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn indefinite_matrix_reports_final_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        // mean(diag) is zero here, so no jitter scale exists.
        assert!(matches!(cholesky_with_jitter(&a), Err(Error::NotPositiveDefinite { .. })));
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        match cholesky_with_jitter(&b) {
            Err(Error::NotPositiveDefinite { jitter }) => assert!((jitter - 1e-4).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
