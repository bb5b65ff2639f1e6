//! Dense helpers on flat slices. Matrices are square and row-major unless
//! a function says otherwise.

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// y += a * x
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// In-place lower Cholesky factor of a symmetric positive definite `n x n`
/// matrix. Only the lower triangle is read; the strict upper triangle is
/// zeroed. Errs when a pivot is not positive.
pub(crate) fn cholesky_lower(mat: &mut [f64], n: usize) -> Result<(), ()> {
    debug_assert_eq!(mat.len(), n * n);
    for j in 0..n {
        let mut diag = mat[j * n + j];
        for k in 0..j {
            diag -= mat[j * n + k] * mat[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(());
        }
        let ljj = libm::sqrt(diag);
        mat[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = mat[i * n + j];
            for k in 0..j {
                s -= mat[i * n + k] * mat[j * n + k];
            }
            mat[i * n + j] = s / ljj;
        }
        for k in j + 1..n {
            mat[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// `y = M x` for row-major `rows x cols`.
pub(crate) fn mat_vec(mat: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(mat.len(), rows * cols);
    for (i, yi) in y.iter_mut().enumerate().take(rows) {
        *yi = dot(&mat[i * cols..(i + 1) * cols], x);
    }
}
