//! Small dense linear algebra helpers shared by the design modules.

use nalgebra::DMatrix;

/// Relative pivot floor for the symmetric factorization.
pub const PIVOT_TOL: f64 = 1e-12;
/// Relative singular-value floor for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

/// Log-determinant of a symmetric positive semi-definite matrix by LDLᵀ
/// with diagonal pivoting. Returns `-∞` when a pivot falls below
/// `PIVOT_TOL` times the largest diagonal entry.
pub fn psd_logdet(matrix: &DMatrix<f64>) -> f64 {
    let mut work = matrix.clone();
    psd_logdet_in_place(&mut work)
}

/// As [`psd_logdet`], destroying `work`.
pub fn psd_logdet_in_place(work: &mut DMatrix<f64>) -> f64 {
    let n = work.nrows();
    debug_assert_eq!(n, work.ncols());
    if n == 0 {
        return 0.0;
    }
    let scale = (0..n).map(|i| work[(i, i)].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return f64::NEG_INFINITY;
    }
    let floor = PIVOT_TOL * scale;
    let mut logdet = 0.0;
    for k in 0..n {
        let mut best = k;
        for i in k + 1..n {
            if work[(i, i)] > work[(best, best)] {
                best = i;
            }
        }
        let pivot = work[(best, best)];
        if !(pivot > floor) {
            return f64::NEG_INFINITY;
        }
        if best != k {
            work.swap_rows(k, best);
            work.swap_columns(k, best);
        }
        logdet += pivot.ln();
        for i in k + 1..n {
            let l = work[(i, k)] / pivot;
            if l == 0.0 {
                continue;
            }
            for j in k + 1..=i {
                let v = work[(i, j)] - l * work[(j, k)];
                work[(i, j)] = v;
                work[(j, i)] = v;
            }
        }
    }
    logdet
}

/// Determinant of a PSD matrix; zero when numerically singular.
pub fn psd_det(matrix: &DMatrix<f64>) -> f64 {
    let ld = psd_logdet(matrix);
    if ld == f64::NEG_INFINITY {
        0.0
    } else {
        ld.exp()
    }
}

/// Numerical rank from singular values above `RANK_TOL · σ_max`.
pub fn numerical_rank(matrix: &DMatrix<f64>) -> usize {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return 0;
    }
    let sv = matrix.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

/// Determinant of a symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal entries `-off` (so `off[t]` couples rows `t` and `t+1`).
pub fn tridiagonal_det(diag: &[f64], off: &[f64]) -> f64 {
    debug_assert_eq!(off.len() + 1, diag.len().max(1));
    let mut prev = 1.0;
    let mut cur = match diag.first() {
        Some(&d) => d,
        None => return 1.0,
    };
    for t in 1..diag.len() {
        let next = diag[t] * cur - off[t - 1] * off[t - 1] * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Inverse of a symmetric positive definite matrix, or `None` when the
/// Cholesky factorization fails.
pub fn spd_inverse(matrix: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    matrix.clone().cholesky().map(|c| c.inverse())
}

/// `tr(A B)` for symmetric `A`, `B` of equal shape.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_matches_lu_determinant() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let lu = m.clone().determinant();
        assert!((psd_logdet(&m) - lu.ln()).abs() < 1e-13);
        assert!((psd_det(&m) - lu).abs() < 1e-12 * lu);
    }

    #[test]
    fn singular_psd_gives_zero() {
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let rank_one = &v * v.transpose();
        assert_eq!(psd_logdet(&rank_one), f64::NEG_INFINITY);
        assert_eq!(psd_det(&rank_one), 0.0);
        assert_eq!(numerical_rank(&rank_one), 1);
        assert_eq!(psd_det(&DMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let diag = [3.0, 4.0, 5.0, 2.5];
        let off = [1.0, 0.5, 0.7];
        let mut dense = DMatrix::zeros(4, 4);
        for i in 0..4 {
            dense[(i, i)] = diag[i];
        }
        for i in 0..3 {
            dense[(i, i + 1)] = -off[i];
            dense[(i + 1, i)] = -off[i];
        }
        let lu = dense.determinant();
        assert!((tridiagonal_det(&diag, &off) - lu).abs() < 1e-12 * lu.abs());
        assert_eq!(tridiagonal_det(&[2.0], &[]), 2.0);
    }
}
