//! Small dense-matrix helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Force exact symmetry: (M + M^T)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Eigenvalues of a (nearly) symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetrize(m).symmetric_eigenvalues();
    ev.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).expect("non-finite eigenvalue"));
    ev
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    ev[ev.len() - 1]
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Condition number of a symmetric matrix (|lambda|_max / |lambda|_min).
pub fn sym_cond(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let amin = ev.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let amax = ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if amin == 0.0 {
        f64::INFINITY
    } else {
        amax / amin
    }
}

/// Stack blocks vertically; panics on column mismatch.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    assert!(!blocks.is_empty());
    let ncols = blocks[0].ncols();
    let nrows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), ncols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Stack blocks horizontally; panics on row mismatch.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    assert!(!blocks.is_empty());
    let nrows = blocks[0].nrows();
    let ncols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), nrows, "hstack row mismatch");
        out.view_mut((0, c), (nrows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Numeric rank via singular values with a relative tolerance.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |acc, v| acc.max(*v));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * smax).count()
}

/// Relative difference ||a - b|| / (1 + ||a|| + ||b||) in Frobenius norm.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + a.norm() + b.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacking() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let v = vstack(&[&a, &b]);
        assert_eq!(v.nrows(), 3);
        assert_eq!(v[(2, 1)], 6.0);
        let h = hstack(&[&b, &b]);
        assert_eq!(h.ncols(), 4);
        assert_eq!(h[(1, 3)], 6.0);
    }

    #[test]
    fn eigen_order() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let ev = sym_eigenvalues(&m);
        assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
    }
}
