//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type ParamMatrix = DMatrix<f64>;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix.
pub fn pinv_psd(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let eig = g.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let cut = PINV_RTOL * top;
    let mut out = DMatrix::zeros(n, n);
    if top <= 0.0 {
        return out;
    }
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    symmetrize(&out)
}

/// Orthogonal projector onto the column space of `f` (d x r): F (F^T F)^+ F^T.
pub fn column_projector(f: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = f.tr_mul(f);
    let p = f * pinv_psd(&gram) * f.transpose();
    symmetrize(&p)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = a.clone().symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest singular value squared, via the Gram matrix of the smaller side.
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = if a.nrows() >= a.ncols() {
        a.tr_mul(a)
    } else {
        a * a.transpose()
    };
    sym_eig_range(&gram).1.max(0.0)
}

/// Row-major vectorization, matching the flat indexing used everywhere else.
pub fn vec_row_major(w: &ParamMatrix) -> DVector<f64> {
    let (m, n) = w.shape();
    DVector::from_fn(m * n, |k, _| w[(k / n, k % n)])
}

pub fn unvec_row_major(x: &[f64], shape: (usize, usize)) -> ParamMatrix {
    DMatrix::from_row_slice(shape.0, shape.1, x)
}

pub fn frob_sq(a: &ParamMatrix) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn all_finite(a: &ParamMatrix) -> bool {
    a.iter().all(|v| v.is_finite())
}
