//! Thin numeric helpers shared by the recovery pipeline: thresholded ranks,
//! orthonormal span bases and projections, ordered symmetric eigensolves.

use nalgebra::linalg::{ColPivQR, SymmetricEigen};
use nalgebra::{DMatrix, DVector};

/// Relative cutoff used when truncating QR factors to numerical rank.
const BASIS_TRUNCATION: f64 = 1e-12;

/// Singular values of `m`, sorted in decreasing order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Count of singular values at or above `tl`, plus the full spectrum
/// (decreasing) for diagnostics.
pub fn rank_with_threshold(m: &DMatrix<f64>, tl: f64) -> (usize, Vec<f64>) {
    let sv = singular_values_desc(m);
    let rank = sv.iter().filter(|&&s| s >= tl).count();
    (rank, sv)
}

/// Smallest singular value of `m`.
pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values_desc(m).last().copied().unwrap_or(0.0)
}

/// Stack row vectors into a matrix. All vectors must share a length.
pub fn stack_rows(rows: &[DVector<f64>]) -> DMatrix<f64> {
    assert!(!rows.is_empty(), "cannot stack zero rows");
    let n = rows[0].len();
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

/// Orthonormal basis (as columns) of the span of the given row vectors,
/// via column-pivoted QR of the transposed stack. Columns are truncated at
/// numerical rank, so exactly dependent rows do not inflate the span.
pub fn orthonormal_row_basis(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.ncols();
    if rows.nrows() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let qr = ColPivQR::new(rows.transpose());
    let q = qr.q();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let mut rank = 0;
    for k in 0..r.nrows().min(r.ncols()) {
        if r[(k, k)].abs() > BASIS_TRUNCATION * lead {
            rank = k + 1;
        } else {
            break;
        }
    }
    q.columns(0, rank).into_owned()
}

/// Component of `v` orthogonal to the span of the orthonormal columns `q`:
/// `v - q (qᵀ v)`.
pub fn project_out(q: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if q.ncols() == 0 {
        return v.clone();
    }
    v - q * (q.transpose() * v)
}

/// Orthogonal projector `I - q qᵀ` onto the complement of the span of the
/// orthonormal columns `q`.
pub fn complement_projector(q: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - q * q.transpose()
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in increasing
/// order; returns `(eigenvalues, eigenvectors-as-columns)`.
pub fn symmetric_eigen_ascending(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = m.nrows();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (values, vectors)
}

/// Moore-Penrose pseudoinverse.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .pseudo_inverse(1e-12)
        .expect("svd of a finite matrix always exists")
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}
