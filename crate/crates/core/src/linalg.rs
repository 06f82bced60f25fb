//! Dense symmetric helpers on top of nalgebra: sorted eigendecompositions,
//! thresholded pseudo-inverses and matrix square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted ascending
/// and eigenvectors permuted to match.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V f(Λ) Vᵀ`, symmetrized.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        let mut out = &self.vectors * DMatrix::from_diagonal(&scaled) * self.vectors.transpose();
        symmetrize_in_place(&mut out);
        out
    }
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    SortedEigen::new(m).min()
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SortedEigen::new(m).max()
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
/// magnitude at most `dim · ε · max|λ|` are treated as zero.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SortedEigen::new(m);
    let scale = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = m.nrows() as f64 * f64::EPSILON * scale;
    eig.map(|v| if v.abs() > cutoff { 1.0 / v } else { 0.0 })
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    SortedEigen::new(m).map(|v| v.max(0.0).sqrt())
}

/// Inverse principal square root of a symmetric positive definite matrix.
pub fn inv_sqrt_pd(m: &DMatrix<f64>) -> DMatrix<f64> {
    SortedEigen::new(m).map(|v| 1.0 / v.sqrt())
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize_in_place(&mut m);
    m
}

/// Principal submatrix on `idx × idx`.
pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Rows `idx` of `m`.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

pub fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Adds `block` into `m` at rows and columns `idx`, scaled by `weight`.
pub fn scatter_add(m: &mut DMatrix<f64>, idx: &[usize], block: &DMatrix<f64>, weight: f64) {
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            m[(i, j)] += weight * block[(r, c)];
        }
    }
}

/// `vᵀ M v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn sorted_eigen_orders_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let e = SortedEigen::new(&m);
        assert_eq!(e.values.as_slice(), &[1.0, 2.0, 3.0]);
        assert_close(e.vectors[(1, 0)].abs(), 1.0, 1e-15);
    }

    #[test]
    fn pinv_of_singular_projector_is_itself() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let pi = pinv_sym(&p);
        for (a, b) in pi.iter().zip(p.iter()) {
            assert_close(*a, *b, 1e-14);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = sqrt_psd(&m);
        let back = &s * &s;
        for (a, b) in back.iter().zip(m.iter()) {
            assert_close(*a, *b, 1e-14);
        }
        let is = inv_sqrt_pd(&m);
        let id = &is * &m * &is;
        assert_close(id[(0, 0)], 1.0, 1e-14);
        assert_close(id[(0, 1)], 0.0, 1e-14);
    }
}
