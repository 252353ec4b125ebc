//! Assembly of the 2n x 2n balancing kernel matrix `G_F` and its PSD
//! factorization `G_F = M M^T` with `M = [M1; M2]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::GramSet;

/// Column-wise scaling `out[i, j] = g[i, j] * v[j]` (the column-wise
/// Khatri-Rao product with a vector reduces to this).
pub fn khatri_rao_scale(g: &DMatrix<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    if g.ncols() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} columns but vector has {} entries",
            g.ncols(),
            v.len()
        )));
    }
    let mut out = g.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= v[j];
    }
    Ok(out)
}

/// Assemble the symmetric 2n x 2n matrix
/// `[[G_A ∘ G_X, (G_A ⊙ Ḡ_X)^T], [G_A ⊙ Ḡ_X, ḡ_X G_A]]`.
pub fn assemble_gf(g: &GramSet) -> Result<DMatrix<f64>> {
    let n = g.n;
    let top_left = g.g_a.component_mul(&g.g_x);
    let bottom_left = khatri_rao_scale(&g.g_a, &g.g_x_rowmean)?;
    let bottom_right = &g.g_a * g.g_x_mean;

    let mut gf = DMatrix::zeros(2 * n, 2 * n);
    gf.view_mut((0, 0), (n, n)).copy_from(&top_left);
    gf.view_mut((0, n), (n, n))
        .copy_from(&bottom_left.transpose());
    gf.view_mut((n, 0), (n, n)).copy_from(&bottom_left);
    gf.view_mut((n, n), (n, n)).copy_from(&bottom_right);
    Ok(gf)
}

/// Result of factoring `G_F` as `M M^T` by symmetric eigendecomposition
/// with small eigenvalues clamped to zero and dropped.
#[derive(Debug, Clone)]
pub struct BalanceFactor {
    /// 2n x q factor, columns ordered by descending eigenvalue.
    pub m: DMatrix<f64>,
    /// Top n rows of `m`.
    pub m1: DMatrix<f64>,
    /// Bottom n rows of `m`.
    pub m2: DMatrix<f64>,
    /// Retained rank.
    pub q: usize,
    /// Number of eigenvalues clamped to zero.
    pub clamp_count: usize,
}

/// Factor a symmetric PSD matrix as `M M^T`. Eigenvalues below
/// `tol_rel * lambda_max` are clamped to zero and their eigenvectors
/// dropped.
pub fn psd_factor(gf: &DMatrix<f64>, tol_rel: f64) -> Result<BalanceFactor> {
    let two_n = gf.nrows();
    if gf.ncols() != two_n || !two_n.is_multiple_of(2) {
        return Err(Error::DimensionMismatch(
            "psd_factor expects a square 2n x 2n matrix".into(),
        ));
    }
    let n = two_n / 2;
    let sym = 0.5 * (gf + gf.transpose());
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(Error::Degenerate(format!(
            "largest eigenvalue {lmax} is not positive; degenerate kernel matrix"
        )));
    }
    let cutoff = tol_rel * lmax;
    let mut order: Vec<usize> = (0..two_n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
    });
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&k| eig.eigenvalues[k] > cutoff)
        .collect();
    let q = kept.len();
    let clamp_count = two_n - q;

    let mut m = DMatrix::zeros(two_n, q);
    for (col, &k) in kept.iter().enumerate() {
        let scale = eig.eigenvalues[k].sqrt();
        m.column_mut(col)
            .copy_from(&(eig.eigenvectors.column(k) * scale));
    }
    let m1 = m.rows(0, n).into_owned();
    let m2 = m.rows(n, n).into_owned();
    Ok(BalanceFactor {
        m,
        m1,
        m2,
        q,
        clamp_count,
    })
}
