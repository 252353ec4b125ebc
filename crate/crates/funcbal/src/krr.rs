//! Kernel ridge regression core.
//!
//! The regularization is written as `(G + n lambda I)` throughout, so the
//! penalty matches the objective `(1/n) sum (z_i - f(A_i))^2 + lambda |f|^2`.
//! An off-by-n here would silently corrupt every downstream quantity, so the
//! convention is fixed in this module and nowhere else.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::funcrep::TreatmentSet;
use crate::kernels::{cross_gram_treatment, KernelSpec};

/// Solve `(G + n lambda I) X = B` by SPD factorization, with a perturbed
/// retry when the factorization fails.
fn ridge_solve(g: &DMatrix<f64>, lambda: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let a = g + DMatrix::identity(n, n) * (n as f64 * lambda);
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    let jitter = 1e-12 * a.trace() / n as f64;
    let a2 = a + DMatrix::identity(n, n) * jitter;
    match Cholesky::new(a2) {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::SolveFailure(format!(
            "Cholesky failed even with jitter {jitter}; likely an indefinite Gram matrix"
        ))),
    }
}

/// Hat matrix `H(lambda) = G (G + n lambda I)^-1`, computed via a symmetric
/// solve and symmetrized.
pub fn hat_matrix(g: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if lambda <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if g.nrows() != g.ncols() {
        return Err(Error::DimensionMismatch("G must be square".into()));
    }
    // (G + n lambda I)^-1 G is the transpose of H; both are symmetric in
    // exact arithmetic.
    let x = ridge_solve(g, lambda, g)?;
    let h = 0.5 * (&x + x.transpose());
    Ok(h)
}

/// Ridge coefficients and the penalty level they were fit at.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub alpha: DVector<f64>,
    pub lambda: f64,
}

impl RidgeFit {
    /// Fitted values at the training points, `G alpha`.
    pub fn fitted(&self, g: &DMatrix<f64>) -> DVector<f64> {
        g * &self.alpha
    }
}

/// Solve `(G + n lambda I) alpha = z`.
pub fn krr_fit(g: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> Result<RidgeFit> {
    if lambda <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if z.len() != g.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "G is {}x{} but z has length {}",
            g.nrows(),
            g.ncols(),
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("responses must be finite".into()));
    }
    let alpha = ridge_solve(g, lambda, &DMatrix::from_column_slice(z.len(), 1, z.as_slice()))?;
    Ok(RidgeFit {
        alpha: DVector::from_column_slice(alpha.as_slice()),
        lambda,
    })
}

/// Predictions `sum_i alpha_i K_A(a, A_i)` at new treatments.
pub fn krr_predict(
    fit: &RidgeFit,
    kernel: &KernelSpec,
    train: &TreatmentSet,
    new_items: &TreatmentSet,
) -> Result<DVector<f64>> {
    if fit.alpha.len() != train.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients but {} training treatments",
            fit.alpha.len(),
            train.len()
        )));
    }
    let k = cross_gram_treatment(train, new_items, kernel)?;
    Ok(&k * &fit.alpha)
}

/// Closed-form leave-one-out mean squared error
/// `(1/n) sum [(z_i - (Hz)_i) / (1 - H_ii)]^2`.
pub fn loocv_error(g: &DMatrix<f64>, z: &DVector<f64>, lambda: f64) -> Result<f64> {
    let h = hat_matrix(g, lambda)?;
    let n = g.nrows();
    let hz = &h * z;
    let mut acc = 0.0;
    for i in 0..n {
        let denom = 1.0 - h[(i, i)];
        if denom <= 1e-12 {
            return Err(Error::Degenerate(format!(
                "leverage H[{i},{i}] = {} too close to 1",
                h[(i, i)]
            )));
        }
        let r = (z[i] - hz[i]) / denom;
        acc += r * r;
    }
    Ok(acc / n as f64)
}
