//! The covariate-balancing objective and its box-constrained minimization.
//!
//! The objective is `(1/n) sigma_max(D(w))^2 + eta * sum_j w_j^2 r_j` with
//! `D(w) = H diag(w) M1 - M2`, `H = G_A (G_A + n lambda I)^-1` and
//! `r_j = (1/n) sum_i H_ij^2`. The spectral term is evaluated matrix-free:
//! `D(w)` is never formed, only its action on vectors, and the top singular
//! pair comes from a residual-controlled block power iteration with a dense
//! eigendecomposition fallback.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::BalanceFactor;
use crate::kernels::GramSet;
use crate::krr::hat_matrix;

/// Frozen inputs to the weight optimization.
#[derive(Debug, Clone)]
pub struct BalanceProblem {
    /// Hat matrix `G_A (G_A + n lambda I)^-1` (symmetric).
    pub h: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    /// `r_j = (1/n) sum_i H_ij^2`.
    pub r: DVector<f64>,
    pub n: usize,
    pub q: usize,
    pub lambda: f64,
    pub eta: f64,
    /// Upper box bound; `f64::INFINITY` means no upper bound.
    pub box_bound: f64,
}

/// Solved weights plus diagnostics.
#[derive(Debug, Clone)]
pub struct WeightSolution {
    pub w_hat: DVector<f64>,
    pub objective: f64,
    pub q_part: f64,
    pub r_part: f64,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: f64,
    /// Set when the top singular value at the solution has a near-zero gap,
    /// i.e. the objective is nonsmooth there.
    pub degenerate_top_pair: bool,
}

/// Build a [`BalanceProblem`], precomputing `H` and `r` once.
pub fn build_problem(
    g: &GramSet,
    f: &BalanceFactor,
    lambda: f64,
    eta: f64,
    box_bound: f64,
) -> Result<BalanceProblem> {
    let n = g.n;
    if f.m1.nrows() != n || f.m2.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows per block but the Gram set has n = {n}",
            f.m1.nrows()
        )));
    }
    if eta < 0.0 {
        return Err(Error::InvalidInput(format!("eta must be >= 0, got {eta}")));
    }
    if !(box_bound > 0.0) {
        return Err(Error::InvalidInput(format!(
            "box bound must be positive, got {box_bound}"
        )));
    }
    let h = hat_matrix(&g.g_a, lambda)?;
    let r = DVector::from_iterator(
        n,
        h.column_iter().map(|c| c.norm_squared() / n as f64),
    );
    Ok(BalanceProblem {
        h,
        m1: f.m1.clone(),
        m2: f.m2.clone(),
        r,
        n,
        q: f.q,
        lambda,
        eta,
        box_bound,
    })
}

/// Top singular triple information for `D(w)`.
struct TopPair {
    sigma: f64,
    /// Left singular vector (length n).
    u: DVector<f64>,
    /// `M1 v` where `v` is the right singular vector (length n).
    m1v: DVector<f64>,
    /// Relative gap `(sigma_1 - sigma_2) / sigma_1` estimate, when available.
    rel_gap: Option<f64>,
}

/// `D(w) x = H (w ∘ (M1 x)) - M2 x` for a block of vectors.
fn apply_d(p: &BalanceProblem, w: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = &p.m1 * x;
    for (j, mut row) in t.row_iter_mut().enumerate() {
        row *= w[j];
    }
    &p.h * t - &p.m2 * x
}

/// `D(w)^T y = M1^T (w ∘ (H y)) - M2^T y` for a block of vectors.
fn apply_dt(p: &BalanceProblem, w: &DVector<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = &p.h * y;
    for (j, mut row) in t.row_iter_mut().enumerate() {
        row *= w[j];
    }
    p.m1.transpose() * t - p.m2.transpose() * y
}

const POWER_BLOCK: usize = 3;
const POWER_MAX_ITER: usize = 600;
const POWER_RESID_TOL: f64 = 1e-10;
const DEGENERATE_GAP: f64 = 1e-10;
/// Up to this size the dense eigendecomposition is cheap and robust to
/// clustered top singular values; the block power iteration takes over for
/// larger problems.
const DENSE_CUTOFF: usize = 400;

/// Top singular pair of `D(w)` via block power iteration on `D D^T`.
/// The residual `||D D^T u - theta u|| <= tol * theta` bounds the error of
/// `theta` as an eigenvalue estimate. Falls back to a dense
/// eigendecomposition of `D D^T` when the iteration stalls.
fn top_singular_pair(
    p: &BalanceProblem,
    w: &DVector<f64>,
    warm: Option<&DMatrix<f64>>,
) -> Result<(TopPair, DMatrix<f64>)> {
    let n = p.n;
    let k = POWER_BLOCK.min(n);
    if n <= DENSE_CUTOFF {
        let block = warm.cloned().unwrap_or_else(|| DMatrix::zeros(0, 0));
        return dense_top_pair(p, w, block);
    }
    let mut block = match warm {
        Some(b) if b.nrows() == n && b.ncols() == k => b.clone(),
        _ => {
            // deterministic, well-spread start block
            DMatrix::from_fn(n, k, |i, j| {
                let x = (i as f64 + 1.0) * (j as f64 + 1.0) * 0.7390851332151607;
                (x - x.floor()) - 0.5 + if i == j { 1.0 } else { 0.0 }
            })
        }
    };
    orthonormalize(&mut block);

    for _ in 0..POWER_MAX_ITER {
        let z = apply_d(p, w, &apply_dt(p, w, &block));
        // Rayleigh estimate and residual for the leading column.
        let u = block.column(0);
        let zu = z.column(0);
        let theta = u.dot(&zu);
        let resid = (zu - u * theta).norm();
        if theta <= 0.0 {
            // D(w) == 0: sigma_max is exactly zero.
            if z.amax() == 0.0 {
                let pair = TopPair {
                    sigma: 0.0,
                    u: DVector::zeros(n),
                    m1v: DVector::zeros(n),
                    rel_gap: None,
                };
                return Ok((pair, block));
            }
        } else if resid <= POWER_RESID_TOL * theta {
            let sigma = theta.sqrt();
            let u = block.column(0).into_owned();
            let dtu = apply_dt(p, w, &DMatrix::from_column_slice(n, 1, u.as_slice()));
            let v = DVector::from_column_slice(dtu.as_slice()) / sigma;
            let m1v = &p.m1 * &v;
            let theta2 = if k > 1 {
                block.column(1).dot(&z.column(1)).max(0.0)
            } else {
                0.0
            };
            let rel_gap = if theta > 0.0 {
                Some((sigma - theta2.sqrt()) / sigma)
            } else {
                None
            };
            return Ok((
                TopPair {
                    sigma,
                    u,
                    m1v,
                    rel_gap,
                },
                block,
            ));
        }
        block = z;
        orthonormalize(&mut block);
    }
    dense_top_pair(p, w, block)
}

fn orthonormalize(block: &mut DMatrix<f64>) {
    // modified Gram-Schmidt; re-seed columns that collapse
    let (n, k) = (block.nrows(), block.ncols());
    for j in 0..k {
        for i in 0..j {
            let proj = block.column(i).dot(&block.column(j));
            let col_i = block.column(i).into_owned();
            let mut col_j = block.column_mut(j);
            col_j.axpy(-proj, &col_i, 1.0);
        }
        let norm = block.column(j).norm();
        if norm <= 1e-300 {
            for i in 0..n {
                block[(i, j)] = if i % (j + 2) == 0 { 1.0 } else { -0.3 };
            }
            let norm = block.column(j).norm();
            block.column_mut(j).scale_mut(1.0 / norm);
        } else {
            block.column_mut(j).scale_mut(1.0 / norm);
        }
    }
}

/// Dense path: form `E = D D^T` once, then warm-started subspace iteration
/// with Rayleigh-Ritz extraction (robust to clustered top singular values);
/// a full eigendecomposition is the fallback when the iteration stalls.
fn dense_top_pair(
    p: &BalanceProblem,
    w: &DVector<f64>,
    warm: DMatrix<f64>,
) -> Result<(TopPair, DMatrix<f64>)> {
    let n = p.n;
    let d = explicit_d(p, w);
    let e = &d * d.transpose();
    let k = 6.min(n);
    let mut b = if warm.nrows() == n && warm.ncols() == k {
        warm
    } else {
        DMatrix::from_fn(n, k, |i, j| {
            let x = (i as f64 + 1.0) * (j as f64 + 1.0) * 0.7390851332151607;
            (x - x.floor()) - 0.5 + if i == j { 1.0 } else { 0.0 }
        })
    };
    orthonormalize(&mut b);

    let scale = e.diagonal().amax().max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let z = &e * &b; // E B
        let s = b.transpose() * &z; // Ritz projection
        let ritz = s.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &c| {
            ritz.eigenvalues[c]
                .partial_cmp(&ritz.eigenvalues[a])
                .unwrap()
        });
        let theta1 = ritz.eigenvalues[order[0]];
        let r1 = ritz.eigenvectors.column(order[0]);
        let u = &b * r1;
        let eu = &z * r1;
        let resid = (&eu - &u * theta1).norm();
        if resid <= 1e-11 * theta1.abs().max(1e-13 * scale) {
            // rotate the block onto the Ritz basis before returning it as
            // the warm start for the next evaluation
            let mut rot = DMatrix::zeros(k, k);
            for (c, &idx) in order.iter().enumerate() {
                rot.set_column(c, &ritz.eigenvectors.column(idx));
            }
            let mut next = &b * rot;
            orthonormalize(&mut next);
            let theta2 = if k > 1 {
                ritz.eigenvalues[order[1]].max(0.0)
            } else {
                0.0
            };
            return Ok((finish_pair(p, &d, theta1, u, theta2), next));
        }
        b = z;
        orthonormalize(&mut b);
    }

    // stalled: full eigendecomposition
    let eig = e.symmetric_eigen();
    let mut top = 0;
    let mut second_val = f64::NEG_INFINITY;
    for i in 1..n {
        if eig.eigenvalues[i] > eig.eigenvalues[top] {
            second_val = eig.eigenvalues[top].max(second_val);
            top = i;
        } else {
            second_val = second_val.max(eig.eigenvalues[i]);
        }
    }
    let theta = eig.eigenvalues[top];
    let u = eig.eigenvectors.column(top).into_owned();
    Ok((
        finish_pair(p, &d, theta, u, second_val.max(0.0)),
        b,
    ))
}

fn finish_pair(
    p: &BalanceProblem,
    d: &DMatrix<f64>,
    theta: f64,
    u: DVector<f64>,
    theta2: f64,
) -> TopPair {
    let n = p.n;
    let sigma = theta.max(0.0).sqrt();
    if sigma > 0.0 {
        let v = (d.transpose() * &u) / sigma;
        let rel_gap = Some((sigma - theta2.sqrt()) / sigma);
        TopPair {
            sigma,
            u,
            m1v: &p.m1 * v,
            rel_gap,
        }
    } else {
        TopPair {
            sigma: 0.0,
            u: DVector::zeros(n),
            m1v: DVector::zeros(n),
            rel_gap: None,
        }
    }
}

/// Explicit `D(w) = H diag(w) M1 - M2` (used by the dense fallback and by
/// test oracles).
pub fn explicit_d(p: &BalanceProblem, w: &DVector<f64>) -> DMatrix<f64> {
    let mut wm1 = p.m1.clone();
    for (j, mut row) in wm1.row_iter_mut().enumerate() {
        row *= w[j];
    }
    &p.h * wm1 - &p.m2
}

/// Objective value split into its two parts: `value = Q_part + eta * R_part`.
pub fn balance_objective(p: &BalanceProblem, w: &DVector<f64>) -> Result<(f64, f64, f64)> {
    check_w(p, w)?;
    let (pair, _) = top_singular_pair(p, w, None)?;
    let q_part = pair.sigma * pair.sigma / p.n as f64;
    let r_part = r_quadratic(p, w);
    Ok((q_part + p.eta * r_part, q_part, r_part))
}

fn r_quadratic(p: &BalanceProblem, w: &DVector<f64>) -> f64 {
    w.iter()
        .zip(p.r.iter())
        .map(|(wj, rj)| wj * wj * rj)
        .sum()
}

fn check_w(p: &BalanceProblem, w: &DVector<f64>) -> Result<()> {
    if w.len() != p.n {
        return Err(Error::DimensionMismatch(format!(
            "w has length {} but n = {}",
            w.len(),
            p.n
        )));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite".into()));
    }
    Ok(())
}

/// (Sub)gradient of the objective at `w`. Where the top singular value is
/// simple this is the gradient; at a degenerate top pair it returns a
/// subgradient element built from one top pair.
pub fn balance_gradient(p: &BalanceProblem, w: &DVector<f64>) -> Result<DVector<f64>> {
    check_w(p, w)?;
    let (pair, _) = top_singular_pair(p, w, None)?;
    Ok(gradient_from_pair(p, w, &pair))
}

fn gradient_from_pair(p: &BalanceProblem, w: &DVector<f64>, pair: &TopPair) -> DVector<f64> {
    let hu = &p.h * &pair.u; // H symmetric
    let scale = 2.0 * pair.sigma / p.n as f64;
    DVector::from_fn(p.n, |j, _| {
        scale * hu[j] * pair.m1v[j] + 2.0 * p.eta * w[j] * p.r[j]
    })
}

/// Options for [`solve_weights`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Stop when the projected-gradient infinity norm is below
    /// `gtol * (1 + |f|) / n`.
    pub gtol: f64,
    pub max_iter: usize,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-6,
            max_iter: 500,
            memory: 10,
        }
    }
}

fn project(p: &BalanceProblem, w: &mut DVector<f64>) {
    for v in w.iter_mut() {
        *v = v.clamp(0.0, p.box_bound);
    }
}

fn projected_gradient(p: &BalanceProblem, w: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(p.n, |i, _| {
        if w[i] <= 0.0 {
            g[i].min(0.0)
        } else if w[i] >= p.box_bound {
            g[i].max(0.0)
        } else {
            g[i]
        }
    })
}

/// Minimize the balancing objective over the box `[0, L]^n` with a projected
/// L-BFGS iteration (two-loop recursion, Armijo backtracking along the
/// projected arc). The objective is convex; the spectral term is nonsmooth
/// on a measure-zero set, where the top-pair subgradient is used unsmoothed.
pub fn solve_weights(
    p: &BalanceProblem,
    init: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<WeightSolution> {
    check_w(p, init)?;
    let n = p.n;
    let mut w = init.clone();
    project(p, &mut w);

    let eval = |w: &DVector<f64>,
                warm: Option<&DMatrix<f64>>|
     -> Result<(f64, f64, f64, TopPair, DMatrix<f64>)> {
        let (pair, block) = top_singular_pair(p, w, warm)?;
        let q_part = pair.sigma * pair.sigma / n as f64;
        let r_part = r_quadratic(p, w);
        Ok((q_part + p.eta * r_part, q_part, r_part, pair, block))
    };

    let (mut f, mut q_part, mut r_part, mut pair, block) = eval(&w, None)?;
    let mut warm = Some(block);
    let mut g = gradient_from_pair(p, &w, &pair);

    // L-BFGS history
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut converged = false;
    let mut iterations = 0;
    let mut pg_norm = projected_gradient(p, &w, &g).amax();
    let mut stall_count = 0usize;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let pg = projected_gradient(p, &w, &g);
        pg_norm = pg.amax();
        // Per-coordinate scale: each weight's influence on the averaged
        // objective shrinks like 1/n, so the gradient threshold must too,
        // or large problems stop before making any progress.
        if pg_norm <= opts.gtol * (1.0 + f.abs()) / n as f64 {
            converged = true;
            iterations = iter;
            break;
        }

        // direction + line search; if the quasi-Newton direction yields no
        // Armijo step, drop the curvature history (often stale across a
        // nonsmooth kink) and retry once with steepest descent
        let mut accepted = false;
        let mut w_new = w.clone();
        let mut state_new = None;
        for attempt in 0..2 {
            // two-loop recursion on the full gradient
            let mut d = -g.clone();
            let m = s_hist.len();
            let mut alphas = vec![0.0; m];
            for i in (0..m).rev() {
                alphas[i] = rho_hist[i] * s_hist[i].dot(&d);
                d.axpy(-alphas[i], &y_hist[i], 1.0);
            }
            if m > 0 {
                let last = m - 1;
                let gamma = s_hist[last].dot(&y_hist[last]) / y_hist[last].norm_squared();
                d *= gamma;
            }
            for i in 0..m {
                let beta = rho_hist[i] * y_hist[i].dot(&d);
                d.axpy(alphas[i] - beta, &s_hist[i], 1.0);
            }
            if d.dot(&g) >= 0.0 {
                d = -g.clone(); // safeguard: fall back to steepest descent
            }

            // Armijo backtracking along the projected arc
            let mut t = 1.0;
            for _ in 0..50 {
                w_new = &w + &d * t;
                project(p, &mut w_new);
                let step = &w_new - &w;
                if step.amax() == 0.0 {
                    break;
                }
                let (f_t, q_t, r_t, pair_t, block_t) = eval(&w_new, warm.as_ref())?;
                if f_t <= f + 1e-4 * g.dot(&step) {
                    state_new = Some((f_t, q_t, r_t, pair_t, block_t));
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted || s_hist.is_empty() {
                break;
            }
            if attempt == 0 {
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
            }
        }
        if !accepted {
            // No descent step found even along steepest descent: on a convex
            // objective with a nonsmooth spectral term this means we are at
            // numerical optimality.
            converged = true;
            break;
        }
        let (f_t, q_t, r_t, pair_t, block_t) = state_new.unwrap();
        // negligible progress on a convex objective: numerically optimal
        // once it persists for a few steps
        if f - f_t <= 1e-10 * (1.0 + f.abs()) {
            stall_count += 1;
        } else {
            stall_count = 0;
        }
        let stalled = stall_count >= 3;
        let g_new = gradient_from_pair(p, &w_new, &pair_t);

        let s = &w_new - &w;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }

        w = w_new;
        f = f_t;
        q_part = q_t;
        r_part = r_t;
        pair = pair_t;
        g = g_new;
        warm = Some(block_t);
        if stalled {
            converged = true;
            break;
        }
    }

    let degenerate = matches!(pair.rel_gap, Some(gap) if gap < DEGENERATE_GAP);
    Ok(WeightSolution {
        w_hat: w,
        objective: f,
        q_part,
        r_part,
        iterations,
        converged,
        projected_gradient_norm: pg_norm,
        degenerate_top_pair: degenerate,
    })
}
