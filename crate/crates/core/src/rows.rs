//! Closed-form per-row updates of the iterate.
//!
//! Noiseless rows solve `min x Q xᵀ  s.t.  x_J = m_J` for an SPD weight `Q`.
//! With `G = Q⁻¹` the minimizer is
//!
//! ```text
//! x = m_J (G_JJ)⁻¹ G_J·        v_J = -2 m_J (G_JJ)⁻¹
//! ```
//!
//! where `v` holds the Lagrange multipliers of the equality constraints. Noisy
//! rows solve the unconstrained `x (P_i + B) = m P_i` with `B = γ(D + δI) + αL`.
//!
//! Both batch solvers group rows by observation pattern so that rows sharing a
//! pattern share one factorization.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{Mask, MaskedMatrix};
use crate::spectral::psd_sqrt;

/// Condition estimate above which a row system is reported as singular.
pub const MAX_CONDITION: f64 = 1e14;

fn factor(a: DMatrix<f64>, row: usize) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(a).ok_or(Error::SingularRow {
        row,
        condition: f64::INFINITY,
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| {
        (lo.min(d), hi.max(d))
    });
    let condition = (hi / lo).powi(2);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularRow { row, condition });
    }
    Ok(chol)
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])])
}

fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))
}

/// Single-row constrained solve given `G = Q̂⁻¹`.
///
/// Observed coordinates of the result are exactly `m_row`; an empty
/// observation set yields the zero row.
pub fn solve_row_constrained(
    m_row: &DVector<f64>,
    observed: &[usize],
    qhat_inv: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = m_row.len();
    if qhat_inv.shape() != (n, n) {
        return Err(Error::shape(
            format!("({n}, {n})"),
            format!("{:?}", qhat_inv.shape()),
        ));
    }
    if observed.is_empty() {
        return Ok(DVector::zeros(n));
    }
    let chol = factor(submatrix(qhat_inv, observed, observed), 0)?;
    Ok(constrained_from_factor(m_row, observed, qhat_inv, &chol).0)
}

fn constrained_from_factor(
    m_row: &DVector<f64>,
    observed: &[usize],
    g: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
) -> (DVector<f64>, DVector<f64>) {
    let n = m_row.len();
    let y = chol.solve(&gather(m_row, observed));
    let mut x = DVector::zeros(n);
    for (yk, &j) in y.iter().zip(observed) {
        x.axpy(*yk, &g.column(j), 1.0);
    }
    // The constraint holds exactly in exact arithmetic; pin it against roundoff.
    let mut v = DVector::zeros(n);
    for (yk, &j) in y.iter().zip(observed) {
        x[j] = m_row[j];
        v[j] = -2.0 * yk;
    }
    (x, v)
}

/// Single-row noisy solve of `x (P_i + B) = m P_i`, where `system_base` is `B`.
pub fn solve_row_noisy(
    m_row: &DVector<f64>,
    observed: &[usize],
    system_base: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = m_row.len();
    if system_base.shape() != (n, n) {
        return Err(Error::shape(
            format!("({n}, {n})"),
            format!("{:?}", system_base.shape()),
        ));
    }
    let mut a = system_base.clone();
    let mut rhs = DVector::zeros(n);
    for &j in observed {
        a[(j, j)] += 1.0;
        rhs[j] = m_row[j];
    }
    let chol = factor((&a + a.transpose()) * 0.5, 0)?;
    Ok(chol.solve(&rhs))
}

/// Rows grouped by identical observation pattern, in ascending pattern order.
fn pattern_groups(mask: &Mask) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for i in 0..mask.nrows() {
        let pattern: Vec<usize> = (0..mask.ncols()).filter(|&j| mask[(i, j)]).collect();
        groups.entry(pattern).or_default().push(i);
    }
    groups.into_iter().collect()
}

/// `(row, x, multipliers)` for each solved row.
type SolvedRows = Vec<(usize, DVector<f64>, DVector<f64>)>;

fn run_groups<F>(mask: &Mask, parallel: bool, solve_group: F) -> Result<SolvedRows>
where
    F: Fn(&[usize], &[usize]) -> Result<SolvedRows> + Sync,
{
    let groups = pattern_groups(mask);
    let solved: Vec<_> = if parallel {
        groups
            .par_iter()
            .map(|(p, rows)| solve_group(p, rows))
            .collect()
    } else {
        groups
            .iter()
            .map(|(p, rows)| solve_group(p, rows))
            .collect()
    };
    let mut out = Vec::with_capacity(mask.nrows());
    for group in solved {
        out.extend(group?);
    }
    Ok(out)
}

fn assemble(
    nrows: usize,
    ncols: usize,
    rows: Vec<(usize, DVector<f64>, DVector<f64>)>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut x = DMatrix::zeros(nrows, ncols);
    let mut v = DMatrix::zeros(nrows, ncols);
    for (i, xi, vi) in rows {
        x.set_row(i, &xi.transpose());
        v.set_row(i, &vi.transpose());
    }
    (x, v)
}

/// Batched constrained solver sharing one `G = Q̂⁻¹ = B Bᵀ` across all rows.
///
/// Rows are solved from a QR factorization of `B_J·ᵀ` rather than from
/// `G_JJ` directly, which keeps the condition number of the factored system
/// at the square root of that of `G_JJ`.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    root: DMatrix<f64>,
}

impl ConstrainedSystem {
    /// `root` is any `B` with `B Bᵀ = Q̂⁻¹`.
    pub fn from_root(root: DMatrix<f64>) -> Self {
        Self { root }
    }

    pub fn from_inverse(qhat_inv: &DMatrix<f64>) -> Result<Self> {
        Ok(Self::from_root(psd_sqrt(qhat_inv)?))
    }

    /// Takes the inverse square root of an SPD `Q̂`.
    pub fn from_weight(qhat: &DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new((qhat + qhat.transpose()) * 0.5);
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::SingularRow {
                row: 0,
                condition: f64::INFINITY,
            });
        }
        let mut scaled = eig.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col /= eig.eigenvalues[k].sqrt();
        }
        Ok(Self::from_root(&scaled * eig.eigenvectors.transpose()))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        &self.root * self.root.transpose()
    }

    /// Solves every row; returns the iterate and the multiplier matrix.
    pub fn solve(
        &self,
        problem: &MaskedMatrix,
        parallel: bool,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = problem.ncols();
        if self.root.nrows() != n {
            return Err(Error::shape(
                format!("({n}, _)"),
                format!("{:?}", self.root.shape()),
            ));
        }
        let values = problem.values();
        let rows = run_groups(problem.mask(), parallel, |pattern, rows| {
            if pattern.is_empty() {
                return Ok(rows
                    .iter()
                    .map(|&i| (i, DVector::zeros(n), DVector::zeros(n)))
                    .collect());
            }
            let bjt = DMatrix::from_fn(self.root.ncols(), pattern.len(), |r, c| {
                self.root[(pattern[c], r)]
            });
            let qr = bjt.qr();
            let r = qr.r();
            let condition = triangular_condition(&r);
            if !(condition <= MAX_CONDITION) {
                return Err(Error::SingularRow {
                    row: rows[0],
                    condition,
                });
            }
            let q = qr.q();
            let rt = r.transpose();
            Ok(rows
                .iter()
                .map(|&i| {
                    let m_j = DVector::from_iterator(
                        pattern.len(),
                        pattern.iter().map(|&j| values[(i, j)]),
                    );
                    let y = rt
                        .solve_lower_triangular(&m_j)
                        .expect("nonzero diagonal checked");
                    let mut x = &self.root * (&q * &y);
                    let w = r
                        .solve_upper_triangular(&y)
                        .expect("nonzero diagonal checked");
                    let mut v = DVector::zeros(n);
                    for (k, &j) in pattern.iter().enumerate() {
                        x[j] = m_j[k];
                        v[j] = -2.0 * w[k];
                    }
                    (i, x, v)
                })
                .collect())
        })?;
        Ok(assemble(problem.nrows(), n, rows))
    }
}

fn triangular_condition(r: &DMatrix<f64>) -> f64 {
    let (lo, hi) = r
        .diagonal()
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| {
            (lo.min(d.abs()), hi.max(d.abs()))
        });
    hi / lo
}

/// Batched noisy solver in whitened coordinates.
///
/// With `S = (D + δI)^{-1/2}` the row system `P_i + γ(D + δI) + αL` equals
/// `S⁻¹ (γI + S(P_i + αL)S) S⁻¹`, so each row needs one factorization of the
/// well-conditioned inner matrix only.
#[derive(Debug, Clone)]
pub struct NoisySystem {
    whitener: DMatrix<f64>,
    /// `γI + α S L S`.
    inner: DMatrix<f64>,
}

impl NoisySystem {
    pub fn new(
        whitener: DMatrix<f64>,
        gamma: f64,
        laplacian: Option<(&DMatrix<f64>, f64)>,
    ) -> Self {
        let n = whitener.nrows();
        let mut inner = DMatrix::identity(n, n) * gamma;
        if let Some((l, alpha)) = laplacian {
            let sls = &whitener * l * &whitener;
            inner += (&sls + sls.transpose()) * (0.5 * alpha);
        }
        Self { whitener, inner }
    }

    pub fn solve(&self, problem: &MaskedMatrix, parallel: bool) -> Result<DMatrix<f64>> {
        let n = problem.ncols();
        let s = &self.whitener;
        let values = problem.values();
        let rows = run_groups(problem.mask(), parallel, |pattern, rows| {
            if pattern.is_empty() {
                return Ok(rows
                    .iter()
                    .map(|&i| (i, DVector::zeros(n), DVector::zeros(0)))
                    .collect());
            }
            let s_rows = DMatrix::from_fn(pattern.len(), n, |r, c| s[(pattern[r], c)]);
            let k = &self.inner + s_rows.transpose() * &s_rows;
            let chol = factor((&k + k.transpose()) * 0.5, rows[0])?;
            Ok(rows
                .iter()
                .map(|&i| {
                    let m_j = DVector::from_iterator(
                        pattern.len(),
                        pattern.iter().map(|&j| values[(i, j)]),
                    );
                    let z = chol.solve(&(s_rows.transpose() * m_j));
                    (i, s * z, DVector::zeros(0))
                })
                .collect())
        })?;
        let mut x = DMatrix::zeros(problem.nrows(), n);
        for (i, xi, _) in rows {
            x.set_row(i, &xi.transpose());
        }
        Ok(x)
    }
}

/// Frobenius norm of the Lagrangian gradient `2 X Q + V ⊙ P`.
pub fn kkt_residual(
    x: &DMatrix<f64>,
    multipliers: &DMatrix<f64>,
    mask: &Mask,
    weight: &DMatrix<f64>,
) -> f64 {
    let mut grad = x * weight * 2.0;
    for ((g, &v), &p) in grad.iter_mut().zip(multipliers.iter()).zip(mask.iter()) {
        if p {
            *g += v;
        }
    }
    grad.norm()
}

/// Frobenius norm of the gradient of `‖(X - M) ⊙ P‖² + tr(X Q Xᵀ)`, where the
/// caller folds `γD + αL` into `weight`.
pub fn noisy_gradient_norm(x: &DMatrix<f64>, problem: &MaskedMatrix, weight: &DMatrix<f64>) -> f64 {
    let mut grad = x * weight * 2.0;
    for (((g, &xv), &mv), &p) in grad
        .iter_mut()
        .zip(x.iter())
        .zip(problem.values().iter())
        .zip(problem.mask().iter())
    {
        if p {
            *g += 2.0 * (xv - mv);
        }
    }
    grad.norm()
}
