//! SVD and eigendecomposition backed primitives: PSD square root, pseudo-inverse,
//! nuclear norm, numeric rank and the closed-form weight update.
//!
//! The weight update minimizes `tr(X D X^T)` over PSD `D` with `tr(D^+) = 1`.
//! Writing `X = U S V^T`, the minimizer is
//!
//! ```text
//! D = ||X||_* . V S^+ V^T        tr(X D X^T) = ||X||_*^2
//! ```
//!
//! i.e. `tr(A) A^+` with `A = (X^T X)^{1/2}`. It is computed from the SVD of `X`
//! directly instead of squaring into `X^T X`, which would halve the usable
//! precision of the small singular values.
//!
//! SVDs go through faer: nalgebra's SVD returns wrong singular vectors on a few
//! percent of rank-deficient inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by the symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Singular values below this are counted as zero by [`numeric_rank`] unless
/// the caller provides a threshold.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-3;

/// Default eigenvalue cut-off (relative to the largest) for an order-`n` matrix.
pub fn default_rtol(n: usize) -> f64 {
    1e-12 * n.max(1) as f64
}

fn symmetrized(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::shape("square matrix", format!("{:?}", a.shape())));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok((a + a.transpose()) * 0.5)
}

/// `V f(Lambda) V^T`.
fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(eig.eigenvalues[k]);
    }
    let out = scaled * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Symmetric PSD square root. Negative eigenvalues from roundoff are clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrized(a)?);
    Ok(spectral_map(&eig, |l| l.max(0.0).sqrt()))
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues at or
/// below `rtol * lambda_max` are treated as zero.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrized(a)?);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l));
    let cut = rtol * lmax;
    Ok(spectral_map(&eig, |l| {
        if lmax > 0.0 && l > cut {
            1.0 / l
        } else {
            0.0
        }
    }))
}

/// `x = U diag(s) Vᵀ` with `s` descending. `full` gives square `U` and `V`,
/// otherwise both have `min(m, n)` columns.
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn svd(x: &DMatrix<f64>, full: bool) -> Svd {
    let (m, n) = x.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd {
            u: DMatrix::identity(m, if full { m } else { 0 }),
            s: DVector::zeros(0),
            v: DMatrix::identity(n, if full { n } else { 0 }),
        };
    }
    let f = faer::Mat::<f64>::from_fn(m, n, |i, j| x[(i, j)]);
    let dec = if full { f.svd() } else { f.thin_svd() }.expect("SVD of a finite matrix converges");
    let (u, s, v) = (dec.U(), dec.S(), dec.V());
    Svd {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    }
}

/// Singular values of `x`, descending.
pub fn singular_values(x: &DMatrix<f64>) -> DVector<f64> {
    if x.is_empty() {
        return DVector::zeros(0);
    }
    let f = faer::Mat::<f64>::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let mut s = f
        .singular_values()
        .expect("SVD of a finite matrix converges");
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    singular_values(x).sum()
}

/// Number of singular values strictly greater than `threshold`.
pub fn numeric_rank(x: &DMatrix<f64>, threshold: f64) -> usize {
    singular_values(x)
        .iter()
        .filter(|&&s| s > threshold)
        .count()
}

/// The optimal weight matrix for a fixed iterate, kept in factored form
/// alongside its dense value.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    dense: DMatrix<f64>,
    /// Orthonormal basis of R^n (columns), right singular vectors of `X` first.
    basis: DMatrix<f64>,
    /// Singular value of `X` along each basis column (zero on the complement).
    sigma: DVector<f64>,
    nuclear: f64,
    cutoff: f64,
}

impl WeightMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn dim(&self) -> usize {
        self.dense.nrows()
    }

    /// `||X||_*` of the iterate this weight was computed from.
    pub fn nuclear_norm(&self) -> f64 {
        self.nuclear
    }

    /// Produced from the zero matrix; `D = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.nuclear == 0.0
    }

    /// Eigenvalues of `D` along the stored basis.
    fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.sigma.iter().map(move |&s| {
            if s > self.cutoff {
                self.nuclear / s
            } else {
                0.0
            }
        })
    }

    /// `tr(D^+)`; equals one for any nonzero iterate.
    pub fn pinv_trace(&self) -> f64 {
        self.weights().filter(|&w| w > 0.0).map(|w| 1.0 / w).sum()
    }

    /// `(D + delta I)^{-1/2}`, built from the stored spectrum so that the huge
    /// weights on nearly null directions never pass through a dense inverse.
    pub fn perturbed_inv_sqrt(&self, delta: f64) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (mut col, w) in scaled.column_iter_mut().zip(self.weights()) {
            col *= 1.0 / (w + delta).sqrt();
        }
        let out = &scaled * self.basis.transpose();
        (&out + out.transpose()) * 0.5
    }
}

/// Closed-form minimizer of `tr(X D X^T)` subject to `D` PSD and `tr(D^+) = 1`.
pub fn update_d(x: &DMatrix<f64>) -> WeightMatrix {
    let n = x.ncols();
    let dec = svd(x, true);
    let basis = dec.v;
    let mut sigma = DVector::zeros(n);
    sigma.rows_mut(0, dec.s.len()).copy_from(&dec.s);

    let smax = sigma.iter().fold(0.0_f64, |m, &s| m.max(s));
    let cutoff = default_rtol(n) * smax;
    let nuclear: f64 = sigma.iter().sum();
    let mut w = WeightMatrix {
        dense: DMatrix::zeros(n, n),
        basis,
        sigma,
        nuclear,
        cutoff,
    };
    if nuclear > 0.0 {
        let mut scaled = w.basis.clone();
        let weights: Vec<f64> = w.weights().collect();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= weights[k];
        }
        let dense = &scaled * w.basis.transpose();
        w.dense = (&dense + dense.transpose()) * 0.5;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn sqrt_of_simple_matrices() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!(rel(&psd_sqrt(&i).unwrap(), &i) < 1e-14);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!(rel(&psd_sqrt(&a).unwrap(), &want) < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let g = gaussian(5, 5, 1);
        let a = g.transpose() * &g;
        let r = psd_sqrt(&a).unwrap();
        assert!(rel(&(&r * &r), &a) < 1e-8);
    }

    #[test]
    fn sqrt_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(psd_sqrt(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn pinv_examples() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert!(rel(&pinv(&a, default_rtol(2)).unwrap(), &want) < 1e-14);
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(pinv(&z, default_rtol(3)).unwrap(), z);
    }

    #[test]
    fn pinv_rank_two() {
        let g = gaussian(2, 4, 8);
        let a = g.transpose() * &g;
        let p = pinv(&a, default_rtol(4)).unwrap();
        assert!(rel(&(&a * &p * &a), &a) < 1e-8);
        assert!(rel(&pinv(&p, default_rtol(4)).unwrap(), &a) < 1e-8);
    }

    #[test]
    fn weight_identity_and_diag() {
        let d = update_d(&DMatrix::identity(2, 2));
        assert!(rel(d.matrix(), &(DMatrix::identity(2, 2) * 2.0)) < 1e-14);

        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        let d = update_d(&x);
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![7.0 / 3.0, 7.0 / 4.0]));
        assert!(rel(d.matrix(), &want) < 1e-14);
        let value = (&x * d.matrix() * x.transpose()).trace();
        assert!((value - 49.0).abs() < 1e-12);
        assert!((d.pinv_trace() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weight_matches_sqrt_pinv_composition() {
        let x = gaussian(6, 4, 21);
        let a = psd_sqrt(&(x.transpose() * &x)).unwrap();
        let literal = pinv(&a, default_rtol(4)).unwrap() * a.trace();
        assert!(rel(update_d(&x).matrix(), &literal) < 1e-8);
    }

    #[test]
    fn weight_on_wide_matrix() {
        let x = gaussian(2, 5, 4);
        let d = update_d(&x);
        let value = (&x * d.matrix() * x.transpose()).trace();
        let nn = nuclear_norm(&x);
        assert!((value - nn * nn).abs() < 1e-10 * nn * nn);
        assert!((d.pinv_trace() - 1.0).abs() < 1e-10);
        // Null directions of the iterate carry no weight.
        assert_eq!(numeric_rank(d.matrix(), 1e-9), 2);
    }

    #[test]
    fn weight_of_zero_is_degenerate() {
        let d = update_d(&DMatrix::zeros(3, 2));
        assert!(d.is_degenerate());
        assert_eq!(d.matrix(), &DMatrix::zeros(2, 2));
        let s = d.perturbed_inv_sqrt(1e-6);
        assert!((s[(0, 0)] - 1e3).abs() < 1e-6);
    }

    #[test]
    fn perturbed_inv_sqrt_inverts() {
        let x = gaussian(7, 5, 2);
        let d = update_d(&x);
        let s = d.perturbed_inv_sqrt(1e-3);
        let dhat = d.matrix() + DMatrix::identity(5, 5) * 1e-3;
        let prod = &s * &dhat * &s;
        assert!(rel(&prod, &DMatrix::identity(5, 5)) < 1e-10);
    }

    #[test]
    fn norms_and_rank() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((nuclear_norm(&x) - 7.0).abs() < 1e-14);
        assert_eq!(numeric_rank(&x, DEFAULT_RANK_THRESHOLD), 2);
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(nuclear_norm(&z), 0.0);
        assert_eq!(numeric_rank(&z, DEFAULT_RANK_THRESHOLD), 0);

        let x = gaussian(20, 3, 5) * gaussian(3, 15, 6);
        let s1 = singular_values(&x)[0];
        assert_eq!(numeric_rank(&x, 1e-6 * s1), 3);
    }
}
