//! Independent reference solvers used to check the closed-form updates.
//!
//! None of these share code paths with the solvers they verify: the nuclear
//! norm oracle is a plain ADMM with singular value thresholding, and the row
//! oracles enumerate supports or eliminate variables directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::MaskedMatrix;
use crate::spectral::svd;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Initial ADMM penalty.
    pub rho: f64,
    pub max_iters: usize,
    /// Relative primal and dual residual tolerance.
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 5000,
            tol: 1e-8,
        }
    }
}

const ADAPT_ITERS: usize = 500;

/// Proximal map of `tau ||.||_*`: singular values shrunk by `tau`.
pub fn svt_shrink(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if tau <= 0.0 {
        return x.clone();
    }
    let mut dec = svd(x, false);
    for s in dec.s.iter_mut() {
        *s = (*s - tau).max(0.0);
    }
    let mut us = dec.u;
    for (mut col, &s) in us.column_iter_mut().zip(dec.s.iter()) {
        col *= s;
    }
    us * dec.v.transpose()
}

/// `min ||X||_*  s.t.  X ⊙ P = M` by ADMM on the split `X = Z`.
///
/// The returned matrix matches the observations exactly.
pub fn nuclear_min_constrained(problem: &MaskedMatrix, cfg: &OracleConfig) -> Result<DMatrix<f64>> {
    if !(cfg.rho > 0.0 && cfg.tol > 0.0 && cfg.max_iters > 0) {
        return Err(Error::Config("oracle parameters must be positive".into()));
    }
    let mask = problem.mask();
    let observed = problem.values();
    let project = |mut x: DMatrix<f64>| {
        for ((v, &p), &m) in x.iter_mut().zip(mask.iter()).zip(observed.iter()) {
            if p {
                *v = m;
            }
        }
        x
    };

    let mut rho = cfg.rho;
    let mut x = observed.clone();
    let mut dual = DMatrix::zeros(x.nrows(), x.ncols());
    let (mut primal_res, mut dual_res) = (f64::INFINITY, f64::INFINITY);
    for iteration in 0..cfg.max_iters {
        let z = svt_shrink(&(&x + &dual / rho), 1.0 / rho);
        let x_next = project(&z - &dual / rho);
        let gap = &x_next - &z;
        dual += &gap * rho;
        primal_res = gap.norm();
        dual_res = rho * (&x_next - &x).norm();
        x = x_next;

        let scale = x.norm().max(z.norm()).max(f64::MIN_POSITIVE);
        if primal_res <= cfg.tol * scale && dual_res <= cfg.tol * dual.norm().max(scale) {
            return Ok(x);
        }
        // Penalty balancing only during warm-up; a fixed penalty keeps the convergence guarantee.
        if iteration >= ADAPT_ITERS {
            continue;
        }
        if primal_res > 10.0 * dual_res {
            rho *= 2.0;
        } else if dual_res > 10.0 * primal_res {
            rho /= 2.0;
        }
    }
    Err(Error::OracleNotConverged {
        iterations: cfg.max_iters,
        primal: primal_res,
        dual: dual_res,
    })
}

/// Exact minimizer of `Σ_j l_j s_j + μ² Σ_j s_j²` over the probability simplex,
/// found by solving the stationarity system on every support and keeping the
/// best feasible one. Exponential in `l.len()`; meant for at most ~12 entries.
pub fn brute_force_row_qp(l: &DVector<f64>, mu_sq: f64) -> Result<DVector<f64>> {
    let n = l.len();
    if n == 0 || n > 20 {
        return Err(Error::Config(format!(
            "support enumeration over {n} entries"
        )));
    }
    if !(mu_sq > 0.0) {
        return Err(Error::Config("mu^2 must be positive".into()));
    }
    let objective = |s: &DVector<f64>| l.dot(s) + mu_sq * s.norm_squared();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for bits in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|&j| bits >> j & 1 == 1).collect();
        // l_j + 2 mu^2 s_j = lambda on the support, entries summing to one.
        let lambda =
            (2.0 * mu_sq + support.iter().map(|&j| l[j]).sum::<f64>()) / support.len() as f64;
        let mut s = DVector::zeros(n);
        for &j in &support {
            s[j] = (lambda - l[j]) / (2.0 * mu_sq);
        }
        if s.iter().any(|&v| v < -1e-14) {
            continue;
        }
        s.apply(|v| *v = v.max(0.0));
        let value = objective(&s);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, s));
        }
    }
    Ok(best.expect("singleton supports are always feasible").1)
}

/// Exact minimizer of `x Q xᵀ` subject to `x_J = m_J`, by eliminating the
/// constrained coordinates and solving the reduced system with LU.
pub fn brute_force_constrained_row(
    m_obs: &[f64],
    observed: &[usize],
    q: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = q.nrows();
    if m_obs.len() != observed.len() {
        return Err(Error::shape(observed.len(), m_obs.len()));
    }
    let free: Vec<usize> = (0..n).filter(|j| !observed.contains(j)).collect();
    let mut x = DVector::zeros(n);
    for (&j, &m) in observed.iter().zip(m_obs) {
        x[j] = m;
    }
    if free.is_empty() {
        return Ok(x);
    }
    let q_ff = DMatrix::from_fn(free.len(), free.len(), |a, b| q[(free[a], free[b])]);
    let rhs = DVector::from_fn(free.len(), |a, _| {
        -observed
            .iter()
            .zip(m_obs)
            .map(|(&j, &m)| q[(free[a], j)] * m)
            .sum::<f64>()
    });
    let sol = q_ff.lu().solve(&rhs).ok_or(Error::SingularRow {
        row: 0,
        condition: f64::INFINITY,
    })?;
    for (a, &j) in free.iter().enumerate() {
        x[j] = sol[a];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Mask;
    use crate::spectral::{nuclear_norm, singular_values};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn shrink_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(5, 4, &mut rng);
        assert_eq!(svt_shrink(&x, 0.0), x);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((svt_shrink(&d, 2.0) - want).amax() < 1e-14);
        let s1 = singular_values(&x)[0];
        assert!(svt_shrink(&x, s1 + 1.0).amax() < 1e-14);
    }

    #[test]
    fn shrink_is_proximal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(6, 4, &mut rng);
        let tau = 0.8;
        let prox = |z: &DMatrix<f64>| 0.5 * (z - &x).norm_squared() + tau * nuclear_norm(z);
        let z = svt_shrink(&x, tau);
        let best = prox(&z);
        for _ in 0..100 {
            let p = gaussian(6, 4, &mut rng) * 0.05;
            assert!(prox(&(&z + p)) >= best - 1e-12);
        }
    }

    #[test]
    fn fully_observed_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gaussian(4, 3, &mut rng);
        let p = MaskedMatrix::fully_observed(m.clone()).unwrap();
        let x = nuclear_min_constrained(&p, &OracleConfig::default()).unwrap();
        assert_eq!(x, m);
    }

    #[test]
    fn two_by_two_completion() {
        // For v < 4 the nuclear norm of [[1,2],[2,v]] is sqrt((v-1)^2 + 16), so the
        // minimum-norm fill is v = 1 (norm 4), not the rank-one fill v = 4 (norm 5).
        let norm_at = |v: f64| nuclear_norm(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, v]));
        let grid_best = (0..=8000)
            .map(|i| -2.0 + i as f64 * 1e-3)
            .min_by(|a, b| norm_at(*a).total_cmp(&norm_at(*b)))
            .unwrap();
        assert!((grid_best - 1.0).abs() < 2e-3);
        assert!((norm_at(4.0) - 5.0).abs() < 1e-12);

        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 0.0]);
        let mask = Mask::from_row_slice(2, 2, &[true, true, true, false]);
        let p = MaskedMatrix::new(values, mask).unwrap();
        let x = nuclear_min_constrained(&p, &OracleConfig::default()).unwrap();
        assert!((x[(1, 1)] - grid_best).abs() < 2e-3, "got {}", x[(1, 1)]);
        assert!((nuclear_norm(&x) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn recovers_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = gaussian(20, 1, &mut rng) * gaussian(1, 16, &mut rng);
        let mask = crate::problem::MaskSpec::random(0.3, 17)
            .build(20, 16)
            .unwrap();
        let p = MaskedMatrix::new(truth.clone(), mask.clone()).unwrap();
        let x = nuclear_min_constrained(&p, &OracleConfig::default()).unwrap();
        let holdout = mask.map(|b| !b);
        let err = crate::problem::mse(&x, &truth, &holdout).unwrap();
        assert!(err < 1e-4, "mse {err}");
        assert_eq!(p.constraint_residual(&x), 0.0);
        // Beats the zero fill.
        assert!(nuclear_norm(&x) <= nuclear_norm(p.values()) + 1e-9);
    }

    #[test]
    fn row_qp_singleton_and_projected_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let l = DVector::from_fn(6, |_, _| rand::Rng::random_range(&mut rng, 0.0..5.0));
            let mu_sq = rand::Rng::random_range(&mut rng, 0.1..4.0);
            let s = brute_force_row_qp(&l, mu_sq).unwrap();
            let pg = projected_gradient(&l, mu_sq);
            assert!((&s - &pg).amax() < 1e-8);
        }
    }

    /// Projected gradient on the simplex, run to a tight tolerance.
    fn projected_gradient(l: &DVector<f64>, mu_sq: f64) -> DVector<f64> {
        let n = l.len();
        let mut s = DVector::from_element(n, 1.0 / n as f64);
        let step = 1.0 / (2.0 * mu_sq);
        for _ in 0..100_000 {
            let grad = l + &s * (2.0 * mu_sq);
            let next = project_simplex(&(&s - grad * step));
            let moved = (&next - &s).amax();
            s = next;
            if moved < 1e-14 {
                break;
            }
        }
        s
    }

    fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
        let mut u: Vec<f64> = v.iter().copied().collect();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut css = 0.0;
        let mut theta = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            css += ui;
            let t = (css - 1.0) / (i + 1) as f64;
            if ui - t > 0.0 {
                theta = t;
            }
        }
        v.map(|x| (x - theta).max(0.0))
    }

    #[test]
    fn constrained_row_trivial_cases() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let x = brute_force_constrained_row(&[1.0, 2.0, 3.0], &[0, 1, 2], &q).unwrap();
        assert_eq!(x, DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let x = brute_force_constrained_row(&[4.0], &[1], &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(x, DVector::from_vec(vec![0.0, 4.0, 0.0]));
    }
}
