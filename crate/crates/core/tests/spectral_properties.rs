use nalgebra::{DMatrix, DVector};
use ncarl::oracle::{brute_force_constrained_row, brute_force_row_qp};
use ncarl::rows::ConstrainedSystem;
use ncarl::spectral::default_rtol;
use ncarl::{build_graph, nuclear_norm, pinv, update_d, MaskedMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0))
}

fn low_rank(rows: usize, cols: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    matrix(rows, rank, seed) * matrix(rank, cols, seed + 1)
}

proptest! {
    #[test]
    fn weight_attains_squared_nuclear_norm(m in 1usize..10, n in 1usize..10, seed in any::<u64>()) {
        let x = matrix(m, n, seed);
        let d = update_d(&x);
        let value = (&x * d.matrix() * x.transpose()).trace();
        let nn = nuclear_norm(&x);
        prop_assert!((value - nn * nn).abs() <= 1e-9 * nn * nn);
        prop_assert!((d.pinv_trace() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn no_feasible_weight_does_better(n in 1usize..7, m in 1usize..9, seed in any::<u64>()) {
        let x = matrix(m, n, seed);
        let nn2 = nuclear_norm(&x).powi(2);
        let a = matrix(n, n, seed ^ 0xabcd);
        let mut d = &a * a.transpose() + DMatrix::identity(n, n) * 1e-3;
        let scale = d.clone().try_inverse().unwrap().trace();
        d *= scale;
        let value = (&x * &d * x.transpose()).trace();
        prop_assert!(value >= nn2 * (1.0 - 1e-9));
    }

    #[test]
    fn weight_is_scale_free(m in 2usize..9, n in 2usize..9, rank in 1usize..3, seed in any::<u64>(), c in 1e-3f64..1e3) {
        let x = low_rank(m, n, rank.min(m).min(n), seed);
        let base = update_d(&x);
        let scaled = update_d(&(&x * c));
        let tol = 1e-7 * base.matrix().amax();
        prop_assert!((scaled.matrix() - base.matrix()).amax() <= tol);
    }

    #[test]
    fn pinv_is_an_involution(m in 1usize..8, n in 1usize..8, rank in 1usize..4, seed in any::<u64>()) {
        let f = low_rank(m, n, rank.min(m).min(n), seed);
        let x = f.transpose() * &f;
        let back = pinv(&pinv(&x, default_rtol(n)).unwrap(), default_rtol(n)).unwrap();
        prop_assert!((back - &x).amax() <= 1e-8 * x.amax().max(1.0));
    }

    #[test]
    fn rows_match_elimination(n in 2usize..7, m in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = matrix(m, n, seed);
        let mask = DMatrix::from_fn(m, n, |_, _| rng.random_bool(0.5));
        let problem = MaskedMatrix::new(values, mask).unwrap();
        let weight = update_d(&matrix(m + n, n, seed ^ 7));
        let delta = 1e-3;
        let qhat = weight.matrix() + DMatrix::identity(n, n) * delta;
        let (x, _) = ConstrainedSystem::from_root(weight.perturbed_inv_sqrt(delta)).solve(&problem, false).unwrap();
        for i in 0..m {
            let observed = problem.observed_in_row(i);
            let m_obs: Vec<f64> = observed.iter().map(|&j| problem.values()[(i, j)]).collect();
            let expected = brute_force_constrained_row(&m_obs, &observed, &qhat).unwrap();
            let row = x.row(i).transpose();
            prop_assert!((row - &expected).amax() <= 1e-8 * expected.amax().max(1.0));
        }
    }

    #[test]
    fn mu_interval_gives_k_sparse_rows(len in 3usize..9, k in 1usize..4, seed in any::<u64>(), t in 0.01f64..=1.0) {
        prop_assume!(k < len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..10.0)).collect();
        sorted.sort_by(f64::total_cmp);
        let head: f64 = sorted[..k].iter().sum();
        let lower = 0.5 * (k as f64 * sorted[k - 1] - head);
        let upper = 0.5 * (k as f64 * sorted[k] - head);
        prop_assume!(upper - lower > 1e-6);
        let mu_sq = lower + t * (upper - lower);
        let s = brute_force_row_qp(&DVector::from_vec(sorted), mu_sq).unwrap();
        let support = s.iter().filter(|&&w| w > 1e-12).count();
        prop_assert_eq!(support, k);
    }

    #[test]
    fn graph_is_scale_free(m in 2usize..10, n in 4usize..10, k in 1usize..3, seed in any::<u64>(), c in 1e-3f64..1e3) {
        let x = matrix(m, n, seed);
        let base = build_graph(&x, k).unwrap();
        let scaled = build_graph(&(&x * c), k).unwrap();
        prop_assert!((scaled.similarity - &base.similarity).amax() <= 1e-12);
        for i in 0..n {
            prop_assert!((base.raw.row(i).sum() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(base.raw.row(i).iter().filter(|&&w| w > 0.0).count(), k);
        }
    }
}
