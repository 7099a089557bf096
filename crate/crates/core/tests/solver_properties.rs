use nalgebra::DMatrix;
use ncarl::rows::ConstrainedSystem;
use ncarl::{
    apply_mask, generate_synthetic, kkt_residual, mse, solve, update_d, MaskSpec, SolverConfig,
    SyntheticSpec,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constrained_iterates_interpolate(seed in 0u64..1000, rate in 0.2f64..0.6, graph in any::<bool>()) {
        let (truth, _) = generate_synthetic(&SyntheticSpec::clean(12, 9, 2, seed)).unwrap();
        let problem = apply_mask(&truth, &MaskSpec::random(rate, seed)).unwrap();
        let config = SolverConfig { max_iters: 10, ..if graph { SolverConfig::ncarl(1.0, 3) } else { SolverConfig::surrogate() } };
        let report = solve(&problem, &config).unwrap();
        prop_assert!(report.constraint_residual_trace.iter().all(|&r| r < 1e-10));
        prop_assert!(problem.constraint_residual(&report.x) < 1e-10);
    }

    #[test]
    fn random_mask_hides_floor_of_rate(m in 1usize..30, n in 1usize..30, rate in 0.0f64..1.0, seed in any::<u64>()) {
        let mask = MaskSpec::random(rate, seed).build(m, n).unwrap();
        let hidden = mask.iter().filter(|&&o| !o).count();
        prop_assert_eq!(hidden, (rate * (m * n) as f64).floor() as usize);
    }

    #[test]
    fn mse_is_scale_free(seed in 0u64..1000, c in 1e-3f64..1e3) {
        let (truth, noisy) = generate_synthetic(&SyntheticSpec { noise_fraction: 1.0, ..SyntheticSpec::lightly_noisy(8, 6, 2, seed) }).unwrap();
        let eval = MaskSpec::random(0.5, seed).build(8, 6).unwrap().map(|o| !o);
        let base = mse(&noisy, &truth, &eval).unwrap();
        let scaled = mse(&(&noisy * c), &(&truth * c), &eval).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-12 * base.max(1e-300) + 1e-15);
    }
}

#[test]
fn kkt_residual_shrinks_with_delta() {
    for seed in 0..10 {
        let (truth, _) = generate_synthetic(&SyntheticSpec::clean(10, 8, 2, seed)).unwrap();
        let problem = apply_mask(&truth, &MaskSpec::random(0.5, seed)).unwrap();
        let weight = update_d(problem.values());
        let residuals: Vec<f64> = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
            .iter()
            .map(|&delta| {
                let system = ConstrainedSystem::from_root(weight.perturbed_inv_sqrt(delta));
                let (x, v) = system.solve(&problem, false).unwrap();
                kkt_residual(&x, &v, problem.mask(), weight.matrix())
            })
            .collect();
        assert!(
            residuals.windows(2).all(|w| w[1] < w[0]),
            "seed {seed}: {residuals:?}"
        );
    }
}

#[test]
fn rank_shrinks_with_gamma() {
    let (truth, _) = generate_synthetic(&SyntheticSpec::clean(30, 20, 4, 3)).unwrap();
    let problem = apply_mask(&truth, &MaskSpec::random(0.5, 3)).unwrap();
    let ranks: Vec<usize> = [1e-6, 1e-3, 1e-1]
        .iter()
        .map(|&gamma| {
            let x = solve(&problem, &SolverConfig::noisy(10.0, gamma, 5))
                .unwrap()
                .x;
            ncarl::numeric_rank(&x, 1e-3)
        })
        .collect();
    assert!(ranks.windows(2).all(|w| w[1] <= w[0]), "{ranks:?}");
}

#[test]
fn fully_observed_is_one_step() {
    let x = DMatrix::from_fn(6, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
    let problem = apply_mask(&x, &MaskSpec::random(0.0, 0)).unwrap();
    let report = solve(&problem, &SolverConfig::surrogate()).unwrap();
    assert_eq!(report.x, x);
    let nn = ncarl::nuclear_norm(&x);
    assert!((report.objective_trace[0] - nn * nn).abs() <= 1e-9 * nn * nn);
}
