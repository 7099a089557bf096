//! Alternating closed-form solver for the three model variants.
//!
//! Each iteration refreshes the column graph (correlation variants), the
//! weight matrix `D`, and then every row of the iterate in closed form. The
//! weight `D + δI` is handled through its inverse square root `S`, so that the
//! correlation variants only ever factor `I + α S L S`, whose spectrum is
//! bounded below by one.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix};

use crate::correlation::{build_graph_with, SimilarityGraph};
use crate::error::{Error, Result};
use crate::problem::MaskedMatrix;
use crate::rows::{kkt_residual, noisy_gradient_norm, ConstrainedSystem, NoisySystem};
use crate::spectral::{update_d, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Trace surrogate alone, observations enforced exactly.
    SurrogateOnly,
    /// Surrogate plus adaptive column correlation, observations enforced exactly.
    Ncarl,
    /// Observations fitted in least squares, surrogate weighted by `gamma`.
    NcarlNoisy,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::SurrogateOnly => "surrogate",
            Variant::Ncarl => "ncarl",
            Variant::NcarlNoisy => "ncarl-noisy",
        }
    }

    fn is_constrained(self) -> bool {
        !matches!(self, Variant::NcarlNoisy)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(Variant::SurrogateOnly),
            "ncarl" => Ok(Variant::Ncarl),
            "ncarl-noisy" => Ok(Variant::NcarlNoisy),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Weight of the correlation term.
    pub alpha: f64,
    /// Weight of the surrogate in the noisy model.
    pub gamma: f64,
    /// Neighbors per column in the learned graph.
    pub k: usize,
    /// Perturbation added to `D` in the row updates.
    pub delta: f64,
    pub max_iters: usize,
    /// Relative objective change that counts as converged.
    pub rel_tol: f64,
    /// Solve rows and graph rows on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SurrogateOnly,
            alpha: 10.0,
            gamma: 1.0,
            k: 10,
            delta: 1e-6,
            max_iters: 50,
            rel_tol: 1e-6,
            parallel: false,
        }
    }
}

impl SolverConfig {
    pub fn surrogate() -> Self {
        Self::default()
    }

    pub fn ncarl(alpha: f64, k: usize) -> Self {
        Self {
            variant: Variant::Ncarl,
            alpha,
            k,
            ..Self::default()
        }
    }

    pub fn noisy(alpha: f64, gamma: f64, k: usize) -> Self {
        Self {
            variant: Variant::NcarlNoisy,
            alpha,
            gamma,
            k,
            ..Self::default()
        }
    }

    fn uses_graph(&self) -> bool {
        match self.variant {
            Variant::SurrogateOnly => false,
            Variant::Ncarl => true,
            Variant::NcarlNoisy => self.alpha > 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be non-negative");
        }
        match self.variant {
            Variant::SurrogateOnly => {}
            Variant::Ncarl => {
                if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                    return bad("ncarl needs alpha > 0");
                }
            }
            Variant::NcarlNoisy => {
                if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
                    return bad("ncarl-noisy needs alpha >= 0");
                }
                if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                    return bad("ncarl-noisy needs gamma > 0");
                }
            }
        }
        if self.uses_graph() && self.k == 0 {
            return bad("k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DMatrix<f64>,
    /// Objective after each iteration's row update.
    pub objective_trace: Vec<f64>,
    /// `max |X - M|` over observed entries after each iteration.
    pub constraint_residual_trace: Vec<f64>,
    /// Lagrangian (constrained variants) or objective (noisy) gradient norm at the end.
    pub kkt_residual_final: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The iterate collapsed to zero, which only happens on all-zero input.
    pub degenerate: bool,
    pub wall_time: Duration,
}

/// Model objective at `x` for a fixed weight `d` and graph.
///
/// The correlation penalty is the raw-row value `Σ μ_i² ‖s_i‖²` stored in the graph.
pub fn objective(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    graph: Option<&SimilarityGraph>,
    problem: &MaskedMatrix,
    config: &SolverConfig,
) -> f64 {
    let surrogate = (x * d).component_mul(x).sum();
    let correlation = graph.map_or(0.0, |g| config.alpha * (g.smoothness(x) + g.penalty));
    match config.variant {
        Variant::SurrogateOnly => surrogate,
        Variant::Ncarl => surrogate + correlation,
        Variant::NcarlNoisy => {
            let fit: f64 = x
                .iter()
                .zip(problem.values().iter())
                .zip(problem.mask().iter())
                .filter(|(_, &p)| p)
                .map(|((a, b), _)| (a - b) * (a - b))
                .sum();
            fit + config.gamma * surrogate + correlation
        }
    }
}

/// `B` with `B Bᵀ = (D + δI + αL)⁻¹`, namely `S C⁻ᵀ` for the Cholesky factor
/// `C` of `I + α S L S`.
fn correlated_root(
    whitener: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let n = whitener.nrows();
    let sls = whitener * laplacian * whitener;
    let inner = DMatrix::identity(n, n) + (&sls + sls.transpose()) * (0.5 * alpha);
    let c = Cholesky::new(inner)
        .ok_or(Error::SingularRow {
            row: 0,
            condition: f64::INFINITY,
        })?
        .unpack();
    // B = S C⁻ᵀ  <=>  C Bᵀ = S.
    let bt = c
        .solve_lower_triangular(whitener)
        .expect("Cholesky factor has a positive diagonal");
    Ok(bt.transpose())
}

struct Step {
    x: DMatrix<f64>,
    multipliers: Option<DMatrix<f64>>,
}

fn row_update(
    problem: &MaskedMatrix,
    weight: &WeightMatrix,
    graph: Option<&SimilarityGraph>,
    config: &SolverConfig,
) -> Result<Step> {
    let whitener = weight.perturbed_inv_sqrt(config.delta);
    match config.variant {
        Variant::SurrogateOnly | Variant::Ncarl => {
            let root = match graph {
                Some(graph) => correlated_root(&whitener, &graph.laplacian, config.alpha)?,
                None => whitener,
            };
            let (x, v) = ConstrainedSystem::from_root(root).solve(problem, config.parallel)?;
            Ok(Step {
                x,
                multipliers: Some(v),
            })
        }
        Variant::NcarlNoisy => {
            let lap = graph.map(|g| (&g.laplacian, config.alpha));
            let x =
                NoisySystem::new(whitener, config.gamma, lap).solve(problem, config.parallel)?;
            Ok(Step {
                x,
                multipliers: None,
            })
        }
    }
}

/// Runs the alternating solver from `X = M`.
///
/// Wide problems (`m < n`) are solved on the transpose so that the weight
/// matrix acts on the shorter dimension; for the correlation variants the
/// graph is then learned over the rows of the input.
pub fn solve(problem: &MaskedMatrix, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    if problem.observed_count() == 0 {
        return Err(Error::EmptyObservations);
    }
    let transposed = problem.nrows() < problem.ncols();
    let work = if transposed {
        problem.transpose()
    } else {
        problem.clone()
    };
    let n = work.ncols();
    if config.uses_graph() && config.k + 2 > n {
        return Err(Error::Config(format!(
            "k={} needs at least k+2 columns, the problem has {n}",
            config.k
        )));
    }

    let start = Instant::now();
    let mut x = work.values().clone();
    let mut objective_trace = Vec::new();
    let mut constraint_residual_trace = Vec::new();
    let mut converged = false;
    let mut degenerate = false;
    let mut last: Option<(WeightMatrix, Option<SimilarityGraph>, Option<DMatrix<f64>>)> = None;

    for iteration in 1..=config.max_iters {
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };
        let graph = if config.uses_graph() {
            Some(build_graph_with(&x, config.k, config.parallel).map_err(wrap)?)
        } else {
            None
        };
        let weight = update_d(&x);
        if weight.is_degenerate() {
            degenerate = true;
            x = DMatrix::zeros(x.nrows(), n);
            objective_trace.push(objective(&x, weight.matrix(), None, &work, config));
            constraint_residual_trace.push(work.constraint_residual(&x));
            converged = true;
            last = Some((weight, None, None));
            break;
        }
        let step = row_update(&work, &weight, graph.as_ref(), config).map_err(wrap)?;
        x = step.x;

        let value = objective(&x, weight.matrix(), graph.as_ref(), &work, config);
        constraint_residual_trace.push(work.constraint_residual(&x));
        let previous = objective_trace.last().copied();
        objective_trace.push(value);
        last = Some((weight, graph, step.multipliers));
        if let Some(prev) = previous {
            if (value - prev).abs() / prev.max(1e-30) < config.rel_tol {
                converged = true;
                break;
            }
        }
    }

    let (weight, graph, multipliers) = last.expect("at least one iteration runs");
    let laplacian_term = |w: DMatrix<f64>| match &graph {
        Some(g) => w + &g.laplacian * config.alpha,
        None => w,
    };
    let kkt_residual_final = match multipliers {
        Some(v) => kkt_residual(
            &x,
            &v,
            work.mask(),
            &laplacian_term(weight.matrix().clone()),
        ),
        None if config.variant.is_constrained() => 0.0,
        None => noisy_gradient_norm(&x, &work, &laplacian_term(weight.matrix() * config.gamma)),
    };

    Ok(SolveReport {
        x: if transposed { x.transpose() } else { x },
        iterations: objective_trace.len(),
        objective_trace,
        constraint_residual_trace,
        kkt_residual_final,
        converged,
        degenerate,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{mse, Mask, MaskSpec};
    use crate::spectral::nuclear_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn fully_observed_surrogate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = gaussian(6, 4, &mut rng);
        let p = MaskedMatrix::fully_observed(m.clone()).unwrap();
        let report = solve(&p, &SolverConfig::surrogate()).unwrap();
        assert_eq!(report.x, m);
        let nn = nuclear_norm(&m);
        assert!((report.objective_trace[0] - nn * nn).abs() < 1e-9 * nn * nn);
        assert!(report.converged);
    }

    #[test]
    fn all_zero_input_is_degenerate() {
        let p = MaskedMatrix::new(DMatrix::zeros(4, 3), Mask::from_element(4, 3, true)).unwrap();
        let report = solve(&p, &SolverConfig::surrogate()).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.x, DMatrix::zeros(4, 3));
    }

    #[test]
    fn empty_observations_rejected() {
        let p = MaskedMatrix::new(DMatrix::zeros(4, 3), Mask::from_element(4, 3, false)).unwrap();
        assert!(matches!(
            solve(&p, &SolverConfig::surrogate()),
            Err(Error::EmptyObservations)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::ncarl(0.0, 3).validate().is_err());
        assert!(SolverConfig::noisy(1.0, 0.0, 3).validate().is_err());
        assert!(SolverConfig {
            delta: 0.0,
            ..SolverConfig::surrogate()
        }
        .validate()
        .is_err());
        let p = MaskedMatrix::fully_observed(DMatrix::from_element(5, 4, 1.0)).unwrap();
        assert!(solve(&p, &SolverConfig::ncarl(1.0, 3)).is_err());
    }

    #[test]
    fn noisy_objective_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = gaussian(5, 4, &mut rng);
        let mask = MaskSpec::random(0.3, 1).build(5, 4).unwrap();
        let p = MaskedMatrix::new(m, mask).unwrap();
        let cfg = SolverConfig::noisy(1.0, 0.5, 2);
        let graph = crate::correlation::build_graph(&DMatrix::zeros(5, 4), 2).unwrap();
        let z = DMatrix::zeros(5, 4);
        let value = objective(&z, &DMatrix::identity(4, 4), Some(&graph), &p, &cfg);
        assert!((value - p.values().norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(7, 5, &mut rng);
        let mask = MaskSpec::random(0.4, 2).build(7, 5).unwrap();
        let p = MaskedMatrix::new(gaussian(7, 5, &mut rng), mask).unwrap();
        let d = update_d(&x);
        let graph = crate::correlation::build_graph(&x, 2).unwrap();
        let cfg = SolverConfig::noisy(3.0, 0.7, 2);

        let (m, n) = (7, 5);
        let mut surrogate = 0.0;
        for i in 0..m {
            for a in 0..n {
                for b in 0..n {
                    surrogate += x[(i, a)] * d.matrix()[(a, b)] * x[(i, b)];
                }
            }
        }
        let mut smooth = 0.0;
        for a in 0..n {
            for b in 0..n {
                let dist: f64 = (0..m).map(|i| (x[(i, a)] - x[(i, b)]).powi(2)).sum();
                smooth += 0.5 * graph.similarity[(a, b)] * dist;
            }
        }
        let mut penalty = 0.0;
        for a in 0..n {
            let row_sq: f64 = (0..n).map(|b| graph.raw[(a, b)].powi(2)).sum();
            penalty += graph.mu_sq[a] * row_sq;
        }
        let mut fit = 0.0;
        for i in 0..m {
            for j in 0..n {
                if p.mask()[(i, j)] {
                    fit += (x[(i, j)] - p.values()[(i, j)]).powi(2);
                }
            }
        }
        let want = fit + 0.7 * surrogate + 3.0 * (smooth + penalty);
        let got = objective(&x, d.matrix(), Some(&graph), &p, &cfg);
        assert!((got - want).abs() < 1e-10 * want);
    }

    #[test]
    fn parallel_rows_are_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = gaussian(30, 3, &mut rng) * gaussian(3, 12, &mut rng);
        let p = crate::problem::apply_mask(&truth, &MaskSpec::random(0.5, 8)).unwrap();
        for cfg in [
            SolverConfig::surrogate(),
            SolverConfig::ncarl(10.0, 3),
            SolverConfig::noisy(1.0, 0.1, 3),
        ] {
            let serial = solve(&p, &cfg).unwrap();
            let parallel = solve(
                &p,
                &SolverConfig {
                    parallel: true,
                    ..cfg
                },
            )
            .unwrap();
            assert_eq!(serial.x, parallel.x);
            assert_eq!(serial.objective_trace, parallel.objective_trace);
        }
    }

    #[test]
    fn wide_problem_is_transposed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = gaussian(6, 1, &mut rng) * gaussian(1, 10, &mut rng);
        let mask = MaskSpec::random(0.3, 4).build(6, 10).unwrap();
        let p = MaskedMatrix::new(truth.clone(), mask.clone()).unwrap();
        let report = solve(&p, &SolverConfig::surrogate()).unwrap();
        assert_eq!(report.x.shape(), (6, 10));
        assert!(p.constraint_residual(&report.x) < 1e-12);
        assert!(mse(&report.x, &truth, &mask.map(|b| !b)).unwrap() < 1e-3);
    }
}
