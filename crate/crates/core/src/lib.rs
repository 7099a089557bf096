//! Low-rank matrix completion with a closed-form trace surrogate.
//!
//! The rank of the completed matrix is replaced by `tr(X D Xᵀ)` with a learned
//! PSD weight `D`. Minimizing alternately over `D` and over the rows of `X` needs
//! no step sizes: both updates are closed form. An optional adaptive column
//! graph adds a Laplacian smoothness term, and a noisy variant fits the
//! observations in least squares instead of interpolating them.
//!
//! ```
//! use nalgebra::DMatrix;
//! use ncarl::{apply_mask, mse, solve, MaskSpec, SolverConfig};
//!
//! let truth = DMatrix::from_fn(12, 8, |i, j| (i as f64 + 1.0) * (j as f64 - 3.5));
//! let problem = apply_mask(&truth, &MaskSpec::random(0.3, 7)).unwrap();
//! let report = solve(&problem, &SolverConfig::surrogate()).unwrap();
//!
//! // Observed entries are reproduced exactly; the hidden ones are estimated.
//! assert_eq!(problem.constraint_residual(&report.x), 0.0);
//! let holdout = problem.mask().map(|observed| !observed);
//! let zero_fill = mse(problem.values(), &truth, &holdout).unwrap();
//! assert!(mse(&report.x, &truth, &holdout).unwrap() < zero_fill);
//! ```

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correlation;
pub mod error;
pub mod io;
pub mod oracle;
pub mod problem;
pub mod rows;
pub mod solver;
pub mod spectral;

pub use correlation::{
    build_graph, learn_similarity_row, pairwise_sq_dists, SimilarityGraph, SimilarityRow,
};
pub use error::{Error, Result};
pub use oracle::{nuclear_min_constrained, svt_shrink, OracleConfig};
pub use problem::{
    apply_mask, generate_synthetic, holdout_of, mask_known_entries, mse, BlockPlacement, Mask,
    MaskKind, MaskSpec, MaskedMatrix, NoiseLevel, SyntheticSpec,
};
pub use rows::{kkt_residual, solve_row_constrained, solve_row_noisy};
pub use solver::{objective, solve, SolveReport, SolverConfig, Variant};
pub use spectral::{nuclear_norm, numeric_rank, pinv, psd_sqrt, update_d, WeightMatrix};
