//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use ncarl::{apply_mask, generate_synthetic, MaskSpec, MaskedMatrix, SyntheticSpec};

/// Seeded rank-`rank` matrix with half of its entries hidden.
pub fn instance(rows: usize, cols: usize, rank: usize, seed: u64) -> (DMatrix<f64>, MaskedMatrix) {
    let (truth, _) =
        generate_synthetic(&SyntheticSpec::clean(rows, cols, rank, seed)).expect("valid spec");
    let problem = apply_mask(&truth, &MaskSpec::random(0.5, seed)).expect("valid mask");
    (truth, problem)
}
