//! Adaptive column-correlation learning.
//!
//! For each column `i`, the similarity row solves
//!
//! ```text
//! min_{s ∈ simplex, s_i = 0}  Σ_j l_ij s_j + μ_i² Σ_j s_j²
//! ```
//!
//! with `μ_i²` pinned at the largest value that keeps the solution `k`-sparse.
//! The optimum then has the closed form
//!
//! ```text
//! s_j = (l⁽ᵏ⁺¹⁾ - l_j)₊ / (k l⁽ᵏ⁺¹⁾ - Σ_{v≤k} l⁽ᵛ⁾)      μ_i² = ½ (k l⁽ᵏ⁺¹⁾ - Σ_{v≤k} l⁽ᵛ⁾)
//! ```
//!
//! where `l⁽ᵛ⁾` is the v-th smallest distance to another column. Since the
//! weights are ratios of distance differences, the learned graph does not
//! change when the data is rescaled.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Squared Euclidean distances between the columns of `x`.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = x
                .column(i)
                .iter()
                .zip(x.column(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            l[(i, j)] = d;
            l[(j, i)] = d;
        }
    }
    l
}

/// One solved similarity row.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub weights: DVector<f64>,
    pub mu_sq: f64,
}

/// Closed-form `k`-sparse similarity row for column `self_index`.
///
/// Candidates are ordered by `(distance, index)`. When the `k + 1` nearest
/// candidates are equidistant the row falls back to `1/k` on the first `k`.
pub fn learn_similarity_row(
    l_row: &DVector<f64>,
    self_index: usize,
    k: usize,
) -> Result<SimilarityRow> {
    let n = l_row.len();
    if self_index >= n {
        return Err(Error::Config(format!(
            "self index {self_index} out of range for {n} columns"
        )));
    }
    if k == 0 || k + 2 > n {
        return Err(Error::Config(format!(
            "sparsity k={k} needs 1 <= k <= n-2 (n={n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).filter(|&j| j != self_index).collect();
    order.sort_by(|&a, &b| l_row[a].total_cmp(&l_row[b]).then(a.cmp(&b)));

    let cut = l_row[order[k]];
    let head: f64 = order[..k].iter().map(|&j| l_row[j]).sum();
    let denom = k as f64 * cut - head;

    let mut weights = DVector::zeros(n);
    if denom <= 4.0 * f64::EPSILON * k as f64 * cut.abs() {
        for &j in &order[..k] {
            weights[j] = 1.0 / k as f64;
        }
        return Ok(SimilarityRow {
            weights,
            mu_sq: 0.0,
        });
    }
    for &j in &order[..k] {
        weights[j] = ((cut - l_row[j]) / denom).max(0.0);
    }
    Ok(SimilarityRow {
        weights,
        mu_sq: 0.5 * denom,
    })
}

/// Learned column graph.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    /// Row-stochastic similarity before symmetrization.
    pub raw: DMatrix<f64>,
    /// `(raw + rawᵀ) / 2`.
    pub similarity: DMatrix<f64>,
    pub k: usize,
    pub mu_sq: DVector<f64>,
    pub degree: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    /// `Σ_i μ_i² ‖s_i‖²` on the raw rows.
    pub penalty: f64,
}

impl SimilarityGraph {
    /// `tr(X L Xᵀ)`.
    pub fn smoothness(&self, x: &DMatrix<f64>) -> f64 {
        (x * &self.laplacian).component_mul(x).sum()
    }
}

/// Learns the similarity graph of the columns of `x`.
pub fn build_graph(x: &DMatrix<f64>, k: usize) -> Result<SimilarityGraph> {
    build_graph_with(x, k, false)
}

pub fn build_graph_with(x: &DMatrix<f64>, k: usize, parallel: bool) -> Result<SimilarityGraph> {
    let n = x.ncols();
    if k == 0 || k + 2 > n {
        return Err(Error::Config(format!(
            "sparsity k={k} needs 1 <= k <= n-2 (n={n})"
        )));
    }
    let l = pairwise_sq_dists(x);
    let solve = |i: usize| learn_similarity_row(&l.column(i).into_owned(), i, k);
    let rows: Vec<SimilarityRow> = if parallel {
        (0..n).into_par_iter().map(solve).collect::<Result<_>>()?
    } else {
        (0..n).map(solve).collect::<Result<_>>()?
    };

    let mut raw = DMatrix::zeros(n, n);
    let mut mu_sq = DVector::zeros(n);
    let mut penalty = 0.0;
    for (i, row) in rows.into_iter().enumerate() {
        penalty += row.mu_sq * row.weights.norm_squared();
        raw.set_row(i, &row.weights.transpose());
        mu_sq[i] = row.mu_sq;
    }
    let similarity = (&raw + raw.transpose()) * 0.5;
    let degree = similarity.column_sum();
    let laplacian = DMatrix::from_diagonal(&degree) - &similarity;
    Ok(SimilarityGraph {
        raw,
        similarity,
        k,
        mu_sq,
        degree,
        laplacian,
        penalty,
    })
}
