//! Problem instances, mask generation, synthetic data and the recovery metric.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Binary observation mask, `true` where an entry is observed.
pub type Mask = DMatrix<bool>;

/// Observed values together with their observation mask.
///
/// Unobserved entries of `values` are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    mask: Mask,
}

impl MaskedMatrix {
    /// Builds an instance, zeroing any value sitting under an unobserved entry.
    pub fn new(mut values: DMatrix<f64>, mask: Mask) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::shape(
                format!("{:?}", values.shape()),
                format!("{:?}", mask.shape()),
            ));
        }
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidSpec("matrix must be non-empty".into()));
        }
        for (v, &p) in values.iter_mut().zip(mask.iter()) {
            if !p {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidSpec("observed values must be finite".into()));
            }
        }
        Ok(Self { values, mask })
    }

    /// Every entry observed.
    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let mask = Mask::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&p| p).count()
    }

    /// Column indices observed in row `i`, ascending.
    pub fn observed_in_row(&self, i: usize) -> Vec<usize> {
        (0..self.ncols()).filter(|&j| self.mask[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self {
            values: self.values.transpose(),
            mask: self.mask.transpose(),
        }
    }

    /// Largest absolute deviation of `x` from the observed values.
    pub fn constraint_residual(&self, x: &DMatrix<f64>) -> f64 {
        self.mask
            .iter()
            .zip(x.iter().zip(self.values.iter()))
            .filter(|(&p, _)| p)
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Where a block mask is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockPlacement {
    Centered,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskKind {
    /// Hide a fraction `rate` of all entries, chosen uniformly.
    Random { rate: f64 },
    /// Hide one contiguous `height x width` block.
    Block {
        height: usize,
        width: usize,
        placement: BlockPlacement,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub seed: u64,
}

impl MaskSpec {
    pub fn random(rate: f64, seed: u64) -> Self {
        Self {
            kind: MaskKind::Random { rate },
            seed,
        }
    }

    pub fn block(height: usize, width: usize, placement: BlockPlacement, seed: u64) -> Self {
        Self {
            kind: MaskKind::Block {
                height,
                width,
                placement,
            },
            seed,
        }
    }

    /// Builds the observation mask for an `nrows x ncols` matrix.
    pub fn build(&self, nrows: usize, ncols: usize) -> Result<Mask> {
        let mut mask = Mask::from_element(nrows, ncols, true);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match self.kind {
            MaskKind::Random { rate } => {
                check_rate(rate)?;
                let hidden = (rate * (nrows * ncols) as f64).floor() as usize;
                for flat in choose_indices(&mut rng, nrows * ncols, hidden) {
                    mask[(flat / ncols, flat % ncols)] = false;
                }
            }
            MaskKind::Block {
                height,
                width,
                placement,
            } => {
                if height > nrows || width > ncols {
                    return Err(Error::InvalidSpec(format!(
                        "block {height}x{width} does not fit a {nrows}x{ncols} matrix"
                    )));
                }
                let (top, left) = match placement {
                    BlockPlacement::Centered => ((nrows - height) / 2, (ncols - width) / 2),
                    BlockPlacement::SeededRandom => {
                        use rand::Rng;
                        (
                            rng.random_range(0..=nrows - height),
                            rng.random_range(0..=ncols - width),
                        )
                    }
                };
                for i in top..top + height {
                    for j in left..left + width {
                        mask[(i, j)] = false;
                    }
                }
            }
        }
        Ok(mask)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidSpec(format!(
            "mask rate {rate} outside [0, 1)"
        )));
    }
    Ok(())
}

/// Draws `count` distinct indices from `0..len` with a partial Fisher-Yates shuffle.
fn choose_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..len).collect();
    let (chosen, _) = pool.partial_shuffle(rng, count);
    chosen.to_vec()
}

/// Hides entries of `x` according to `spec`.
pub fn apply_mask(x: &DMatrix<f64>, spec: &MaskSpec) -> Result<MaskedMatrix> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec(
            "matrix contains non-finite values".into(),
        ));
    }
    let mask = spec.build(x.nrows(), x.ncols())?;
    MaskedMatrix::new(x.clone(), mask)
}

/// Splits the observed set of `base` into a training part and a holdout part
/// holding `floor(rate * |observed|)` entries.
pub fn mask_known_entries(
    base: &MaskedMatrix,
    rate: f64,
    seed: u64,
) -> Result<(MaskedMatrix, MaskedMatrix)> {
    check_rate(rate)?;
    let ncols = base.ncols();
    // Column-major storage order, which is also nalgebra's iteration order.
    let observed: Vec<usize> = base
        .mask()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p)
        .map(|(flat, _)| flat)
        .collect();
    if observed.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let hidden = (rate * observed.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_mask = base.mask().clone();
    let mut holdout_mask = Mask::from_element(base.nrows(), ncols, false);
    for pick in choose_indices(&mut rng, observed.len(), hidden) {
        let flat = observed[pick];
        train_mask[flat] = false;
        holdout_mask[flat] = true;
    }
    Ok((
        MaskedMatrix::new(base.values().clone(), train_mask)?,
        MaskedMatrix::new(base.values().clone(), holdout_mask)?,
    ))
}

/// Scale of the additive noise in synthetic data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Standard deviation given directly.
    Absolute(f64),
    /// Standard deviation as a multiple of the ground truth's RMS entry.
    RelativeToRms(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Fraction of entries receiving additive noise.
    pub noise_fraction: f64,
    pub noise: NoiseLevel,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Noise-free spec.
    pub fn clean(rows: usize, cols: usize, rank: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            rank,
            noise_fraction: 0.0,
            noise: NoiseLevel::RelativeToRms(0.0),
            seed,
        }
    }

    /// 20% of entries perturbed at 1% of the RMS entry.
    pub fn lightly_noisy(rows: usize, cols: usize, rank: usize, seed: u64) -> Self {
        Self {
            noise_fraction: 0.2,
            noise: NoiseLevel::RelativeToRms(0.01),
            ..Self::clean(rows, cols, rank, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rank == 0 {
            return Err(Error::InvalidSpec(
                "dimensions and rank must be positive".into(),
            ));
        }
        if self.rank > self.rows.min(self.cols) {
            return Err(Error::InvalidSpec(format!(
                "rank {} exceeds min({}, {})",
                self.rank, self.rows, self.cols
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(Error::InvalidSpec("noise fraction outside [0, 1]".into()));
        }
        let scale = match self.noise {
            NoiseLevel::Absolute(s) | NoiseLevel::RelativeToRms(s) => s,
        };
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidSpec(
                "noise scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Returns `(ground_truth, noisy_copy)` where the ground truth is a product of
/// two standard-normal factors of inner dimension `rank`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let left = DMatrix::from_fn(spec.rows, spec.rank, |_, _| normal());
    let right = DMatrix::from_fn(spec.rank, spec.cols, |_, _| normal());
    let truth = &left * &right;

    let total = spec.rows * spec.cols;
    let sigma = match spec.noise {
        NoiseLevel::Absolute(s) => s,
        NoiseLevel::RelativeToRms(c) => c * truth.norm() / (total as f64).sqrt(),
    };
    let mut noisy = truth.clone();
    let count = (spec.noise_fraction * total as f64).ceil() as usize;
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        for flat in choose_indices(&mut rng, total, count.min(total)) {
            let draw: f64 = StandardNormal.sample(&mut rng);
            noisy[flat] += sigma * draw;
        }
    }
    Ok((truth, noisy))
}

/// Normalized root-mean-square error over `eval_set`:
/// `sqrt(sum (X - T)^2 / sum T^2)`.
pub fn mse(recovered: &DMatrix<f64>, truth: &DMatrix<f64>, eval_set: &Mask) -> Result<f64> {
    if recovered.shape() != truth.shape() || truth.shape() != eval_set.shape() {
        return Err(Error::shape(
            format!("{:?}", truth.shape()),
            format!("{:?} / {:?}", recovered.shape(), eval_set.shape()),
        ));
    }
    let (mut err, mut energy) = (0.0, 0.0);
    for ((x, t), &e) in recovered.iter().zip(truth.iter()).zip(eval_set.iter()) {
        if e {
            err += (x - t) * (x - t);
            energy += t * t;
        }
    }
    if energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((err / energy).sqrt())
}

/// Entries that are known in `known` but hidden in `train`.
pub fn holdout_of(known: &Mask, train: &Mask) -> Mask {
    known.zip_map(train, |k, t| k && !t)
}
