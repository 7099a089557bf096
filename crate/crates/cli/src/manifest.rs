//! Run manifests: a TOML file with the same keys as the command-line flags.
//!
//! ```toml
//! dataset = "lowrank"
//! input = "lowrank.csv"
//! mask_rate = 0.3
//! variant = "ncarl"
//! alpha = 10.0
//! k = 5
//! seed = 7
//! out = "recovered.csv"
//! metrics = "metrics.csv"
//! trace = "trace.csv"
//! timing = false
//! ```
//!
//! Relative paths in a manifest are taken relative to the manifest's own
//! directory. Flags given on the command line override manifest values.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ncarl::{BlockPlacement, MaskSpec, SolverConfig, Variant};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Coo,
    Pgm,
    Ppm,
}

impl InputFormat {
    pub fn is_image(self) -> bool {
        matches!(self, InputFormat::Pgm | InputFormat::Ppm)
    }

    fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(InputFormat::Csv),
            "coo" => Some(InputFormat::Coo),
            "pgm" => Some(InputFormat::Pgm),
            "ppm" | "pnm" => Some(InputFormat::Ppm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
pub enum VariantArg {
    #[serde(rename = "surrogate")]
    #[value(name = "surrogate")]
    Surrogate,
    #[serde(rename = "ncarl")]
    #[value(name = "ncarl")]
    Ncarl,
    #[serde(rename = "ncarl-noisy")]
    #[value(name = "ncarl-noisy")]
    NcarlNoisy,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Surrogate => Variant::SurrogateOnly,
            VariantArg::Ncarl => Variant::Ncarl,
            VariantArg::NcarlNoisy => Variant::NcarlNoisy,
        }
    }
}

/// Every run setting, each optional so that manifests and flags can be layered.
#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Name written to the `dataset` column (default: input file stem).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Matrix or image to complete.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Reference matrix for the error metric; every entry hidden from the solver is scored.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Fraction of known entries to hide from the solver.
    #[arg(long)]
    pub mask_rate: Option<f64>,
    /// Hide one contiguous block of the given height and width instead.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub block: Option<Vec<usize>>,
    /// Center the block instead of placing it at a seeded position.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub centered: Option<bool>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative objective change that stops the solver.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recovered matrix or image.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Record wall time in the metrics (`false` writes 0 for reproducible files).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
    /// Solve rows on all cores. Results are identical either way.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
    /// Convert color images to luma and write a grayscale result.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub gray: Option<bool>,
}

macro_rules! layer {
    ($base:ident, $over:ident; $($field:ident),*) => {
        RunManifest { $($field: $over.$field.or($base.$field)),* }
    };
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut manifest: RunManifest = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut manifest.input,
            &mut manifest.truth,
            &mut manifest.out,
            &mut manifest.metrics,
            &mut manifest.trace,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(manifest)
    }

    /// Values of `over` take precedence.
    pub fn overlay(self, over: RunManifest) -> RunManifest {
        let base = self;
        layer!(base, over; dataset, input, format, truth, mask_rate, block, centered, variant, alpha,
               gamma, k, delta, max_iters, tol, seed, out, metrics, trace, timing, parallel, gray)
    }

    /// The mask settings alone.
    pub fn mask_choice(&self) -> CliResult<MaskChoice> {
        let seed = self.seed.unwrap_or(0);
        match (&self.block, self.mask_rate) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "give either --mask-rate or --block".into(),
            )),
            (Some(b), None) => {
                let &[h, w] = b.as_slice() else {
                    return Err(CliError::Config(format!(
                        "block needs a height and a width, got {b:?}"
                    )));
                };
                let placement = if self.centered.unwrap_or(false) {
                    BlockPlacement::Centered
                } else {
                    BlockPlacement::SeededRandom
                };
                Ok(MaskChoice::Block(MaskSpec::block(h, w, placement, seed)))
            }
            (None, rate) => {
                let rate = rate.unwrap_or(0.0);
                if !(0.0..1.0).contains(&rate) {
                    return Err(CliError::Config(format!("mask rate {rate} outside [0, 1)")));
                }
                Ok(MaskChoice::Rate(rate))
            }
        }
    }

    pub fn resolve(self) -> CliResult<Run> {
        let mask = self.mask_choice()?;
        let input = self
            .input
            .ok_or_else(|| CliError::Config("no input given".into()))?;
        let format = self.format.or_else(|| InputFormat::from_extension(&input));
        let dataset = self.dataset.unwrap_or_else(|| {
            input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "input".into())
        });
        if dataset.contains([',', '\n', '"']) {
            return Err(CliError::Config(format!(
                "dataset name `{dataset}` cannot go in a CSV cell"
            )));
        }
        let seed = self.seed.unwrap_or(0);
        let defaults = SolverConfig::default();
        let config = SolverConfig {
            variant: self.variant.map_or(defaults.variant, Variant::from),
            alpha: self.alpha.unwrap_or(defaults.alpha),
            gamma: self.gamma.unwrap_or(defaults.gamma),
            k: self.k.unwrap_or(defaults.k),
            delta: self.delta.unwrap_or(defaults.delta),
            max_iters: self.max_iters.unwrap_or(defaults.max_iters),
            rel_tol: self.tol.unwrap_or(defaults.rel_tol),
            parallel: self.parallel.unwrap_or(false),
        };
        config.validate()?;
        for out in [&self.out, &self.metrics, &self.trace]
            .into_iter()
            .flatten()
        {
            check_writable(out)?;
        }
        if !input.is_file() {
            return Err(CliError::Io(format!("{}: no such file", input.display())));
        }
        Ok(Run {
            dataset,
            input,
            format,
            truth: self.truth,
            mask,
            seed,
            config,
            out: self.out,
            metrics: self.metrics,
            trace: self.trace,
            timing: self.timing.unwrap_or(true),
            gray: self.gray.unwrap_or(false),
        })
    }
}

fn check_writable(path: &Path) -> CliResult<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !dir.is_dir() {
        return Err(CliError::Io(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskChoice {
    /// Hide this fraction of the known entries.
    Rate(f64),
    Block(MaskSpec),
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct Run {
    pub dataset: String,
    pub input: PathBuf,
    pub format: Option<InputFormat>,
    pub truth: Option<PathBuf>,
    pub mask: MaskChoice,
    pub seed: u64,
    pub config: SolverConfig,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub timing: bool,
    pub gray: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_manifest() {
        let base: RunManifest = toml::from_str("alpha = 3.0\nk = 4\nvariant = \"ncarl\"").unwrap();
        let over = RunManifest {
            alpha: Some(7.0),
            ..Default::default()
        };
        let merged = base.overlay(over);
        assert_eq!(merged.alpha, Some(7.0));
        assert_eq!(merged.k, Some(4));
        assert_eq!(merged.variant, Some(VariantArg::Ncarl));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunManifest>("alhpa = 1.0").is_err());
    }

    #[test]
    fn rate_and_block_conflict() {
        let m = RunManifest {
            input: Some("x.csv".into()),
            mask_rate: Some(0.2),
            block: Some(vec![2, 2]),
            ..Default::default()
        };
        assert!(matches!(m.resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(
            InputFormat::from_extension(Path::new("a/b.PGM")),
            Some(InputFormat::Pgm)
        );
        assert_eq!(
            InputFormat::from_extension(Path::new("a/b.coo")),
            Some(InputFormat::Coo)
        );
        assert_eq!(InputFormat::from_extension(Path::new("a/b")), None);
    }
}
