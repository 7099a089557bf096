//! Command implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ncarl::io::{
    fmt_real, read_matrix_file, write_atomic, write_coo_masked, write_csv_masked, write_matrix,
    Image, MatrixFormat,
};
use ncarl::spectral::DEFAULT_RANK_THRESHOLD;
use ncarl::{
    apply_mask, generate_synthetic, mask_known_entries, mse, numeric_rank, solve, Mask, MaskSpec,
    MaskedMatrix, NoiseLevel, SolverConfig, SyntheticSpec,
};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::manifest::{InputFormat, MaskChoice, Run};

pub const METRICS_HEADER: &str =
    "dataset,variant,epsilon,alpha,gamma,k,mse,iterations,seconds,numeric_rank";
pub const TRACE_HEADER: &str = "iter,objective,constraint_residual";

/// A loaded and masked instance, ready to be solved under any configuration.
pub struct Prepared {
    pub dataset: String,
    /// Fraction of the known entries hidden from the solver.
    pub epsilon: f64,
    /// One problem per channel; a single one for matrices.
    pub problems: Vec<MaskedMatrix>,
    /// Reference values per channel, scored on `eval`.
    pub references: Vec<DMatrix<f64>>,
    pub eval: Mask,
    pub output: OutputKind,
}

pub enum OutputKind {
    Matrix(MatrixFormat),
    Image { maxval: u16, binary: bool },
}

/// Result of solving every channel of a prepared instance.
pub struct Outcome {
    pub x: Vec<DMatrix<f64>>,
    pub mse: f64,
    pub iterations: usize,
    pub seconds: f64,
    pub numeric_rank: usize,
    /// `(objective, constraint_residual)` per iteration, summed (resp. maximized) over channels.
    pub trace: Vec<(f64, f64)>,
}

fn train_mask(known: &MaskedMatrix, choice: &MaskChoice, seed: u64) -> CliResult<Mask> {
    let (m, n) = (known.nrows(), known.ncols());
    Ok(match choice {
        MaskChoice::Rate(rate) if known.observed_count() == m * n => {
            MaskSpec::random(*rate, seed).build(m, n)?
        }
        MaskChoice::Rate(rate) => mask_known_entries(known, *rate, seed)?.0.mask().clone(),
        MaskChoice::Block(spec) => known.mask().zip_map(&spec.build(m, n)?, |k, b| k && b),
    })
}

fn epsilon_of(choice: &MaskChoice, known: usize, train: &Mask) -> f64 {
    match choice {
        MaskChoice::Rate(rate) => *rate,
        MaskChoice::Block(_) => {
            let kept = train.iter().filter(|&&p| p).count();
            (known - kept) as f64 / known as f64
        }
    }
}

pub fn prepare(run: &Run) -> CliResult<Prepared> {
    match run.format {
        Some(f) if f.is_image() => prepare_image(run),
        f => prepare_matrix(run, f),
    }
}

fn prepare_matrix(run: &Run, format: Option<InputFormat>) -> CliResult<Prepared> {
    let format = format.map(|f| match f {
        InputFormat::Coo => MatrixFormat::Coo,
        _ => MatrixFormat::Csv,
    });
    let (known, format) = read_matrix_file(&run.input, format)?;
    if known.observed_count() == 0 {
        return Err(CliError::Config(format!(
            "{} has no observed entries",
            run.input.display()
        )));
    }
    let train = train_mask(&known, &run.mask, run.seed)?;
    let epsilon = epsilon_of(&run.mask, known.observed_count(), &train);
    let (reference, eval) = match &run.truth {
        Some(path) => {
            let (truth, _) = read_matrix_file(path, None)?;
            if truth.values().shape() != known.values().shape()
                || truth.observed_count() != truth.values().len()
            {
                return Err(CliError::Config(format!(
                    "{} must be a fully observed {}x{} matrix",
                    path.display(),
                    known.nrows(),
                    known.ncols()
                )));
            }
            (truth.values().clone(), train.map(|p| !p))
        }
        None => (
            known.values().clone(),
            known.mask().zip_map(&train, |k, t| k && !t),
        ),
    };
    let problem = MaskedMatrix::new(known.values().clone(), train)?;
    Ok(Prepared {
        dataset: run.dataset.clone(),
        epsilon,
        problems: vec![problem],
        references: vec![reference],
        eval,
        output: OutputKind::Matrix(format),
    })
}

fn prepare_image(run: &Run) -> CliResult<Prepared> {
    if run.truth.is_some() {
        return Err(CliError::Config(
            "--truth applies to matrix inputs only".into(),
        ));
    }
    let bytes = std::fs::read(&run.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", run.input.display())))?;
    let image = Image::parse(&bytes)?;
    let binary = matches!(bytes.get(..2), Some(b"P5") | Some(b"P6"));
    let channels: Vec<DMatrix<f64>> = if run.gray || image.channels == 1 {
        vec![image.luma()]
    } else {
        (0..image.channels).map(|c| image.channel(c)).collect()
    };
    let (h, w) = (image.height, image.width);
    let train = match &run.mask {
        MaskChoice::Rate(rate) => MaskSpec::random(*rate, run.seed).build(h, w)?,
        MaskChoice::Block(spec) => spec.build(h, w)?,
    };
    let epsilon = epsilon_of(&run.mask, h * w, &train);
    let problems = channels
        .iter()
        .map(|c| MaskedMatrix::new(c.clone(), train.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared {
        dataset: run.dataset.clone(),
        epsilon,
        problems,
        references: channels,
        eval: train.map(|p| !p),
        output: OutputKind::Image {
            maxval: image.maxval,
            binary,
        },
    })
}

/// Solves every channel under `config`.
pub fn execute(prepared: &Prepared, config: &SolverConfig) -> CliResult<Outcome> {
    let mut x = Vec::with_capacity(prepared.problems.len());
    let (mut iterations, mut seconds, mut rank) = (0, 0.0, 0);
    let mut traces = Vec::new();
    for problem in &prepared.problems {
        let report = solve(problem, config)?;
        iterations = iterations.max(report.iterations);
        seconds += report.wall_time.as_secs_f64();
        rank = rank.max(numeric_rank(&report.x, DEFAULT_RANK_THRESHOLD));
        traces.push((report.objective_trace, report.constraint_residual_trace));
        x.push(report.x);
    }
    let trace = (0..iterations)
        .map(|t| {
            traces.iter().fold((0.0, 0.0_f64), |(obj, res), (o, r)| {
                let at = t.min(o.len() - 1);
                (obj + o[at], res.max(r[at]))
            })
        })
        .collect();
    Ok(Outcome {
        mse: stacked_mse(&x, &prepared.references, &prepared.eval)?,
        x,
        iterations,
        seconds,
        numeric_rank: rank,
        trace,
    })
}

/// Error over `eval` with all channels pooled; zero when nothing is held out.
fn stacked_mse(x: &[DMatrix<f64>], references: &[DMatrix<f64>], eval: &Mask) -> CliResult<f64> {
    if !eval.iter().any(|&e| e) {
        return Ok(0.0);
    }
    if x.len() == 1 {
        return Ok(mse(&x[0], &references[0], eval)?);
    }
    let (rows, cols) = eval.shape();
    let stack = |ms: &[DMatrix<f64>]| {
        DMatrix::from_fn(rows * ms.len(), cols, |i, j| ms[i / rows][(i % rows, j)])
    };
    let eval = Mask::from_fn(rows * x.len(), cols, |i, j| eval[(i % rows, j)]);
    Ok(mse(&stack(x), &stack(references), &eval)?)
}

pub fn metrics_row(
    dataset: &str,
    epsilon: f64,
    config: &SolverConfig,
    outcome: &Outcome,
    timing: bool,
) -> String {
    format!(
        "{dataset},{},{},{},{},{},{},{},{},{}",
        config.variant.name(),
        fmt_real(epsilon),
        fmt_real(config.alpha),
        fmt_real(config.gamma),
        config.k,
        fmt_real(outcome.mse),
        outcome.iterations,
        fmt_real(if timing { outcome.seconds } else { 0.0 }),
        outcome.numeric_rank
    )
}

fn failed_row(dataset: &str, epsilon: f64, config: &SolverConfig) -> String {
    format!(
        "{dataset},{},{},{},{},{},NaN,0,{},0",
        config.variant.name(),
        fmt_real(epsilon),
        fmt_real(config.alpha),
        fmt_real(config.gamma),
        config.k,
        fmt_real(0.0)
    )
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_trace(path: &Path, trace: &[(f64, f64)]) -> CliResult<()> {
    let mut text = format!("{TRACE_HEADER}\n");
    for (t, (obj, res)) in trace.iter().enumerate() {
        writeln!(text, "{},{},{}", t + 1, fmt_real(*obj), fmt_real(*res)).unwrap();
    }
    write_text(path, &text)
}

pub fn write_output(path: &Path, prepared: &Prepared, x: &[DMatrix<f64>]) -> CliResult<()> {
    let bytes = match prepared.output {
        OutputKind::Matrix(format) => {
            let mut buf = Vec::new();
            write_matrix(&mut buf, &x[0], format)?;
            buf
        }
        OutputKind::Image { maxval, binary } => Image::from_channels(x, maxval)?.encode(binary),
    };
    write_atomic(path, &bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Runs one completion and writes every requested output.
pub fn complete(run: &Run) -> CliResult<Outcome> {
    let prepared = prepare(run)?;
    let outcome = execute(&prepared, &run.config)?;
    if let Some(path) = &run.out {
        write_output(path, &prepared, &outcome.x)?;
    }
    if let Some(path) = &run.metrics {
        let row = metrics_row(
            &prepared.dataset,
            prepared.epsilon,
            &run.config,
            &outcome,
            run.timing,
        );
        write_text(path, &format!("{METRICS_HEADER}\n{row}\n"))?;
    }
    if let Some(path) = &run.trace {
        write_trace(path, &outcome.trace)?;
    }
    Ok(outcome)
}

/// Grid search axes; an empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default)]
pub struct GridAxes {
    pub alphas: Vec<f64>,
    pub ks: Vec<usize>,
    pub gammas: Vec<f64>,
}

pub struct GridCell {
    pub config: SolverConfig,
    pub result: CliResult<Outcome>,
}

pub struct GridSummary {
    pub cells: Vec<GridCell>,
    /// Index of the cell with the lowest error.
    pub best: Option<usize>,
}

impl GridAxes {
    pub fn cells(&self, base: &SolverConfig) -> Vec<SolverConfig> {
        let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let ks = if self.ks.is_empty() {
            vec![base.k]
        } else {
            self.ks.clone()
        };
        let mut out = Vec::new();
        for &alpha in &or(&self.alphas, base.alpha) {
            for &k in &ks {
                for &gamma in &or(&self.gammas, base.gamma) {
                    out.push(SolverConfig {
                        alpha,
                        k,
                        gamma,
                        ..*base
                    });
                }
            }
        }
        out
    }
}

/// Cartesian sweep, one metrics row per cell in `alpha`, `k`, `gamma` order.
pub fn grid(run: &Run, axes: &GridAxes) -> CliResult<GridSummary> {
    let prepared = prepare(run)?;
    let configs = axes.cells(&run.config);
    let results: Vec<CliResult<Outcome>> = configs
        .par_iter()
        .map(|c| {
            c.validate()?;
            execute(&prepared, c)
        })
        .collect();
    let cells: Vec<GridCell> = configs
        .into_iter()
        .zip(results)
        .map(|(config, result)| GridCell { config, result })
        .collect();

    let mut best: Option<usize> = None;
    for (i, cell) in cells.iter().enumerate() {
        if let Ok(o) = &cell.result {
            let better = match best {
                None => true,
                Some(b) => o.mse < cells[b].result.as_ref().map_or(f64::INFINITY, |p| p.mse),
            };
            if better {
                best = Some(i);
            }
        }
    }
    if best.is_none() {
        if let Some(cell) = cells.into_iter().next() {
            return Err(cell.result.err().expect("no cell succeeded"));
        }
        return Err(CliError::Config("empty grid".into()));
    }

    if let Some(path) = &run.metrics {
        let mut text = format!("{METRICS_HEADER}\n");
        for cell in &cells {
            let row = match &cell.result {
                Ok(o) => metrics_row(
                    &prepared.dataset,
                    prepared.epsilon,
                    &cell.config,
                    o,
                    run.timing,
                ),
                Err(_) => failed_row(&prepared.dataset, prepared.epsilon, &cell.config),
            };
            text.push_str(&row);
            text.push('\n');
        }
        write_text(path, &text)?;
    }
    if let (Some(path), Some(b)) = (&run.out, best) {
        write_output(
            path,
            &prepared,
            &cells[b].result.as_ref().expect("best cell succeeded").x,
        )?;
    }
    Ok(GridSummary { cells, best })
}

#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub spec: SyntheticSpec,
    pub mask: MaskChoice,
    pub format: MatrixFormat,
    pub out_dir: PathBuf,
}

/// Files written by [`synth`].
pub struct SynthFiles {
    pub truth: PathBuf,
    pub noisy: PathBuf,
    pub masked: PathBuf,
    pub holdout: PathBuf,
}

/// Writes the ground truth, its noisy copy, the masked noisy copy and the
/// list of hidden entries.
pub fn synth(req: &SynthRequest) -> CliResult<SynthFiles> {
    if !req.out_dir.is_dir() {
        return Err(CliError::Io(format!(
            "{} is not a directory",
            req.out_dir.display()
        )));
    }
    let (truth, noisy) = generate_synthetic(&req.spec)?;
    let spec = match req.mask {
        MaskChoice::Rate(rate) => MaskSpec::random(rate, req.spec.seed),
        MaskChoice::Block(spec) => spec,
    };
    let masked = apply_mask(&noisy, &spec)?;
    let ext = match req.format {
        MatrixFormat::Csv => "csv",
        MatrixFormat::Coo => "coo",
    };
    let files = SynthFiles {
        truth: req.out_dir.join(format!("truth.{ext}")),
        noisy: req.out_dir.join(format!("noisy.{ext}")),
        masked: req.out_dir.join(format!("masked.{ext}")),
        holdout: req.out_dir.join("holdout.csv"),
    };
    for (path, x) in [(&files.truth, &truth), (&files.noisy, &noisy)] {
        let mut buf = Vec::new();
        write_matrix(&mut buf, x, req.format)?;
        write_atomic(path, &buf)?;
    }
    let mut buf = Vec::new();
    match req.format {
        MatrixFormat::Csv => write_csv_masked(&mut buf, &masked)?,
        MatrixFormat::Coo => write_coo_masked(&mut buf, &masked)?,
    }
    write_atomic(&files.masked, &buf)?;
    let mut text = String::from("i,j\n");
    for i in 0..masked.nrows() {
        for j in 0..masked.ncols() {
            if !masked.mask()[(i, j)] {
                writeln!(text, "{i},{j}").unwrap();
            }
        }
    }
    write_text(&files.holdout, &text)?;
    Ok(files)
}

pub fn synthetic_spec(
    rows: usize,
    cols: usize,
    rank: usize,
    noise_fraction: f64,
    noise_sigma: f64,
    seed: u64,
) -> SyntheticSpec {
    SyntheticSpec {
        rows,
        cols,
        rank,
        noise_fraction,
        noise: NoiseLevel::RelativeToRms(noise_sigma),
        seed,
    }
}
