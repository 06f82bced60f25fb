//! Kernel ridge regression at desk scale: solve `(K + λI)α = Y` for a
//! Gaussian kernel `K_ij = exp(−γ‖x_i − x_j‖²)` with any solver in the crate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constants::{self, ConstantsSource};
use crate::error::{ensure, Error, Result};
use crate::linalg;
use crate::matrices::{LinearSystem, SpdMatrix};
use crate::rng;
use crate::sketch::SketchSampler;
use crate::solvers::{self, ConvergenceTrace, RunOptions, SolverKind};

/// Largest `n` for which the dense kernel is assembled.
pub const MAX_POINTS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        ensure(n >= 1 && d >= 1, || format!("dataset needs n >= 1 and d >= 1, got {n}x{d}"))?;
        ensure(y.len() == n, || format!("{} targets for {n} rows", y.len()))?;
        for i in 0..n {
            ensure(x.row(i).iter().all(|v| v.is_finite()) && y[i].is_finite(), || {
                format!("row {i} has a non-finite entry")
            })?;
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// `K_ij = exp(−γ‖x_i − x_j‖²)` with distances from the expanded form
/// `‖x_i‖² + ‖x_j‖² − 2x_iᵀx_j`, clamped at zero. The diagonal is exactly 1.
pub fn gaussian_kernel(data: &Dataset, gamma: f64) -> Result<DMatrix<f64>> {
    ensure(gamma > 0.0 && gamma.is_finite(), || format!("gamma = {gamma} must be positive"))?;
    let n = data.len();
    let gram = &data.x * data.x.transpose();
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
            let v = (-gamma * d2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `d` feature columns followed by one target column; no header, `#` lines
/// are comments.
pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::parse(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::parse(line, format!("row has {} columns, expected {w}", rec.len())));
        }
        if w < 2 {
            return Err(Error::parse(line, "need at least one feature and one target column"));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(line, format!("column {}: bad number `{s}`", c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    let w = width.ok_or_else(|| Error::parse(1, "no rows"))?;
    let n = rows.len();
    let x = DMatrix::from_fn(n, w - 1, |i, j| rows[i][j]);
    let y = DVector::from_fn(n, |i, _| rows[i][w - 1]);
    Dataset::new(x, y)
}

pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset_csv(&text)
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    for i in 0..data.len() {
        for v in data.x.row(i).iter() {
            out.push_str(&format!("{v:e},"));
        }
        out.push_str(&format!("{:e}\n", data.y[i]));
    }
    out
}

pub fn write_dataset_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_csv(data)).map_err(|e| Error::io(path, e))
}

/// Two unit-variance Gaussian blobs centred at `±e₁`, labelled `±1`, first
/// half positive. Drawn from the data stream of `seed`.
pub fn two_blobs(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    ensure(n >= 1 && d >= 1, || "two_blobs needs n >= 1 and d >= 1".into())?;
    let mut r = rng::stream(seed, rng::DATA);
    let half = n.div_ceil(2);
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let label = if i < half { 1.0 } else { -1.0 };
        for j in 0..d {
            x[(i, j)] = r.sample::<f64, _>(StandardNormal);
        }
        x[(i, 0)] += label;
        y[i] = label;
    }
    Dataset::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Fixed,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrSolverConfig {
    pub kind: SolverKind,
    pub sampler: SamplerKind,
    pub block_size: usize,
    pub constants: ConstantsSource,
    pub iters: usize,
    pub seed: u64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub solver: KrrSolverConfig,
}

impl KrrConfig {
    /// `γ = 1/d` and `λ = 1e-4 · n`.
    pub fn defaults(data: &Dataset, solver: KrrSolverConfig) -> Self {
        Self { gamma: 1.0 / data.dim() as f64, lambda: 1e-4 * data.len() as f64, solver }
    }
}

#[derive(Debug, Clone)]
pub struct KrrResult {
    pub alpha: DVector<f64>,
    pub trace: ConvergenceTrace,
    pub final_rel_err: f64,
    /// `‖(K + λI)α − Y‖₂ / ‖Y‖₂`.
    pub rel_residual: f64,
    /// `√(κ(K + λI) · rel_err)`, which bounds `rel_residual`.
    pub residual_bound: f64,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
}

/// `K + λI` as a validated SPD matrix.
pub fn regularized_kernel(data: &Dataset, gamma: f64, lambda: f64) -> Result<SpdMatrix> {
    ensure(lambda > 0.0 && lambda.is_finite(), || format!("lambda = {lambda} must be positive"))?;
    let n = data.len();
    let k = gaussian_kernel(data, gamma)?;
    SpdMatrix::new(k + DMatrix::identity(n, n) * lambda)
}

pub fn krr_solve(data: &Dataset, cfg: &KrrConfig) -> Result<KrrResult> {
    let n = data.len();
    ensure(n <= MAX_POINTS, || {
        format!("dense kernel assembly is limited to n <= {MAX_POINTS} (got {n}); larger problems are out of scope")
    })?;
    ensure(cfg.gamma > 0.0, || format!("gamma = {} must be positive", cfg.gamma))?;
    let s = &cfg.solver;
    let a = regularized_kernel(data, cfg.gamma, cfg.lambda)?;
    let sys = LinearSystem::new(a, data.y.clone())?;
    let p = s.block_size.min(n);
    let sampler = match s.sampler {
        SamplerKind::Fixed => SketchSampler::fixed_partition(n, p)?,
        SamplerKind::Random => SketchSampler::uniform(n, p)?,
    };
    let consts = if s.kind.needs_constants() {
        Some(constants::resolve_constants(s.constants, &sys.a, &sampler, None, s.seed)?)
    } else {
        None
    };
    let mut opts = RunOptions::new(s.iters, s.seed);
    opts.threshold = s.threshold;
    let sol = solvers::run_solver(s.kind, &sys, &sampler, &DVector::zeros(n), consts.as_ref(), &opts)?;
    let rel_residual = sys.residual(&sol.x).norm() / sys.b.norm();
    let eig = sys.a.eigen();
    let final_rel_err = sol.trace.final_rel_err();
    Ok(KrrResult {
        residual_bound: (eig.max() / eig.min() * final_rel_err).sqrt(),
        alpha: sol.x,
        trace: sol.trace,
        final_rel_err,
        rel_residual,
        mu: consts.map(|c| c.mu()),
        nu: consts.map(|c| c.nu()),
    })
}

/// Largest negative eigenvalue magnitude of `K`, for PSD slack checks.
pub fn kernel_psd_slack(k: &DMatrix<f64>) -> f64 {
    (-linalg::lambda_min(k)).max(0.0)
}
