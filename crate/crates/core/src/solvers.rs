//! Iterative solvers: randomized block Gauss-Seidel (plain and accelerated),
//! accelerated coordinate descent and ACDM on fixed partitions, block
//! Kaczmarz (plain and accelerated) and conjugate gradient.
//!
//! Every solver returns a [`Solution`] holding the final iterate and a
//! [`ConvergenceTrace`] with one row per iteration, row `k` describing the
//! iterate after `k` steps. The Gauss-Seidel family tracks residuals
//! incrementally (`r ← r − A[:, J] w`), so a step costs `O(np + p³)`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants;
use crate::error::{ensure, Error, Result};
use crate::linalg;
use crate::matrices::{LinearSystem, SpdMatrix};
use crate::rng;
use crate::sketch::{check_partition, IndexSet, SamplerMode, SketchSampler};

/// `(μ, ν, τ = √(μ/ν), L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelConstants {
    mu: f64,
    nu: f64,
    tau: f64,
    lipschitz: f64,
}

impl AccelConstants {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        ensure(mu > 0.0 && mu <= 1.0, || format!("mu = {mu} must lie in (0, 1]"))?;
        ensure(nu >= 1.0 && nu.is_finite(), || format!("nu = {nu} must be finite and >= 1"))?;
        let tau = (mu / nu).sqrt();
        ensure(tau > 0.0 && tau <= 1.0, || format!("tau = {tau} must lie in (0, 1]"))?;
        Ok(Self { mu, nu, tau, lipschitz: 1.0 })
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        ensure(lipschitz > 0.0, || format!("lipschitz = {lipschitz} must be positive"))?;
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub seconds: f64,
    pub rel_err: f64,
    pub f_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub solver_id: String,
    pub seed: u64,
}

pub const TRACE_HEADER: [&str; 4] = ["iter", "seconds", "rel_err", "f_value"];

impl ConvergenceTrace {
    pub fn new(solver_id: impl Into<String>, seed: u64) -> Self {
        Self { rows: Vec::new(), solver_id: solver_id.into(), seed }
    }

    fn push(&mut self, seconds: f64, rel_err: f64, f_value: f64) {
        let iter = self.rows.len();
        self.rows.push(TraceRow { iter, seconds, rel_err, f_value });
    }

    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn final_rel_err(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.rel_err)
    }

    /// First iteration whose `rel_err` is at most `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.rel_err <= threshold).map(|r| r.iter)
    }

    /// Seconds spent in updates until `iterations_to(threshold)`.
    pub fn seconds_to(&self, threshold: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.rel_err <= threshold).map(|r| r.seconds)
    }

    pub fn rel_errs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rel_err).collect()
    }

    /// CSV with optional `# key=value` preamble lines.
    pub fn write_csv<W: Write>(&self, out: W, metadata: &[(String, String)]) -> Result<()> {
        let mut out = out;
        let io = |e: std::io::Error| Error::io("<trace>", e);
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}").map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::numerical(format!("csv write failed: {e}"));
        w.write_record(TRACE_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.iter.to_string(),
                format!("{:e}", r.seconds),
                format!("{:e}", r.rel_err),
                format!("{:e}", r.f_value),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_csv_string(&self, metadata: &[(String, String)]) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, metadata).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: &[(String, String)]) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), metadata)
    }

    /// Parses a trace written by [`ConvergenceTrace::write_csv`]. Returns the
    /// trace and its metadata lines; `seed` and `solver` keys are picked up
    /// when present.
    pub fn read_csv<R: Read>(input: R) -> Result<(Self, Vec<(String, String)>)> {
        let mut text = String::new();
        let mut input = input;
        input.read_to_string(&mut text).map_err(|e| Error::io("<trace>", e))?;
        let mut meta = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.push((k.to_string(), v.to_string()));
                }
            }
        }
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
        if header.iter().ne(TRACE_HEADER) {
            return Err(Error::parse(1, format!("unexpected trace header {header:?}")));
        }
        let lookup = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let seed = lookup("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
        let mut trace = Self::new(lookup("solver").unwrap_or_default(), seed);
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::parse(0, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(line, format!("bad field {i}")))
            };
            let iter: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(line, "bad iter"))?;
            if iter != trace.rows.len() {
                return Err(Error::parse(line, "iter column must count up from 0"));
            }
            trace.push(num(1)?, num(2)?, num(3)?);
        }
        Ok((trace, meta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub iters: usize,
    pub seed: u64,
    /// Stop as soon as the tracked error reaches this value.
    pub threshold: Option<f64>,
    /// Keep every tracked iterate in [`Solution::iterates`].
    pub keep_iterates: bool,
}

impl RunOptions {
    pub fn new(iters: usize, seed: u64) -> Self {
        Self { iters, seed, threshold: None, keep_iterates: false }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    pub fn keeping_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub trace: ConvergenceTrace,
    pub iterates: Vec<DVector<f64>>,
}

/// Pseudo-inverses of `SᵀAS`, cached for samplers with a finite stored
/// support and computed fresh otherwise.
struct BlockInverses<'a> {
    a: &'a DMatrix<f64>,
    cache: HashMap<IndexSet, DMatrix<f64>>,
}

impl<'a> BlockInverses<'a> {
    fn new(a: &'a DMatrix<f64>, sampler: &SketchSampler) -> Self {
        let mut cache = HashMap::new();
        let blocks: &[IndexSet] = match sampler.mode() {
            SamplerMode::FixedPartition(blocks) => blocks,
            SamplerMode::Weighted { blocks, .. } => blocks,
            SamplerMode::UniformRandom { .. } => &[],
        };
        for j in blocks {
            cache
                .entry(j.clone())
                .or_insert_with(|| linalg::pinv_sym(&linalg::principal_submatrix(a, j.as_slice())));
        }
        Self { a, cache }
    }

    /// `(SᵀAS)† Sᵀ r`.
    fn solve(&self, j: &IndexSet, r: &DVector<f64>) -> DVector<f64> {
        let rj = linalg::gather(r, j.as_slice());
        match self.cache.get(j) {
            Some(inv) => inv * rj,
            None => linalg::pinv_sym(&linalg::principal_submatrix(self.a, j.as_slice())) * rj,
        }
    }
}

/// `v ← v + c · S w`.
fn scatter_axpy(v: &mut DVector<f64>, j: &IndexSet, w: &DVector<f64>, c: f64) {
    for (k, &i) in j.as_slice().iter().enumerate() {
        v[i] += c * w[k];
    }
}

/// `r ← r + c · A S w`.
fn column_axpy(r: &mut DVector<f64>, a: &DMatrix<f64>, j: &IndexSet, w: &DVector<f64>, c: f64) {
    for (k, &i) in j.as_slice().iter().enumerate() {
        r.axpy(c * w[k], &a.column(i), 1.0);
    }
}

/// `S(SᵀAS)†Sᵀ r` as an `n`-vector.
pub fn block_step(a: &SpdMatrix, residual: &DVector<f64>, j: &IndexSet) -> DVector<f64> {
    let inv = linalg::pinv_sym(&linalg::principal_submatrix(a.matrix(), j.as_slice()));
    let w = inv * linalg::gather(residual, j.as_slice());
    let mut out = DVector::zeros(a.n());
    scatter_axpy(&mut out, j, &w, 1.0);
    out
}

/// One step of the accelerated recurrence from `(y, z)` with block `j`:
/// returns `(y', z')`.
pub fn accel_transition(
    sys: &LinearSystem,
    consts: &AccelConstants,
    y: &DVector<f64>,
    z: &DVector<f64>,
    j: &IndexSet,
) -> (DVector<f64>, DVector<f64>) {
    let tau = consts.tau;
    let x = (y + z * tau) / (1.0 + tau);
    let g = block_step(&sys.a, &sys.residual(&x), j);
    let y_next = &x - &g;
    let z_next = z + (&x - z) * tau - g * (tau / consts.mu);
    (y_next, z_next)
}

/// Error bookkeeping for the SPD solvers: with `e = x − x_*` and `r = Ae`,
/// the relative A-norm error is `eᵀr / x_*ᵀb` and `f(x) = ½xᵀr − ½xᵀb`.
struct SpdTracker<'a> {
    sys: &'a LinearSystem,
    denom: f64,
}

impl<'a> SpdTracker<'a> {
    fn new(sys: &'a LinearSystem) -> Result<Self> {
        let denom = sys.a.norm_sq(&sys.x_star);
        ensure(denom > 0.0, || "relative error undefined for x_star = 0".into())?;
        Ok(Self { sys, denom })
    }

    fn rel_err(&self, x: &DVector<f64>, r: &DVector<f64>) -> f64 {
        ((x - &self.sys.x_star).dot(r) / self.denom).max(0.0)
    }

    fn f_value(&self, x: &DVector<f64>, r: &DVector<f64>) -> f64 {
        0.5 * x.dot(r) - 0.5 * x.dot(&self.sys.b)
    }
}

fn check_dims(sys: &LinearSystem, sampler: &SketchSampler, x0: &DVector<f64>) -> Result<()> {
    ensure(x0.len() == sys.n(), || {
        format!("x0 has length {}, system has n = {}", x0.len(), sys.n())
    })?;
    ensure(sampler.n() == sys.n(), || {
        format!("sampler is over n = {}, system has n = {}", sampler.n(), sys.n())
    })
}

struct Recorder<'a> {
    tracker: SpdTracker<'a>,
    trace: ConvergenceTrace,
    iterates: Vec<DVector<f64>>,
    opts: &'a RunOptions,
    seconds: f64,
}

impl<'a> Recorder<'a> {
    fn new(sys: &'a LinearSystem, id: &str, opts: &'a RunOptions) -> Result<Self> {
        Ok(Self {
            tracker: SpdTracker::new(sys)?,
            trace: ConvergenceTrace::new(id, opts.seed),
            iterates: Vec::new(),
            opts,
            seconds: 0.0,
        })
    }

    /// Records the iterate and reports whether the run should stop.
    fn record(&mut self, x: &DVector<f64>, r: &DVector<f64>) -> bool {
        let err = self.tracker.rel_err(x, r);
        self.trace.push(self.seconds, err, self.tracker.f_value(x, r));
        if self.opts.keep_iterates {
            self.iterates.push(x.clone());
        }
        self.trace.iterations() >= self.opts.iters || self.opts.threshold.is_some_and(|t| err <= t)
    }

    fn finish(self, x: DVector<f64>) -> Solution {
        Solution { x, trace: self.trace, iterates: self.iterates }
    }
}

/// `x ← x − S(SᵀAS)†Sᵀ(Ax − b)` with `S` drawn from `sampler`.
pub fn gauss_seidel(
    sys: &LinearSystem,
    sampler: &SketchSampler,
    x0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<Solution> {
    check_dims(sys, sampler, x0)?;
    let a = sys.a.matrix();
    let blocks = BlockInverses::new(a, sampler);
    let mut rng = rng::stream(opts.seed, rng::SKETCH);
    let mut rec = Recorder::new(sys, &format!("gs-{}", sampler.name()), opts)?;
    let mut x = x0.clone();
    let mut r = sys.residual(&x);
    let mut done = rec.record(&x, &r);
    while !done {
        let j = sampler.sample(&mut rng);
        let t = Instant::now();
        let w = blocks.solve(&j, &r);
        scatter_axpy(&mut x, &j, &w, -1.0);
        column_axpy(&mut r, a, &j, &w, -1.0);
        rec.seconds += t.elapsed().as_secs_f64();
        done = rec.record(&x, &r);
    }
    Ok(rec.finish(x))
}

pub fn accel_gauss_seidel(
    sys: &LinearSystem,
    sampler: &SketchSampler,
    x0: &DVector<f64>,
    consts: &AccelConstants,
    opts: &RunOptions,
) -> Result<Solution> {
    accel_gauss_seidel_from(sys, sampler, x0, x0, consts, opts)
}

/// The accelerated recurrence started from a separate pair `(y₀, z₀)`; the
/// trace follows `y_k`.
pub fn accel_gauss_seidel_from(
    sys: &LinearSystem,
    sampler: &SketchSampler,
    y0: &DVector<f64>,
    z0: &DVector<f64>,
    consts: &AccelConstants,
    opts: &RunOptions,
) -> Result<Solution> {
    check_dims(sys, sampler, y0)?;
    check_dims(sys, sampler, z0)?;
    let (tau, mu) = (consts.tau, consts.mu);
    ensure(tau > 0.0 && tau <= 1.0, || format!("tau = {tau} must lie in (0, 1]"))?;
    let a = sys.a.matrix();
    let blocks = BlockInverses::new(a, sampler);
    let mut rng = rng::stream(opts.seed, rng::SKETCH);
    let mut rec = Recorder::new(sys, &format!("accel-gs-{}", sampler.name()), opts)?;
    let (mut y, mut z) = (y0.clone(), z0.clone());
    let (mut ry, mut rz) = (sys.residual(&y), sys.residual(&z));
    let mut done = rec.record(&y, &ry);
    while !done {
        let j = sampler.sample(&mut rng);
        let t = Instant::now();
        let x = (&y + &z * tau) / (1.0 + tau);
        let rx = (&ry + &rz * tau) / (1.0 + tau);
        let w = blocks.solve(&j, &rx);
        // z' = (1 − τ) z + τ x − (τ/μ) S w, and the same for its residual.
        z = &z * (1.0 - tau) + &x * tau;
        rz = &rz * (1.0 - tau) + &rx * tau;
        scatter_axpy(&mut z, &j, &w, -tau / mu);
        column_axpy(&mut rz, a, &j, &w, -tau / mu);
        y = x;
        ry = rx;
        scatter_axpy(&mut y, &j, &w, -1.0);
        column_axpy(&mut ry, a, &j, &w, -1.0);
        rec.seconds += t.elapsed().as_secs_f64();
        done = rec.record(&y, &ry);
    }
    Ok(rec.finish(y))
}

fn partition_sampler(n: usize, blocks: &[IndexSet]) -> Result<SketchSampler> {
    check_partition(n, blocks)?;
    SketchSampler::partition(n, blocks.to_vec())
}

/// Accelerated coordinate descent over a partition with `B_i = A_{J_i}`,
/// `L_i = 1`, `p_i = 1/m`, strong convexity `μ = m · μ_part` and
/// `τ = √μ / m`. The trace follows `y_k`.
pub fn accel_coordinate_descent(
    sys: &LinearSystem,
    blocks: &[IndexSet],
    x0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<Solution> {
    let sampler = partition_sampler(sys.n(), blocks)?;
    check_dims(sys, &sampler, x0)?;
    let m = blocks.len() as f64;
    let mu = m * constants::mu_part(&sys.a, blocks)?;
    let tau = mu.sqrt() / m;
    let prob = 1.0 / m;
    let a = sys.a.matrix();
    let inverses = BlockInverses::new(a, &sampler);
    let mut rng = rng::stream(opts.seed, rng::SKETCH);
    let mut rec = Recorder::new(sys, "accel-cd", opts)?;
    let (mut y, mut z) = (x0.clone(), x0.clone());
    let mut done = rec.record(&y, &sys.residual(&y));
    while !done {
        let j = sampler.sample(&mut rng);
        let t = Instant::now();
        let x = (&y + &z * tau) / (1.0 + tau);
        let grad = sys.residual(&x);
        let w = inverses.solve(&j, &grad);
        y = x.clone();
        scatter_axpy(&mut y, &j, &w, -1.0);
        z = &z + (&x - &z) * tau;
        scatter_axpy(&mut z, &j, &w, -tau / (mu * prob));
        rec.seconds += t.elapsed().as_secs_f64();
        done = rec.record(&y, &sys.residual(&y));
    }
    Ok(rec.finish(y))
}

/// Scalar sequences of ACDM and the per-block data it runs on.
#[derive(Debug, Clone)]
pub struct AcdmState {
    pub big_a: f64,
    pub big_b: f64,
    pub a_next: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub blocks: Vec<AcdmBlock>,
}

#[derive(Debug, Clone)]
pub struct AcdmBlock {
    pub indices: IndexSet,
    pub b_inv: DMatrix<f64>,
    pub lipschitz: f64,
    pub prob: f64,
}

impl AcdmState {
    /// Modified initialization `A₀ = 1`, `B₀ = σ`.
    pub fn new(a: &SpdMatrix, blocks: &[IndexSet], sigma: f64) -> Result<Self> {
        check_partition(a.n(), blocks)?;
        let m = blocks.len() as f64;
        ensure(blocks.len() >= 2, || "ACDM needs at least two blocks".into())?;
        ensure(sigma > 0.0 && sigma < m * m, || {
            format!("sigma = {sigma} must lie in (0, m^2) for m = {m}")
        })?;
        let blocks = blocks
            .iter()
            .map(|j| AcdmBlock {
                indices: j.clone(),
                b_inv: linalg::pinv_sym(&linalg::principal_submatrix(a.matrix(), j.as_slice())),
                lipschitz: 1.0,
                prob: 1.0 / m,
            })
            .collect();
        Ok(Self { big_a: 1.0, big_b: sigma, a_next: 0.0, alpha: 0.0, beta: 0.0, sigma, blocks })
    }

    /// `S_{1/2} = Σ √L_i`.
    pub fn s_half(&self) -> f64 {
        self.blocks.iter().map(|b| b.lipschitz.sqrt()).sum()
    }

    /// Advances `(A, B)` by the positive root of `a² S² = (A + a)(B + σa)`.
    pub fn advance(&mut self) {
        let s2 = self.s_half().powi(2);
        let (big_a, big_b, sigma) = (self.big_a, self.big_b, self.sigma);
        let qa = s2 - sigma;
        let qb = big_a * sigma + big_b;
        let disc = qb * qb + 4.0 * qa * big_a * big_b;
        assert!(qa > 0.0 && disc >= 0.0, "ACDM quadratic has no positive root");
        let a = (qb + disc.sqrt()) / (2.0 * qa);
        self.a_next = a;
        self.big_a = big_a + a;
        self.big_b = big_b + sigma * a;
        self.alpha = a / self.big_a;
        self.beta = sigma * a / self.big_b;
        // The recursion is homogeneous in (A, B, a); rescaling keeps long runs finite.
        if self.big_a > 1e200 {
            self.big_a *= 1e-200;
            self.big_b *= 1e-200;
            self.a_next *= 1e-200;
        }
    }
}

/// ACDM specialized to block Gauss-Seidel on a fixed partition, with the
/// initialization `A₀ = 1`, `B₀ = σ`. `σ` defaults to `m · μ_part`. The trace
/// follows `x_k`.
pub fn acdm(
    sys: &LinearSystem,
    blocks: &[IndexSet],
    x0: &DVector<f64>,
    sigma: Option<f64>,
    opts: &RunOptions,
) -> Result<Solution> {
    acdm_with_states(sys, blocks, x0, sigma, opts).map(|(s, _)| s)
}

/// As [`acdm`], also returning the scalar state after every step.
pub fn acdm_with_states(
    sys: &LinearSystem,
    blocks: &[IndexSet],
    x0: &DVector<f64>,
    sigma: Option<f64>,
    opts: &RunOptions,
) -> Result<(Solution, Vec<AcdmState>)> {
    let sampler = partition_sampler(sys.n(), blocks)?;
    check_dims(sys, &sampler, x0)?;
    let m = blocks.len() as f64;
    let sigma = match sigma {
        Some(s) => s,
        None => m * constants::mu_part(&sys.a, blocks)?,
    };
    let mut state = AcdmState::new(&sys.a, blocks, sigma)?;
    let index: HashMap<&IndexSet, usize> = blocks.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mut rng = rng::stream(opts.seed, rng::SKETCH);
    let mut rec = Recorder::new(sys, "acdm", opts)?;
    let mut states = Vec::new();
    let (mut x, mut z) = (x0.clone(), x0.clone());
    let mut done = rec.record(&x, &sys.residual(&x));
    while !done {
        let j = sampler.sample(&mut rng);
        let t = Instant::now();
        state.advance();
        let block = &state.blocks[index[&j]];
        let (alpha, beta) = (state.alpha, state.beta);
        let y = (&x * (1.0 - alpha) + &z * (alpha * (1.0 - beta))) / (1.0 - alpha * beta);
        let grad = sys.residual(&y);
        let w = &block.b_inv * linalg::gather(&grad, j.as_slice());
        x = y.clone();
        scatter_axpy(&mut x, &j, &w, -1.0 / block.lipschitz);
        z = &z * (1.0 - beta) + &y * beta;
        scatter_axpy(&mut z, &j, &w, -state.a_next / (state.big_b * block.prob));
        rec.seconds += t.elapsed().as_secs_f64();
        states.push(state.clone());
        done = rec.record(&x, &sys.residual(&x));
    }
    Ok((rec.finish(x), states))
}

/// A consistent overdetermined (or square) system `Ax = b`, `A` of full
/// column rank.
#[derive(Debug, Clone)]
pub struct KaczmarzSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub x_star: DVector<f64>,
}

impl KaczmarzSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        ensure(m >= 1 && n >= 1, || "empty matrix".into())?;
        ensure(b.len() == m, || format!("rhs has length {}, matrix has {m} rows", b.len()))?;
        ensure(m >= n, || format!("full column rank needs m >= n, got {m}x{n}"))?;
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        ensure(smin > 1e-10 * smax && smax > 0.0, || {
            format!("matrix is rank deficient: sigma_min = {smin:e}, sigma_max = {smax:e}")
        })?;
        let x_star = svd.solve(&b, 0.0).map_err(|e| Error::numerical(e.to_string()))?;
        let res = (&a * &x_star - &b).norm();
        ensure(res <= 1e-8 * b.norm(), || {
            format!("b is not in the range of A: least-squares residual {res:e}")
        })?;
        Ok(Self { a, b, x_star })
    }

    /// `b = A x_*` for a given `x_*`.
    pub fn from_solution(a: DMatrix<f64>, x_star: DVector<f64>) -> Result<Self> {
        let b = &a * &x_star;
        Self::new(a, b)
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }
}

/// Row-block projections `(S_JᵀA)† = A_Jᵀ (A_J A_Jᵀ)†`.
struct RowProjector<'a> {
    a: &'a DMatrix<f64>,
    cache: HashMap<IndexSet, DMatrix<f64>>,
}

impl<'a> RowProjector<'a> {
    fn new(a: &'a DMatrix<f64>, sampler: &SketchSampler) -> Self {
        let mut cache = HashMap::new();
        let blocks: &[IndexSet] = match sampler.mode() {
            SamplerMode::FixedPartition(blocks) => blocks,
            SamplerMode::Weighted { blocks, .. } => blocks,
            SamplerMode::UniformRandom { .. } => &[],
        };
        for j in blocks {
            cache.entry(j.clone()).or_insert_with(|| Self::gram_pinv(a, j));
        }
        Self { a, cache }
    }

    fn gram_pinv(a: &DMatrix<f64>, j: &IndexSet) -> DMatrix<f64> {
        let rows = linalg::select_rows(a, j.as_slice());
        linalg::pinv_sym(&linalg::symmetrized(&rows * rows.transpose()))
    }

    /// `(S_JᵀA)† S_Jᵀ(Ax − b)`.
    fn step(&self, j: &IndexSet, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let rows = linalg::select_rows(self.a, j.as_slice());
        let rj = &rows * x - linalg::gather(b, j.as_slice());
        let w = match self.cache.get(j) {
            Some(inv) => inv * rj,
            None => Self::gram_pinv(self.a, j) * rj,
        };
        rows.transpose() * w
    }
}

fn kaczmarz_check(sys: &KaczmarzSystem, sampler: &SketchSampler, x0: &DVector<f64>) -> Result<f64> {
    ensure(sampler.n() == sys.rows(), || {
        format!("row sampler is over {} rows, matrix has {}", sampler.n(), sys.rows())
    })?;
    ensure(x0.len() == sys.cols(), || {
        format!("x0 has length {}, matrix has {} columns", x0.len(), sys.cols())
    })?;
    let denom = sys.x_star.norm();
    ensure(denom > 0.0, || "relative error undefined for x_star = 0".into())?;
    Ok(denom)
}

/// `x ← x − (SᵀA)†Sᵀ(Ax − b)`. The trace records `‖x − x_*‖₂ / ‖x_*‖₂` and
/// `f(x) = ½‖x − x_*‖²₂`.
pub fn kaczmarz(
    sys: &KaczmarzSystem,
    sampler: &SketchSampler,
    x0: &DVector<f64>,
    opts: &RunOptions,
) -> Result<Solution> {
    let denom = kaczmarz_check(sys, sampler, x0)?;
    let proj = RowProjector::new(&sys.a, sampler);
    let mut rng = rng::stream(opts.seed, rng::SKETCH);
    let mut trace = ConvergenceTrace::new(format!("kaczmarz-{}", sampler.name()), opts.seed);
    let mut iterates = Vec::new();
    let mut x = x0.clone();
    let mut seconds = 0.0;
    loop {
        let dist = (&x - &sys.x_star).norm();
        trace.push(seconds, dist / denom, 0.5 * dist * dist);
        if opts.keep_iterates {
            iterates.push(x.clone());
        }
        if trace.iterations() >= opts.iters || opts.threshold.is_some_and(|t| dist / denom <= t) {
            break;
        }
        let j = sampler.sample(&mut rng);
        let t = Instant::now();
        x -= proj.step(&j, &x, &sys.b);
        seconds += t.elapsed().as_secs_f64();
    }
    Ok(Solution { x, trace, iterates })
}

/// The accelerated three-sequence recurrence with `H = P_{AᵀS}`. The trace
/// follows `y_k`.
pub fn accel_kaczmarz(
    sys: &KaczmarzSystem,
    sampler: &SketchSampler,
    x0: &DVector<f64>,
    consts: &AccelConstants,
    opts: &RunOptions,
) -> Result<Solution> {
    let denom = kaczmarz_check(sys, sampler, x0)?;
    let (tau, mu) = (consts.tau, consts.mu);
    ensure(tau > 0.0 && tau <= 1.0, || format!("tau = {tau} must lie in (0, 1]"))?;
    let proj = RowProjector::new(&sys.a, sampler);
    let mut rng = rng::stream(opts.seed, rng::SKETCH);
    let mut trace = ConvergenceTrace::new(format!("accel-kaczmarz-{}", sampler.name()), opts.seed);
    let mut iterates = Vec::new();
    let (mut y, mut z) = (x0.clone(), x0.clone());
    let mut seconds = 0.0;
    loop {
        let dist = (&y - &sys.x_star).norm();
        trace.push(seconds, dist / denom, 0.5 * dist * dist);
        if opts.keep_iterates {
            iterates.push(y.clone());
        }
        if trace.iterations() >= opts.iters || opts.threshold.is_some_and(|t| dist / denom <= t) {
            break;
        }
        let j = sampler.sample(&mut rng);
        let t = Instant::now();
        let x = (&y + &z * tau) / (1.0 + tau);
        let g = proj.step(&j, &x, &sys.b);
        y = &x - &g;
        z = &z + (&x - &z) * tau - g * (tau / mu);
        seconds += t.elapsed().as_secs_f64();
    }
    Ok(Solution { x: y, trace, iterates })
}

/// Unpreconditioned conjugate gradient. Stops when `‖Ax − b‖₂ ≤ tol · ‖b‖₂`
/// or after `max_iters` steps.
pub fn conjugate_gradient(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<Solution> {
    ensure(max_iters >= 1, || "conjugate gradient needs max_iters >= 1".into())?;
    ensure(x0.len() == sys.n(), || {
        format!("x0 has length {}, system has n = {}", x0.len(), sys.n())
    })?;
    let a = sys.a.matrix();
    let tracker = SpdTracker::new(sys)?;
    let mut trace = ConvergenceTrace::new("cg", 0);
    let mut x = x0.clone();
    let mut r = sys.residual(&x);
    let target = tol * sys.b.norm();
    let mut d = -&r;
    let mut rr = r.norm_squared();
    let mut seconds = 0.0;
    trace.push(seconds, tracker.rel_err(&x, &r), tracker.f_value(&x, &r));
    while trace.iterations() < max_iters && rr.sqrt() > target {
        let t = Instant::now();
        let ad = a * &d;
        let curv = d.dot(&ad);
        if curv <= 0.0 || !curv.is_finite() {
            return Err(Error::numerical(format!(
                "conjugate gradient breakdown at iteration {}: d'Ad = {curv:e}",
                trace.iterations()
            )));
        }
        let step = rr / curv;
        x.axpy(step, &d, 1.0);
        r.axpy(step, &ad, 1.0);
        let rr_next = r.norm_squared();
        d = &d * (rr_next / rr) - &r;
        rr = rr_next;
        seconds += t.elapsed().as_secs_f64();
        trace.push(seconds, tracker.rel_err(&x, &r), tracker.f_value(&x, &r));
    }
    Ok(Solution { x, trace, iterates: Vec::new() })
}

/// Solver selection for the dispatcher and the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Gs,
    AccelGs,
    AccelCd,
    Acdm,
    Cg,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Gs => "gs",
            SolverKind::AccelGs => "accel-gs",
            SolverKind::AccelCd => "accel-cd",
            SolverKind::Acdm => "acdm",
            SolverKind::Cg => "cg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gs" => SolverKind::Gs,
            "accel-gs" => SolverKind::AccelGs,
            "accel-cd" => SolverKind::AccelCd,
            "acdm" => SolverKind::Acdm,
            "cg" => SolverKind::Cg,
            other => {
                return Err(Error::constraint(format!(
                    "unknown solver `{other}` (expected gs, accel-gs, accel-cd, acdm or cg)"
                )))
            }
        })
    }

    pub fn needs_constants(&self) -> bool {
        matches!(self, SolverKind::AccelGs)
    }
}

/// Runs `kind` on `sys`. `consts` is required for `accel-gs`; `accel-cd` and
/// `acdm` need a fixed-partition sampler; `cg` ignores the sampler and stops
/// at `opts.threshold` on the traced error.
pub fn run_solver(
    kind: SolverKind,
    sys: &LinearSystem,
    sampler: &SketchSampler,
    x0: &DVector<f64>,
    consts: Option<&AccelConstants>,
    opts: &RunOptions,
) -> Result<Solution> {
    let blocks = || {
        sampler
            .partition_blocks()
            .ok_or_else(|| Error::constraint(format!("{} needs a fixed-partition sampler", kind.name())))
    };
    match kind {
        SolverKind::Gs => gauss_seidel(sys, sampler, x0, opts),
        SolverKind::AccelGs => {
            let c = consts.ok_or_else(|| Error::constraint("accel-gs needs (mu, nu)"))?;
            accel_gauss_seidel(sys, sampler, x0, c, opts)
        }
        SolverKind::AccelCd => accel_coordinate_descent(sys, blocks()?, x0, opts),
        SolverKind::Acdm => acdm(sys, blocks()?, x0, None, opts),
        SolverKind::Cg => {
            let mut sol = conjugate_gradient(sys, x0, 1e-15, opts.iters.max(1))?;
            if let Some(k) = opts.threshold.and_then(|t| sol.trace.iterations_to(t)) {
                sol.trace.rows.truncate(k + 1);
            }
            sol.trace.seed = opts.seed;
            Ok(sol)
        }
    }
}

/// `V = f(y) − f_* + (μ/2)‖z − x_*‖²_{G⁻¹}`.
pub fn lyapunov_value(
    sys: &LinearSystem,
    consts: &AccelConstants,
    g_inverse: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> f64 {
    let ey = y - &sys.x_star;
    let ez = z - &sys.x_star;
    0.5 * sys.a.norm_sq(&ey) + 0.5 * consts.mu * linalg::quad_form(g_inverse, &ez)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrices::make_alpha_beta;

    fn system(n: usize, beta: f64) -> LinearSystem {
        let a = make_alpha_beta(n, 1.0, beta).unwrap();
        LinearSystem::new(a, DVector::from_fn(n, |i, _| 1.0 + i as f64)).unwrap()
    }

    #[test]
    fn block_step_examples() {
        let a = make_alpha_beta(2, 1.0, 2.0).unwrap();
        let r = DVector::from_vec(vec![1.0, 0.0]);
        let s = block_step(&a, &r, &IndexSet::range(0, 1));
        assert_eq!(s.as_slice(), &[0.5, 0.0]);
        let s = block_step(&a, &DVector::from_element(2, 1.0), &IndexSet::range(0, 2));
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15 && (s[1] - 1.0 / 3.0).abs() < 1e-15);
        let id = make_alpha_beta(3, 1.0, 0.0).unwrap();
        let r = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(block_step(&id, &r, &IndexSet::range(0, 3)), r);
    }

    #[test]
    fn accel_constants_validation() {
        assert!(AccelConstants::new(0.0, 2.0).is_err());
        assert!(AccelConstants::new(0.5, 0.5).is_err());
        let c = AccelConstants::new(0.25, 4.0).unwrap();
        assert_eq!(c.tau(), 0.25);
        assert_eq!(c.lipschitz(), 1.0);
    }

    #[test]
    fn full_block_solves_in_one_step() {
        let sys = system(5, 3.0);
        let s = SketchSampler::uniform(5, 5).unwrap();
        let sol = gauss_seidel(&sys, &s, &DVector::zeros(5), &RunOptions::new(1, 0)).unwrap();
        assert!(sol.trace.final_rel_err() <= 1e-12);
    }

    #[test]
    fn zero_iterations_gives_single_row() {
        let sys = system(4, 1.0);
        let s = SketchSampler::uniform(4, 2).unwrap();
        let sol = gauss_seidel(&sys, &s, &DVector::zeros(4), &RunOptions::new(0, 0)).unwrap();
        assert_eq!(sol.trace.rows.len(), 1);
        assert_eq!(sol.trace.rows[0].rel_err, 1.0);
    }

    #[test]
    fn cg_identity_one_step() {
        let sys = system(6, 0.0);
        let sol = conjugate_gradient(&sys, &DVector::zeros(6), 1e-12, 10).unwrap();
        assert_eq!(sol.trace.iterations(), 1);
        let at_star = conjugate_gradient(&sys, &sys.x_star, 1e-12, 10).unwrap();
        assert_eq!(at_star.trace.iterations(), 0);
    }

    #[test]
    fn kaczmarz_two_by_one() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let sys = KaczmarzSystem::new(a, DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let s = SketchSampler::uniform(2, 1).unwrap();
        let sol = kaczmarz(&sys, &s, &DVector::zeros(1), &RunOptions::new(1, 3)).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(KaczmarzSystem::new(bad, DVector::from_vec(vec![1.0, 2.0])).is_err());
        let inconsistent = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(KaczmarzSystem::new(inconsistent, DVector::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn acdm_needs_two_blocks() {
        let sys = system(4, 1.0);
        let err = acdm(&sys, &[IndexSet::range(0, 4)], &DVector::zeros(4), None, &RunOptions::new(3, 0));
        assert!(err.is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let sys = system(4, 2.0);
        let s = SketchSampler::uniform(4, 2).unwrap();
        let sol = gauss_seidel(&sys, &s, &DVector::zeros(4), &RunOptions::new(5, 9)).unwrap();
        let meta = vec![("seed".to_string(), "9".to_string()), ("solver".into(), "gs".into())];
        let text = sol.trace.to_csv_string(&meta);
        assert!(text.starts_with("# seed=9\n# solver=gs\niter,seconds,rel_err,f_value\n"));
        let (back, got_meta) = ConvergenceTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(got_meta, meta);
        assert_eq!(back.rows, sol.trace.rows);
        assert_eq!(back.seed, 9);
    }
}
