//! Configuration-driven experiments: seeded solver runs written as CSV
//! traces, summary tables of iterations-to-threshold, block-size sweeps, the
//! `μ`/`ν` report over the standard 16 × 16 ensembles and grid tuning of
//! `(μ, ν)`.
//!
//! Experiments are described in TOML:
//!
//! ```toml
//! [system]            # an ensemble (see `EnsembleKind`) or `matrix = "a.spdmat"`
//! kind = "alpha-beta"
//! n = 500
//! alpha = 1.0
//! beta = 1000.0
//! rhs_seed = 0        # seed of the Gaussian right-hand side
//!
//! [run]
//! iters = 5000
//! seeds = [0, 1]
//! thresholds = [1e-1, 1e-2, 1e-4, 1e-6]
//! output_dir = "out"
//!
//! [[solver]]
//! method = "accel-gs"   # gs | accel-gs | accel-cd | acdm | cg
//! sampler = "random"    # fixed | random | weighted
//! block_size = 50
//! constants = "closed-form"   # auto | closed-form | exact | monte-carlo | explicit
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::{self, ConstantsSource};
use crate::error::{ensure, Error, Result};
use crate::matrices::{self, EnsembleKind, EnsembleSpec, LinearSystem, SpdMatrix};
use crate::rng;
use crate::sketch::{IndexSet, SketchSampler, ENUMERATION_BUDGET};
use crate::solvers::{self, AccelConstants, ConvergenceTrace, RunOptions, SolverKind};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [1e-1, 1e-2, 1e-4, 1e-6];

/// Monte-Carlo sample count when `auto` constants cannot enumerate.
pub const DEFAULT_MC_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    #[serde(default)]
    pub rhs_seed: u64,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSpec>,
}

impl SystemConfig {
    pub fn ensemble(spec: EnsembleSpec, rhs_seed: u64) -> Self {
        Self { matrix: None, rhs_seed, ensemble: Some(spec) }
    }

    /// `(α, β)` when the system is an alpha-beta ensemble.
    pub fn family(&self) -> Option<(f64, f64)> {
        match self.ensemble.as_ref()?.kind {
            EnsembleKind::AlphaBeta { alpha, beta, .. } => Some((alpha, beta)),
            _ => None,
        }
    }

    /// Builds the matrix; relative matrix paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<SpdMatrix> {
        match (&self.matrix, &self.ensemble) {
            (Some(path), None) => matrices::read_matrix(base.join(path)),
            (None, Some(spec)) => matrices::generate_ensemble(spec),
            (Some(_), Some(_)) => Err(Error::constraint("[system] sets both `matrix` and an ensemble `kind`")),
            (None, None) => Err(Error::constraint("[system] needs `matrix` or an ensemble `kind`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iters: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    Fixed,
    Random,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantsChoice {
    /// Closed form for alpha-beta systems, else exact when the support fits
    /// the enumeration budget, else Monte Carlo.
    #[default]
    Auto,
    ClosedForm,
    Exact,
    MonteCarlo,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: SolverKind,
    pub sampler: SamplerChoice,
    pub block_size: usize,
    #[serde(default)]
    pub constants: ConstantsChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Per-block weights of the contiguous partition for `weighted`;
    /// defaults to `trace(A_J)`. Normalized before use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SolverConfig {
    pub fn new(method: SolverKind, sampler: SamplerChoice, block_size: usize) -> Self {
        Self {
            method,
            sampler,
            block_size,
            constants: ConstantsChoice::Auto,
            mu: None,
            nu: None,
            samples: None,
            weights: None,
            label: None,
        }
    }

    pub fn with_constants(mut self, constants: ConstantsChoice) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_explicit(mut self, mu: f64, nu: f64) -> Self {
        self.constants = ConstantsChoice::Explicit;
        self.mu = Some(mu);
        self.nu = Some(nu);
        self
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            format!("{}-{}-p{}", self.method.name(), sampler_name(self.sampler), self.block_size)
        })
    }

    pub fn sampler(&self, a: &SpdMatrix) -> Result<SketchSampler> {
        build_sampler(a, self.sampler, self.block_size, self.weights.as_deref())
    }

    fn source(&self, a: &SpdMatrix, sampler: &SketchSampler, family: Option<(f64, f64)>) -> Result<ConstantsSource> {
        let samples = self.samples.unwrap_or(DEFAULT_MC_SAMPLES);
        Ok(match self.constants {
            ConstantsChoice::Auto => {
                let closed = family.is_some() && !matches!(self.sampler, SamplerChoice::Weighted);
                if closed {
                    ConstantsSource::ClosedForm
                } else if sampler.support_size() <= ENUMERATION_BUDGET as f64 && a.n() <= 64 {
                    ConstantsSource::Exact
                } else {
                    ConstantsSource::MonteCarlo { samples }
                }
            }
            ConstantsChoice::ClosedForm => ConstantsSource::ClosedForm,
            ConstantsChoice::Exact => ConstantsSource::Exact,
            ConstantsChoice::MonteCarlo => ConstantsSource::MonteCarlo { samples },
            ConstantsChoice::Explicit => match (self.mu, self.nu) {
                (Some(mu), Some(nu)) => ConstantsSource::Explicit { mu, nu },
                _ => return Err(Error::constraint("explicit constants need both `mu` and `nu`")),
            },
        })
    }
}

fn sampler_name(s: SamplerChoice) -> &'static str {
    match s {
        SamplerChoice::Fixed => "fixed",
        SamplerChoice::Random => "random",
        SamplerChoice::Weighted => "weighted",
    }
}

pub fn build_sampler(a: &SpdMatrix, choice: SamplerChoice, p: usize, weights: Option<&[f64]>) -> Result<SketchSampler> {
    let n = a.n();
    match choice {
        SamplerChoice::Fixed => SketchSampler::fixed_partition(n, p),
        SamplerChoice::Random => SketchSampler::uniform(n, p),
        SamplerChoice::Weighted => {
            ensure(p >= 1 && p <= n && n % p == 0, || {
                format!("weighted sampling uses a contiguous partition; p = {p} must divide n = {n}")
            })?;
            let blocks: Vec<IndexSet> = (0..n / p).map(|k| IndexSet::range(k * p, p)).collect();
            let raw: Vec<f64> = match weights {
                Some(w) => w.to_vec(),
                None => blocks.iter().map(|b| b.as_slice().iter().map(|&i| a.get(i, i)).sum()).collect(),
            };
            ensure(raw.len() == blocks.len(), || {
                format!("{} weights for {} blocks", raw.len(), blocks.len())
            })?;
            ensure(raw.iter().all(|&w| w > 0.0 && w.is_finite()), || "weights must be positive".into())?;
            let total: f64 = raw.iter().sum();
            SketchSampler::weighted(n, blocks, raw.iter().map(|w| w / total).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub run: RunConfig,
    #[serde(rename = "solver")]
    pub solvers: Vec<SolverConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::parse(line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.solvers.is_empty(), || "experiment needs at least one [[solver]]".into())?;
        ensure(!self.run.seeds.is_empty(), || "experiment needs at least one seed".into())?;
        check_thresholds(&self.run.thresholds)?;
        if let Some(spec) = &self.system.ensemble {
            spec.validate()?;
        }
        let mut labels: Vec<String> = self.solvers.iter().map(SolverConfig::label).collect();
        labels.sort();
        ensure(labels.windows(2).all(|w| w[0] != w[1]), || "solver labels must be distinct".into())
    }

    /// SHA-256 over the semantic content: the config without `output_dir`,
    /// plus the matrix itself.
    pub fn hash(&self, a: &SpdMatrix) -> String {
        let mut semantic = self.clone();
        semantic.run.output_dir = None;
        let mut h = Sha256::new();
        h.update(semantic.to_toml().as_bytes());
        h.update(matrices::to_spdmat_string(a).as_bytes());
        h.finalize().iter().fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").expect("writing to a String");
            s
        })
    }
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    ensure(!t.is_empty(), || "need at least one threshold".into())?;
    ensure(t.iter().all(|&x| x > 0.0 && x.is_finite()), || "thresholds must be positive".into())?;
    ensure(t.windows(2).all(|w| w[0] > w[1]), || "thresholds must be strictly decreasing".into())
}

/// One solver configuration resolved against a system.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub config: SolverConfig,
    pub sampler: SketchSampler,
    pub consts: Option<AccelConstants>,
    pub source: Option<ConstantsSource>,
}

impl Cell {
    pub fn resolve(sys: &LinearSystem, cfg: &SolverConfig, family: Option<(f64, f64)>, seed: u64) -> Result<Self> {
        let sampler = cfg.sampler(&sys.a)?;
        let (consts, source) = if cfg.method.needs_constants() {
            let source = cfg.source(&sys.a, &sampler, family)?;
            (Some(constants::resolve_constants(source, &sys.a, &sampler, family, seed)?), Some(source))
        } else {
            (None, None)
        };
        Ok(Self { label: cfg.label(), config: cfg.clone(), sampler, consts, source })
    }

    pub fn run(&self, sys: &LinearSystem, iters: usize, seed: u64, stop_at: Option<f64>) -> Result<ConvergenceTrace> {
        let mut opts = RunOptions::new(iters, seed);
        opts.threshold = stop_at;
        let sol = solvers::run_solver(
            self.config.method,
            sys,
            &self.sampler,
            &DVector::zeros(sys.n()),
            self.consts.as_ref(),
            &opts,
        )
        .map_err(|e| e.context(format!("solver {} seed {seed}", self.label)))?;
        Ok(sol.trace)
    }

    pub fn metadata(&self, config_hash: &str, seed: u64) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:e}"));
        vec![
            ("config_hash".into(), config_hash.into()),
            ("solver".into(), self.config.method.name().into()),
            ("sampler".into(), self.sampler.name().into()),
            ("block_size".into(), self.config.block_size.to_string()),
            ("seed".into(), seed.to_string()),
            ("mu".into(), opt(self.consts.map(|c| c.mu()))),
            ("nu".into(), opt(self.consts.map(|c| c.nu()))),
            ("constants".into(), self.source.map_or("NA", |s| s.name()).into()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub solver: String,
    pub sampler: String,
    pub block_size: usize,
    pub threshold: f64,
    pub runs: usize,
    pub reached: usize,
    /// Mean and standard deviation over seeds, present only when every run
    /// reached the threshold.
    pub mean_iters: Option<f64>,
    pub std_iters: Option<f64>,
    pub mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

pub const SUMMARY_HEADER: [&str; 10] =
    ["label", "solver", "sampler", "block_size", "threshold", "runs", "reached", "mean_iters", "std_iters", "mean_seconds"];

impl SummaryTable {
    /// Aggregates traces grouped by cell; the result does not depend on the
    /// order in which traces are supplied within a cell.
    pub fn from_traces(cells: &[(&Cell, Vec<ConvergenceTrace>)], thresholds: &[f64]) -> Self {
        let mut rows = Vec::new();
        for (cell, traces) in cells {
            let mut by_seed: BTreeMap<u64, &ConvergenceTrace> = BTreeMap::new();
            for t in traces {
                by_seed.insert(t.seed, t);
            }
            for &thr in thresholds {
                let hits: Vec<(usize, f64)> = by_seed
                    .values()
                    .filter_map(|t| Some((t.iterations_to(thr)?, t.seconds_to(thr)?)))
                    .collect();
                let all = !by_seed.is_empty() && hits.len() == by_seed.len();
                let iters: Vec<f64> = hits.iter().map(|h| h.0 as f64).collect();
                let secs: Vec<f64> = hits.iter().map(|h| h.1).collect();
                rows.push(SummaryRow {
                    label: cell.label.clone(),
                    solver: cell.config.method.name().into(),
                    sampler: cell.sampler.name().into(),
                    block_size: cell.config.block_size,
                    threshold: thr,
                    runs: by_seed.len(),
                    reached: hits.len(),
                    mean_iters: all.then(|| mean(&iters)),
                    std_iters: all.then(|| std_dev(&iters)),
                    mean_seconds: all.then(|| mean(&secs)),
                });
            }
        }
        Self { rows }
    }

    pub fn get(&self, label: &str, threshold: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.label == label && r.threshold == threshold)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SUMMARY_HEADER).expect("in-memory csv");
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x}"));
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.solver.clone(),
                r.sampler.clone(),
                r.block_size.to_string(),
                format!("{:e}", r.threshold),
                r.runs.to_string(),
                r.reached.to_string(),
                opt(r.mean_iters),
                opt(r.std_iters),
                opt(r.mean_seconds),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: SummaryTable,
    pub config_hash: String,
    /// `(label, seed) → trace`.
    pub traces: BTreeMap<(String, u64), ConvergenceTrace>,
    pub files: Vec<PathBuf>,
}

pub fn trace_file_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

/// Runs every (solver, seed) cell to `run.iters` iterations. When
/// `output_dir` is set, writes one trace CSV per cell and `summary.csv`;
/// relative paths resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let a = cfg.system.load(base)?;
    let hash = cfg.hash(&a);
    let sys = LinearSystem::with_gaussian_rhs(a, cfg.system.rhs_seed)?;
    let family = cfg.system.family();
    let out_dir = cfg.run.output_dir.as_ref().map(|d| base.join(d));
    if let Some(d) = &out_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut cells = Vec::new();
    for s in &cfg.solvers {
        let cell = Cell::resolve(&sys, s, family, cfg.system.rhs_seed)
            .map_err(|e| e.context(format!("setting up solver {}", s.label())))?;
        cells.push(cell);
    }
    let mut traces = BTreeMap::new();
    let mut files = Vec::new();
    let mut grouped = Vec::new();
    for cell in &cells {
        let mut mine = Vec::new();
        for &seed in &cfg.run.seeds {
            let trace = cell.run(&sys, cfg.run.iters, seed, None)?;
            if let Some(d) = &out_dir {
                let path = d.join(trace_file_name(&cell.label, seed));
                trace.save(&path, &cell.metadata(&hash, seed))?;
                files.push(path);
            }
            traces.insert((cell.label.clone(), seed), trace.clone());
            mine.push(trace);
        }
        grouped.push((cell, mine));
    }
    let summary = SummaryTable::from_traces(&grouped, &cfg.run.thresholds);
    if let Some(d) = &out_dir {
        let path = d.join("summary.csv");
        summary.save(&path)?;
        files.push(path);
    }
    Ok(ExperimentOutput { summary, config_hash: hash, traces, files })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub block_size: usize,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub threshold: f64,
    pub reached: usize,
    pub mean_iters: Option<f64>,
    pub mean_seconds: Option<f64>,
}

/// Iterations- and time-to-threshold of `template` for each `p` in `p_list`,
/// averaged over `seeds`.
pub fn block_size_sweep(
    sys: &LinearSystem,
    p_list: &[usize],
    template: &SolverConfig,
    family: Option<(f64, f64)>,
    run: &RunConfig,
) -> Result<Vec<SweepRow>> {
    ensure(!p_list.is_empty(), || "sweep needs at least one block size".into())?;
    ensure(!run.seeds.is_empty(), || "sweep needs at least one seed".into())?;
    check_thresholds(&run.thresholds)?;
    let mut rows = Vec::new();
    for &p in p_list {
        let cfg = SolverConfig { block_size: p, label: None, ..template.clone() };
        let cell = Cell::resolve(sys, &cfg, family, 0).map_err(|e| e.context(format!("block size {p}")))?;
        let traces = run
            .seeds
            .iter()
            .map(|&s| cell.run(sys, run.iters, s, None))
            .collect::<Result<Vec<_>>>()?;
        let table = SummaryTable::from_traces(&[(&cell, traces)], &run.thresholds);
        for r in table.rows {
            rows.push(SweepRow {
                block_size: p,
                mu: cell.consts.map(|c| c.mu()),
                nu: cell.consts.map(|c| c.nu()),
                threshold: r.threshold,
                reached: r.reached,
                mean_iters: r.mean_iters,
                mean_seconds: r.mean_seconds,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x}"));
    let mut out = String::from("block_size,mu,nu,threshold,reached,mean_iters,mean_seconds\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:e},{},{},{}",
            r.block_size,
            opt(r.mu),
            opt(r.nu),
            r.threshold,
            r.reached,
            opt(r.mean_iters),
            opt(r.mean_seconds)
        )
        .expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsRow {
    pub ensemble: String,
    pub n: usize,
    pub p: usize,
    pub mu: f64,
    pub nu: f64,
    pub nu_lower: f64,
    pub nu_upper: f64,
    pub kappa_eff: f64,
    pub method: &'static str,
}

impl ConstantsRow {
    /// `ν_upper / ν`; 1 means the bound is tight.
    pub fn tightness(&self) -> f64 {
        self.nu_upper / self.nu
    }
}

/// The 16 × 16 instances of the standard ensembles: linearly spaced spectra
/// with `κ ∈ {10, 100, 1000}`, Wishart with `m ∈ {18, 20, 22}`, Sobolev,
/// circulant and tridiagonal with `δ = 0.1`, plus the identity.
pub fn standard_ensembles(seed: u64) -> Result<Vec<(String, SpdMatrix)>> {
    let n = 16;
    let mut specs: Vec<(String, EnsembleKind)> = Vec::new();
    for k in [10.0, 100.0, 1000.0] {
        specs.push((format!("linspace-{k}"), EnsembleKind::LinspaceEig { n, kappa_max: k }));
    }
    for m in [18, 20, 22] {
        specs.push((format!("wishart-{m}"), EnsembleKind::Wishart { n, m }));
    }
    specs.push(("sobolev".into(), EnsembleKind::Sobolev { n }));
    specs.push(("circulant".into(), EnsembleKind::Circulant { n }));
    specs.push(("tridiagonal-0.1".into(), EnsembleKind::Tridiagonal { n, delta: 0.1 }));
    specs.push(("identity".into(), EnsembleKind::AlphaBeta { n, alpha: 1.0, beta: 0.0 }));
    specs
        .into_iter()
        .map(|(name, kind)| Ok((name, matrices::generate_ensemble(&EnsembleSpec::new(kind, seed))?)))
        .collect()
}

/// `μ`, `ν`, `n/p` and the upper bound per (ensemble, p) under uniform
/// sampling. Exact when the support fits the budget, Monte Carlo otherwise.
/// Fails if a row violates `n/p ≤ ν ≤ upper` or `ν ≤ 1/μ` beyond `1e-9`
/// (exact rows only).
pub fn constants_report(ensembles: &[(String, SpdMatrix)], p_list: &[usize], seed: u64) -> Result<Vec<ConstantsRow>> {
    let tol = constants::TOL.exact;
    let mut rows = Vec::new();
    for (name, a) in ensembles {
        let n = a.n();
        for &p in p_list {
            let sampler = SketchSampler::uniform(n, p)?;
            let exact = sampler.support_size() <= ENUMERATION_BUDGET as f64;
            let rep = if exact {
                constants::exact_report(a, &sampler, true)?
            } else {
                let mut r = constants::estimate_mu_nu_mc(a, &sampler, DEFAULT_MC_SAMPLES, seed)?;
                let k = constants::kappa_eff(a, p, true)?;
                r.kappa_eff = Some(k);
                r.nu_upper = Some(constants::nu_upper_bound(n, p, k.value));
                r
            };
            let kappa = rep.kappa_eff.map_or(1.0, |k| k.value);
            let row = ConstantsRow {
                ensemble: name.clone(),
                n,
                p,
                mu: rep.mu,
                nu: rep.nu,
                nu_lower: rep.nu_lower,
                nu_upper: rep.nu_upper.unwrap_or_else(|| constants::nu_upper_bound(n, p, kappa)),
                kappa_eff: kappa,
                method: if exact { "exact" } else { "monte-carlo" },
            };
            if exact {
                let ok = row.nu_lower - tol <= row.nu && row.nu <= row.nu_upper + tol && row.nu <= 1.0 / row.mu + tol;
                if !ok {
                    return Err(Error::numerical(format!(
                        "sandwich violated for {name}, p = {p}: n/p = {}, nu = {}, upper = {}, 1/mu = {}",
                        row.nu_lower,
                        row.nu,
                        row.nu_upper,
                        1.0 / row.mu
                    )));
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn constants_report_csv(rows: &[ConstantsRow]) -> String {
    let mut out = String::from("ensemble,n,p,mu,nu,n_over_p,nu_upper,inv_mu,kappa_eff,tightness,method\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            r.ensemble,
            r.n,
            r.p,
            r.mu,
            r.nu,
            r.nu_lower,
            r.nu_upper,
            1.0 / r.mu,
            r.kappa_eff,
            r.tightness(),
            r.method
        )
        .expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSettings {
    pub pilot_iters: usize,
    pub pilot_runs: usize,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotScore {
    pub mu: f64,
    pub nu: f64,
    /// Runs that reached the threshold.
    pub reached: usize,
    /// Mean iterations-to-threshold when every run reached it.
    pub mean_iters: Option<f64>,
    /// Mean `log10` of the final error; `+∞` for runs that blew up.
    pub mean_log_err: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: AccelConstants,
    pub scores: Vec<PilotScore>,
}

/// The Cartesian product `mus × nus`, `μ`-major.
pub fn grid_product(mus: &[f64], nus: &[f64]) -> Vec<(f64, f64)> {
    mus.iter().flat_map(|&m| nus.iter().map(move |&v| (m, v))).collect()
}

/// Pilot seeds come from the pilot stream of `settings.seed`.
pub fn pilot_seeds(settings: &TuneSettings) -> Vec<u64> {
    use rand::RngCore;
    let mut r = rng::stream(settings.seed, rng::PILOT);
    (0..settings.pilot_runs).map(|_| r.next_u64()).collect()
}

/// Grid search over `(μ, ν)` by short accelerated-GS pilot runs. Pairs are
/// ranked by mean iterations-to-threshold (all runs reaching it), then by
/// mean final error; the first best pair in grid order wins ties. Pairs
/// outside `0 < μ ≤ 1 ≤ ν, μ ≤ ν` are skipped.
pub fn tune_constants(
    sys: &LinearSystem,
    sampler: &SketchSampler,
    grid: &[(f64, f64)],
    settings: &TuneSettings,
) -> Result<TuneResult> {
    ensure(!grid.is_empty(), || "tuning grid is empty".into())?;
    ensure(settings.pilot_runs >= 1, || "tuning needs at least one pilot run".into())?;
    let seeds = pilot_seeds(settings);
    let x0 = DVector::zeros(sys.n());
    let mut scores = Vec::new();
    let mut best: Option<(usize, AccelConstants)> = None;
    for &(mu, nu) in grid {
        let Ok(c) = AccelConstants::new(mu, nu) else { continue };
        let mut reached = 0;
        let mut iters = 0.0;
        let mut log_err = 0.0;
        let mut blown = 0;
        for &s in &seeds {
            let opts = RunOptions::new(settings.pilot_iters, s).with_threshold(settings.threshold);
            let sol = solvers::accel_gauss_seidel(sys, sampler, &x0, &c, &opts)?;
            let t = &sol.trace;
            let e = t.final_rel_err();
            if let Some(k) = t.iterations_to(settings.threshold) {
                reached += 1;
                iters += k as f64;
            }
            if !e.is_finite() || e > t.rows[0].rel_err {
                blown += 1;
                log_err = f64::INFINITY;
            } else {
                log_err += e.max(f64::MIN_POSITIVE).log10();
            }
        }
        let k = seeds.len() as f64;
        let score = PilotScore {
            mu,
            nu,
            reached,
            mean_iters: (reached == seeds.len()).then(|| iters / k),
            mean_log_err: log_err / k,
            diverged: blown == seeds.len(),
        };
        if !score.diverged {
            let better = match &best {
                None => true,
                Some((i, _)) => ranks_before(&score, &scores[*i]),
            };
            if better {
                best = Some((scores.len(), c));
            }
        }
        scores.push(score);
    }
    match best {
        Some((_, c)) => Ok(TuneResult { best: c, scores }),
        None if scores.is_empty() => Err(Error::constraint("no valid (mu, nu) pair in the tuning grid")),
        None => Err(Error::numerical("tuning failed: every pilot run diverged")),
    }
}

fn ranks_before(a: &PilotScore, b: &PilotScore) -> bool {
    match (a.mean_iters, b.mean_iters) {
        (Some(x), Some(y)) => x < y,
        (Some(_), None) => true,
        (None, Some(_)) => false,
        (None, None) => a.mean_log_err < b.mean_log_err,
    }
}

pub fn tune_scores_csv(scores: &[PilotScore]) -> String {
    let mut out = String::from("mu,nu,reached,mean_iters,mean_log10_err,diverged\n");
    for s in scores {
        let it = s.mean_iters.map_or("NA".to_string(), |x| format!("{x}"));
        writeln!(out, "{:e},{:e},{},{},{},{}", s.mu, s.nu, s.reached, it, s.mean_log_err, s.diverged)
            .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[system]
kind = "alpha-beta"
n = 8
alpha = 1.0
beta = 2.0

[run]
iters = 50
seeds = [0, 1]

[[solver]]
method = "gs"
sampler = "random"
block_size = 2
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_eq!(cfg.run.thresholds, DEFAULT_THRESHOLDS.to_vec());
        assert_eq!(cfg.system.family(), Some((1.0, 2.0)));
        assert_eq!(cfg.solvers[0].label(), "gs-random-p2");
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let no_solver = SMALL.split("[[solver]]").next().unwrap().to_string() + "solver = []\n";
        assert!(ExperimentConfig::from_toml(&no_solver).is_err());
        let no_seed = SMALL.replace("seeds = [0, 1]", "seeds = []");
        assert!(ExperimentConfig::from_toml(&no_seed).unwrap_err().to_string().contains("seed"));
        let bad_thr = SMALL.replace("seeds = [0, 1]", "seeds = [0]\nthresholds = [1e-4, 1e-2]");
        assert!(ExperimentConfig::from_toml(&bad_thr).is_err());
        let typo = SMALL.replace("block_size", "blocksize");
        assert!(matches!(ExperimentConfig::from_toml(&typo), Err(Error::Parse { .. })));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let a = cfg.system.load(Path::new(".")).unwrap();
        let mut moved = cfg.clone();
        moved.run.output_dir = Some("elsewhere".into());
        assert_eq!(cfg.hash(&a), moved.hash(&a));
        let mut changed = cfg.clone();
        changed.run.iters = 51;
        assert_ne!(cfg.hash(&a), changed.hash(&a));
    }

    #[test]
    fn weighted_default_uses_block_traces() {
        let a = SpdMatrix::new(nalgebra::DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 2.0, 4.0]))).unwrap();
        let s = build_sampler(&a, SamplerChoice::Weighted, 2, None).unwrap();
        let support = s.enumerate_support().unwrap();
        assert!((support[0].1 - 0.25).abs() < 1e-15);
        assert!((support[1].1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn summary_needs_every_seed() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let a = cfg.system.load(Path::new(".")).unwrap();
        let sys = LinearSystem::with_gaussian_rhs(a, 0).unwrap();
        let cell = Cell::resolve(&sys, &cfg.solvers[0], None, 0).unwrap();
        let mut t0 = ConvergenceTrace::new("gs", 0);
        let mut t1 = ConvergenceTrace::new("gs", 1);
        for (k, (e0, e1)) in [(1.0, 1.0), (1e-3, 0.5), (1e-5, 0.05)].into_iter().enumerate() {
            t0.rows.push(solvers::TraceRow { iter: k, seconds: 0.0, rel_err: e0, f_value: 0.0 });
            t1.rows.push(solvers::TraceRow { iter: k, seconds: 0.0, rel_err: e1, f_value: 0.0 });
        }
        let table = SummaryTable::from_traces(&[(&cell, vec![t1, t0])], &[1e-1, 1e-4]);
        assert_eq!(table.rows[0].mean_iters, Some(1.5));
        assert_eq!(table.rows[1].reached, 1);
        assert_eq!(table.rows[1].mean_iters, None);
        assert!(table.to_csv_string().contains(",NA,"));
    }
}
