use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blockgs::constants::{self, ConstantsSource};
use blockgs::harness::{self, ConstantsChoice, ExperimentConfig, RunConfig, SamplerChoice, SolverConfig, TuneSettings};
use blockgs::krr::{self, KrrConfig, KrrSolverConfig};
use blockgs::matrices::{self, EnsembleKind, EnsembleSpec, LinearSystem, SpdMatrix};
use blockgs::solvers::SolverKind;
use blockgs::{Error, Result};

#[derive(Parser)]
#[command(name = "blockgs", version, about = "Randomized block Gauss-Seidel experiments on dense SPD systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Clone)]
struct Shared {
    /// Seed for data, sketches and estimation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Stop once the relative A-norm error falls below this.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    AlphaBeta,
    LinspaceEig,
    Wishart,
    Sobolev,
    Circulant,
    Tridiagonal,
}

/// A system read from a file or generated from an ensemble.
#[derive(Args, Clone)]
struct SystemArgs {
    /// `spdmat` file; overrides the ensemble flags.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "alpha-beta")]
    ensemble: Kind,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000.0)]
    beta: f64,
    #[arg(long, default_value_t = 100.0)]
    kappa_max: f64,
    /// Rows of the Wishart factor.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

impl SystemArgs {
    fn spec(&self, seed: u64) -> EnsembleSpec {
        let n = self.n;
        let kind = match self.ensemble {
            Kind::AlphaBeta => EnsembleKind::AlphaBeta { n, alpha: self.alpha, beta: self.beta },
            Kind::LinspaceEig => EnsembleKind::LinspaceEig { n, kappa_max: self.kappa_max },
            Kind::Wishart => EnsembleKind::Wishart { n, m: self.m.unwrap_or(n + 2) },
            Kind::Sobolev => EnsembleKind::Sobolev { n },
            Kind::Circulant => EnsembleKind::Circulant { n },
            Kind::Tridiagonal => EnsembleKind::Tridiagonal { n, delta: self.delta },
        };
        EnsembleSpec::new(kind, seed)
    }

    fn family(&self) -> Option<(f64, f64)> {
        (self.matrix.is_none() && matches!(self.ensemble, Kind::AlphaBeta)).then_some((self.alpha, self.beta))
    }

    fn matrix(&self, seed: u64) -> Result<SpdMatrix> {
        match &self.matrix {
            Some(p) => matrices::read_matrix(p),
            None => matrices::generate_ensemble(&self.spec(seed)),
        }
    }

    fn system(&self, seed: u64) -> Result<LinearSystem> {
        LinearSystem::with_gaussian_rhs(self.matrix(seed)?, seed)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    Fixed,
    Random,
    Weighted,
}

impl From<Sampler> for SamplerChoice {
    fn from(s: Sampler) -> Self {
        match s {
            Sampler::Fixed => SamplerChoice::Fixed,
            Sampler::Random => SamplerChoice::Random,
            Sampler::Weighted => SamplerChoice::Weighted,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Gs,
    AccelGs,
    AccelCd,
    Acdm,
    Cg,
}

impl From<Method> for SolverKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Gs => SolverKind::Gs,
            Method::AccelGs => SolverKind::AccelGs,
            Method::AccelCd => SolverKind::AccelCd,
            Method::Acdm => SolverKind::Acdm,
            Method::Cg => SolverKind::Cg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Auto,
    ClosedForm,
    Exact,
    MonteCarlo,
    Explicit,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value = "accel-gs")]
    solver: Method,
    #[arg(long, value_enum, default_value = "random")]
    sampler: Sampler,
    #[arg(long, default_value_t = 50)]
    block_size: usize,
    /// Where accel-gs gets (mu, nu).
    #[arg(long, value_enum, default_value = "auto")]
    constants: Source,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Monte-Carlo samples for constant estimation.
    #[arg(long)]
    samples: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::new(self.solver.into(), self.sampler.into(), self.block_size);
        cfg.constants = match self.constants {
            Source::Auto => ConstantsChoice::Auto,
            Source::ClosedForm => ConstantsChoice::ClosedForm,
            Source::Exact => ConstantsChoice::Exact,
            Source::MonteCarlo => ConstantsChoice::MonteCarlo,
            Source::Explicit => ConstantsChoice::Explicit,
        };
        cfg.mu = self.mu;
        cfg.nu = self.nu;
        cfg.samples = self.samples;
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write an ensemble matrix as `<out>/<name>.spdmat`.
    Generate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value = "matrix")]
        name: String,
    },
    /// Compute or estimate (mu, nu) and write `<out>/constants.txt`.
    Estimate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value = "random")]
        sampler: Sampler,
        #[arg(long, default_value_t = 2)]
        block_size: usize,
        /// Monte-Carlo samples; exact enumeration when omitted.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// One seeded run; writes `<out>/trace.csv`.
    Solve {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run a TOML experiment config.
    Bench {
        config: PathBuf,
    },
    /// Iterations- and time-to-threshold against block size.
    Sweep {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', default_value = "5,25,50")]
        p_list: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Kernel ridge regression on a CSV dataset or synthetic blobs.
    Krr {
        /// CSV with feature columns then a target column.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Size of the synthetic two-blob dataset used without `--data`.
        #[arg(long, default_value_t = 500)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// (mu, nu) and the nu bounds on the standard 16 x 16 ensembles.
    ConstantsReport {
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        p_list: Vec<usize>,
    },
    /// Grid-search (mu, nu) for accel-gs by short pilot runs.
    Tune {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value = "random")]
        sampler: Sampler,
        #[arg(long, default_value_t = 50)]
        block_size: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        mus: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        nus: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        pilot_runs: usize,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let sh = cli.shared;
    let iters = sh.iters.unwrap_or(1000);
    let thresholds = || sh.threshold.map_or(harness::DEFAULT_THRESHOLDS.to_vec(), |t| vec![t]);
    create_dir(&sh.out)?;
    match cli.command {
        Command::Generate { system, name } => {
            let a = system.matrix(sh.seed)?;
            let path = sh.out.join(format!("{name}.spdmat"));
            matrices::write_matrix(&path, &a)?;
            println!("wrote {}", path.display());
        }
        Command::Estimate { system, sampler, block_size, samples } => {
            let a = system.matrix(sh.seed)?;
            let s = harness::build_sampler(&a, sampler.into(), block_size, None)?;
            let report = match samples {
                Some(k) => constants::estimate_mu_nu_mc(&a, &s, k, sh.seed)?,
                None => constants::exact_report(&a, &s, true)?,
            };
            let text = report.to_key_value_text();
            print!("{text}");
            write(&sh.out.join("constants.txt"), &text)?;
        }
        Command::Solve { system, solver } => {
            let sys = system.system(sh.seed)?;
            let cell = harness::Cell::resolve(&sys, &solver.config(), system.family(), sh.seed)?;
            let trace = cell.run(&sys, iters, sh.seed, sh.threshold)?;
            let last = trace.rows.last().expect("traces hold the starting row");
            println!("{}: {} iterations, rel_err {:e}", cell.label, last.iter, last.rel_err);
            let path = sh.out.join("trace.csv");
            trace.save(&path, &cell.metadata("NA", sh.seed))?;
            println!("wrote {}", path.display());
        }
        Command::Bench { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.run.output_dir = Some(std::path::absolute(&sh.out).map_err(|e| Error::io(&sh.out, e))?);
            if let Some(k) = sh.iters {
                cfg.run.iters = k;
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let out = harness::run_experiment(&cfg, base)?;
            print!("{}", out.summary.to_csv_string());
            println!("wrote {} files to {}", out.files.len(), sh.out.display());
        }
        Command::Sweep { system, solver, p_list, seeds } => {
            let sys = system.system(sh.seed)?;
            let run = RunConfig { iters, seeds: (sh.seed..sh.seed + seeds).collect(), thresholds: thresholds(), output_dir: None };
            let rows = harness::block_size_sweep(&sys, &p_list, &solver.config(), system.family(), &run)?;
            let text = harness::sweep_to_csv(&rows);
            print!("{text}");
            write(&sh.out.join("sweep.csv"), &text)?;
        }
        Command::Krr { data, points, dim, gamma, lambda, solver, trace_out } => {
            let data = match data {
                Some(p) => krr::load_dataset_csv(p)?,
                None => krr::two_blobs(points, dim, sh.seed)?,
            };
            println!("dataset: n = {}, d = {}", data.len(), data.dim());
            let constants = match (solver.constants, solver.mu, solver.nu) {
                (Source::Explicit, Some(mu), Some(nu)) => ConstantsSource::Explicit { mu, nu },
                (Source::Explicit, _, _) => return Err(Error::constraint("explicit constants need --mu and --nu")),
                (Source::Exact, _, _) => ConstantsSource::Exact,
                (Source::ClosedForm, _, _) => {
                    return Err(Error::constraint("closed-form constants do not apply to kernel systems"))
                }
                (_, _, _) if matches!(solver.sampler, Sampler::Fixed) => ConstantsSource::Exact,
                _ => ConstantsSource::MonteCarlo { samples: solver.samples.unwrap_or(harness::DEFAULT_MC_SAMPLES) },
            };
            let sampler = match solver.sampler {
                Sampler::Fixed => krr::SamplerKind::Fixed,
                Sampler::Random => krr::SamplerKind::Random,
                Sampler::Weighted => return Err(Error::constraint("krr supports fixed or random sampling")),
            };
            let sc = KrrSolverConfig {
                kind: solver.solver.into(),
                sampler,
                block_size: solver.block_size,
                constants,
                iters: sh.iters.unwrap_or(2000),
                seed: sh.seed,
                threshold: sh.threshold,
            };
            let mut cfg = KrrConfig::defaults(&data, sc);
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            let res = krr::krr_solve(&data, &cfg)?;
            println!(
                "gamma = {:e}, lambda = {:e}: rel_err {:e}, residual {:e} (bound {:e})",
                cfg.gamma, cfg.lambda, res.final_rel_err, res.rel_residual, res.residual_bound
            );
            let path = trace_out.unwrap_or_else(|| sh.out.join("krr_trace.csv"));
            let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:e}"));
            let meta = vec![
                ("solver".to_string(), cfg.solver.kind.name().to_string()),
                ("gamma".into(), format!("{:e}", cfg.gamma)),
                ("lambda".into(), format!("{:e}", cfg.lambda)),
                ("seed".into(), sh.seed.to_string()),
                ("mu".into(), opt(res.mu)),
                ("nu".into(), opt(res.nu)),
            ];
            res.trace.save(&path, &meta)?;
            println!("wrote {}", path.display());
        }
        Command::ConstantsReport { p_list } => {
            let ens = harness::standard_ensembles(sh.seed)?;
            let rows = harness::constants_report(&ens, &p_list, sh.seed)?;
            let text = harness::constants_report_csv(&rows);
            print!("{text}");
            write(&sh.out.join("constants_report.csv"), &text)?;
        }
        Command::Tune { system, sampler, block_size, mus, nus, pilot_runs } => {
            let sys = system.system(sh.seed)?;
            let s = harness::build_sampler(&sys.a, sampler.into(), block_size, None)?;
            let settings = TuneSettings {
                pilot_iters: sh.iters.unwrap_or(500),
                pilot_runs,
                threshold: sh.threshold.unwrap_or(1e-4),
                seed: sh.seed,
            };
            let res = harness::tune_constants(&sys, &s, &harness::grid_product(&mus, &nus), &settings)?;
            println!("best: mu = {:e}, nu = {:e}", res.best.mu(), res.best.nu());
            write(&sh.out.join("tune.csv"), &harness::tune_scores_csv(&res.scores))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
