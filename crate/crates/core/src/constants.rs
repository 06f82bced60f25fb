//! The constants `μ` and `ν` that govern the (accelerated) Gauss-Seidel and
//! Kaczmarz rates, computed exactly by support enumeration, estimated by
//! Monte Carlo, or evaluated in closed form on `A_{α,β} = αI + (β/n)11ᵀ`.
//! Also: `κ_eff` and the resulting `ν` bounds, adversarial starting points
//! and exact expected-iterate propagation.
//!
//! Notation: `H_J = S_J (S_JᵀAS_J)† S_Jᵀ`, `G = E[H]`,
//! `μ = λ_min(A^{1/2} G A^{1/2})`, `ν = λ_max(E[(G^{-1/2} H G^{-1/2})²])`.

use std::fmt::Write as _;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Error, Result};
use crate::linalg::{self, SortedEigen};
use crate::matrices::{LinearSystem, SpdMatrix};
use crate::rng;
use crate::sketch::{binomial, IndexSet, SamplerMode, SketchSampler, ENUMERATION_BUDGET};
use crate::solvers::{self, AccelConstants};

/// Tolerances shared by the exact-path checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Quantities computed by enumeration and eigensolvers.
    pub exact: f64,
    /// Identities that hold up to rounding only.
    pub algebraic: f64,
}

pub const TOL: Tolerances = Tolerances { exact: 1e-9, algebraic: 1e-12 };

/// Number of random subsets used when `κ_eff` cannot be enumerated.
pub const KAPPA_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ExactEnumeration,
    MonteCarlo { samples: usize },
}

/// `κ_eff,p(A)`; `exhaustive = false` marks a sampled lower estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaEff {
    pub value: f64,
    pub exhaustive: bool,
}

#[derive(Debug, Clone)]
pub struct ConstantsReport {
    pub mu: f64,
    pub nu: f64,
    pub g: SpdMatrix,
    pub method: Method,
    /// `n/p`.
    pub nu_lower: f64,
    /// Upper bound `(n/p)(β' + (1 − β')κ_eff)`, when `κ_eff` was computed.
    pub nu_upper: Option<f64>,
    pub kappa_eff: Option<KappaEff>,
}

impl ConstantsReport {
    pub fn tau(&self) -> f64 {
        (self.mu / self.nu).sqrt()
    }

    pub fn accel_constants(&self) -> Result<AccelConstants> {
        AccelConstants::new(self.mu.min(1.0), self.nu.max(1.0))
    }

    pub fn key_values(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:e}"));
        let mut kv = vec![
            ("mu".to_string(), format!("{:e}", self.mu)),
            ("nu".to_string(), format!("{:e}", self.nu)),
            ("tau".to_string(), format!("{:e}", self.tau())),
            ("nu_lower".to_string(), format!("{:e}", self.nu_lower)),
            ("nu_upper".to_string(), opt(self.nu_upper)),
            ("kappa_eff".to_string(), opt(self.kappa_eff.map(|k| k.value))),
        ];
        if let Some(k) = self.kappa_eff {
            kv.push(("kappa_eff_exhaustive".into(), k.exhaustive.to_string()));
        }
        match self.method {
            Method::ExactEnumeration => kv.push(("method".into(), "exact".into())),
            Method::MonteCarlo { samples } => {
                kv.push(("method".into(), "monte-carlo".into()));
                kv.push(("samples".into(), samples.to_string()));
            }
        }
        kv
    }

    /// Flat `key=value` lines.
    pub fn to_key_value_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.key_values() {
            writeln!(out, "{k}={v}").expect("writing to a String");
        }
        out
    }
}

/// The `p × p` block `(S_JᵀAS_J)†` of `H_J`.
fn h_block(a: &DMatrix<f64>, j: &IndexSet) -> DMatrix<f64> {
    linalg::pinv_sym(&linalg::principal_submatrix(a, j.as_slice()))
}

fn check_sampler(a: &SpdMatrix, sampler: &SketchSampler) -> Result<()> {
    ensure(sampler.n() == a.n(), || {
        format!("sampler is over n = {}, matrix has n = {}", sampler.n(), a.n())
    })
}

fn g_from_support(a: &SpdMatrix, support: &[(IndexSet, f64)]) -> DMatrix<f64> {
    let n = a.n();
    let mut g = DMatrix::zeros(n, n);
    for (j, q) in support {
        linalg::scatter_add(&mut g, j.as_slice(), &h_block(a.matrix(), j), *q);
    }
    linalg::symmetrized(g)
}

/// `E[H G⁻¹ H]`, assembled from the blocks `A_J† (G⁻¹)_JJ A_J†`.
fn variance_from_support(a: &SpdMatrix, support: &[(IndexSet, f64)], g_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.n();
    let mut m = DMatrix::zeros(n, n);
    for (j, q) in support {
        let inv = h_block(a.matrix(), j);
        let mid = linalg::principal_submatrix(g_inv, j.as_slice());
        linalg::scatter_add(&mut m, j.as_slice(), &(&inv * mid * &inv), *q);
    }
    linalg::symmetrized(m)
}

fn mu_of(a: &SpdMatrix, g: &DMatrix<f64>) -> f64 {
    let half = linalg::sqrt_psd(a.matrix());
    linalg::lambda_min(&linalg::symmetrized(&half * g * &half))
}

fn nu_of(g: &DMatrix<f64>, variance: &DMatrix<f64>) -> f64 {
    let g_ih = linalg::inv_sqrt_pd(g);
    linalg::lambda_max(&linalg::symmetrized(&g_ih * variance * &g_ih))
}

/// `G = Σ_J q_J H_J` by enumerating the sampler's support.
pub fn compute_g(a: &SpdMatrix, sampler: &SketchSampler) -> Result<SpdMatrix> {
    check_sampler(a, sampler)?;
    let support = sampler.enumerate_support()?;
    SpdMatrix::new(g_from_support(a, &support))
        .map_err(|e| e.context("G = E[H] is not positive definite"))
}

pub fn compute_mu(a: &SpdMatrix, sampler: &SketchSampler) -> Result<f64> {
    Ok(mu_of(a, compute_g(a, sampler)?.matrix()))
}

pub fn compute_nu(a: &SpdMatrix, sampler: &SketchSampler) -> Result<f64> {
    let g = compute_g(a, sampler)?;
    let support = sampler.enumerate_support()?;
    let g_inv = linalg::pinv_sym(g.matrix());
    Ok(nu_of(g.matrix(), &variance_from_support(a, &support, &g_inv)))
}

/// `μ_part` for an explicit partition.
pub fn mu_part(a: &SpdMatrix, blocks: &[IndexSet]) -> Result<f64> {
    compute_mu(a, &SketchSampler::partition(a.n(), blocks.to_vec())?)
}

/// Exact `μ`, `ν` and `G`, with `κ_eff` and the `ν` bounds when
/// `with_kappa` is set and the sampler has a common block size.
pub fn exact_report(a: &SpdMatrix, sampler: &SketchSampler, with_kappa: bool) -> Result<ConstantsReport> {
    check_sampler(a, sampler)?;
    let support = sampler.enumerate_support()?;
    let g = SpdMatrix::new(g_from_support(a, &support))
        .map_err(|e| e.context("G = E[H] is not positive definite"))?;
    let g_inv = linalg::pinv_sym(g.matrix());
    let nu = nu_of(g.matrix(), &variance_from_support(a, &support, &g_inv));
    let mu = mu_of(a, g.matrix());
    finish_report(a, sampler, g, mu, nu, Method::ExactEnumeration, with_kappa)
}

fn finish_report(
    a: &SpdMatrix,
    sampler: &SketchSampler,
    g: SpdMatrix,
    mu: f64,
    nu: f64,
    method: Method,
    with_kappa: bool,
) -> Result<ConstantsReport> {
    let n = a.n();
    let p = sampler.block_size();
    let nu_lower = p.map_or(f64::NAN, |p| n as f64 / p as f64);
    let (kappa, nu_upper) = match p {
        Some(p) if with_kappa && p > 1 && p < n => {
            let k = kappa_eff(a, p, true)?;
            (Some(k), Some(nu_upper_bound(n, p, k.value)))
        }
        Some(p) if with_kappa && p == n => (Some(KappaEff { value: 1.0, exhaustive: true }), Some(1.0)),
        _ => (None, None),
    };
    Ok(ConstantsReport { mu, nu, g, method, nu_lower, nu_upper, kappa_eff: kappa })
}

/// Monte-Carlo estimates of `G`, `μ` and `ν` from `samples` draws. The same
/// stream is replayed for the second moment, so the two passes see the same
/// index sets.
pub fn estimate_mu_nu_mc(
    a: &SpdMatrix,
    sampler: &SketchSampler,
    samples: usize,
    seed: u64,
) -> Result<ConstantsReport> {
    check_sampler(a, sampler)?;
    ensure(samples >= 1000, || format!("Monte-Carlo estimation needs samples >= 1000, got {samples}"))?;
    let n = a.n();
    let weight = 1.0 / samples as f64;
    let mut g = DMatrix::zeros(n, n);
    let mut r = rng::stream(seed, rng::ESTIMATE);
    for _ in 0..samples {
        let j = sampler.sample(&mut r);
        linalg::scatter_add(&mut g, j.as_slice(), &h_block(a.matrix(), &j), weight);
    }
    let g = linalg::symmetrized(g);
    let eig = SortedEigen::new(&g);
    if !(eig.min() > 1e-10 * eig.max()) {
        return Err(Error::numerical(format!(
            "Monte-Carlo estimate of G is singular (lambda_min = {:e}); increase samples",
            eig.min()
        )));
    }
    let g_inv = eig.map(|v| 1.0 / v);
    let mut var = DMatrix::zeros(n, n);
    let mut r = rng::stream(seed, rng::ESTIMATE);
    for _ in 0..samples {
        let j = sampler.sample(&mut r);
        let inv = h_block(a.matrix(), &j);
        let mid = linalg::principal_submatrix(&g_inv, j.as_slice());
        linalg::scatter_add(&mut var, j.as_slice(), &(&inv * mid * &inv), weight);
    }
    let var = linalg::symmetrized(var);
    let mu = mu_of(a, &g);
    let nu = nu_of(&g, &var);
    let g = SpdMatrix::new(g)?;
    finish_report(a, sampler, g, mu, nu, Method::MonteCarlo { samples }, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormMode {
    FixedPartition,
    UniformRandom,
}

fn check_family(n: usize, p: usize, alpha: f64, beta: f64, mode: ClosedFormMode) -> Result<()> {
    ensure(alpha > 0.0, || format!("closed form needs alpha > 0, got {alpha}"))?;
    ensure(alpha + beta > 0.0, || format!("closed form needs alpha + beta > 0, got {}", alpha + beta))?;
    match mode {
        ClosedFormMode::UniformRandom => {
            ensure(p > 1 && p < n, || format!("uniform closed form needs 1 < p < n, got p = {p}, n = {n}"))
        }
        ClosedFormMode::FixedPartition => ensure(p >= 1 && p <= n && n % p == 0, || {
            format!("fixed-partition closed form needs p | n, got p = {p}, n = {n}")
        }),
    }
}

/// `μ` on `A_{α,β}`.
///
/// Uniform sampling: `E[GA] = cI + d11ᵀ` with
/// `c = p((n−1)α + (p−1)β)/((n−1)(nα + pβ))`, `c + nd = p(α + β)/(nα + pβ)`,
/// and `μ = min(c, c + nd)`; for `β ≥ 0` this is `c`.
///
/// Fixed partition: the spectrum of `E[GA]` is `p/n` (when `p ≥ 2`),
/// `pα/(nα + pβ)` (when `n/p ≥ 2`) and `p(α + β)/(nα + pβ)`.
pub fn closed_form_mu(n: usize, p: usize, alpha: f64, beta: f64, mode: ClosedFormMode) -> Result<f64> {
    check_family(n, p, alpha, beta, mode)?;
    let (nf, pf) = (n as f64, p as f64);
    let denom = nf * alpha + pf * beta;
    let ones = pf * (alpha + beta) / denom;
    Ok(match mode {
        ClosedFormMode::UniformRandom => {
            let c = pf * ((nf - 1.0) * alpha + (pf - 1.0) * beta) / ((nf - 1.0) * denom);
            c.min(ones)
        }
        ClosedFormMode::FixedPartition => {
            let mut mu = ones;
            if p >= 2 {
                mu = mu.min(pf / nf);
            }
            if n / p >= 2 {
                mu = mu.min(pf * alpha / denom);
            }
            mu
        }
    })
}

/// `(c, d)` with `G = cI + d11ᵀ` under uniform sampling on `A_{α,β}`.
pub fn closed_form_g_uniform(n: usize, p: usize, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    check_family(n, p, alpha, beta, ClosedFormMode::UniformRandom)?;
    let (nf, pf) = (n as f64, p as f64);
    let bn = beta / nf;
    let frac = (pf - 1.0) / (nf - 1.0);
    let c = pf / (alpha * nf) * (1.0 - bn / (alpha + beta * pf / nf) * (1.0 - frac));
    let d = -(pf / nf) * frac * bn / (alpha * (alpha + beta * pf / nf));
    Ok((c, d))
}

/// `(c, d)` with `E[H G⁻¹ H] = cI + d11ᵀ` under uniform sampling on
/// `A_{α,β}`, from the second-moment identities for `SSᵀ` and `S11ᵀSᵀ`.
pub fn closed_form_variance_uniform(n: usize, p: usize, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let (gc, gd) = closed_form_g_uniform(n, p, alpha, beta)?;
    let (nf, pf) = (n as f64, p as f64);
    // G⁻¹ = γI + η11ᵀ.
    let gamma = 1.0 / gc;
    let eta = -gd / (gc * (gc + nf * gd));
    // (SᵀAS)⁻¹ = rI + q11ᵀ.
    let r = 1.0 / alpha;
    let q = -(beta / nf) / (alpha * (alpha + beta * pf / nf));
    let scale = nf * (nf - 1.0);
    let c = (pf * (pf * (nf - pf) * q * q + 2.0 * (nf - pf) * q * r + (nf - 1.0) * r * r) * gamma
        + pf * (nf - pf) * (pf * q + r).powi(2) * eta)
        / scale;
    let d = pf * (pf - 1.0) * (q * (pf * q + 2.0 * r) * gamma + (pf * q + r).powi(2) * eta) / scale;
    Ok((c, d))
}

/// `ν` on `A_{α,β}`: uniform sampling from the closed forms above; a fixed
/// partition always gives `n/p`.
pub fn closed_form_nu(n: usize, p: usize, alpha: f64, beta: f64, mode: ClosedFormMode) -> Result<f64> {
    check_family(n, p, alpha, beta, mode)?;
    match mode {
        ClosedFormMode::FixedPartition => Ok(n as f64 / p as f64),
        ClosedFormMode::UniformRandom => {
            let (gc, gd) = closed_form_g_uniform(n, p, alpha, beta)?;
            let (vc, vd) = closed_form_variance_uniform(n, p, alpha, beta)?;
            let nf = n as f64;
            Ok((vc / gc).max((vc + nf * vd) / (gc + nf * gd)))
        }
    }
}

/// `κ_eff,p(A) = max_{|J| = p} max_{i∈J} A_ii / λ_min(A_J)`. Exhaustive when
/// `C(n, p)` fits the enumeration budget; otherwise, if `allow_sampled`, the
/// maximum over [`KAPPA_SAMPLES`] seeded random subsets (a lower estimate).
pub fn kappa_eff(a: &SpdMatrix, p: usize, allow_sampled: bool) -> Result<KappaEff> {
    let n = a.n();
    ensure(p >= 1 && p <= n, || format!("kappa_eff needs 1 <= p <= n, got p = {p}"))?;
    let m = a.matrix();
    let ratio = |j: &[usize]| {
        let dmax = j.iter().map(|&i| m[(i, i)]).fold(f64::MIN, f64::max);
        dmax / linalg::lambda_min(&linalg::principal_submatrix(m, j))
    };
    let size = binomial(n, p);
    if size <= ENUMERATION_BUDGET as f64 {
        let value = (0..n).combinations(p).map(|j| ratio(&j)).fold(f64::MIN, f64::max);
        return Ok(KappaEff { value, exhaustive: true });
    }
    if !allow_sampled {
        return Err(Error::SupportTooLarge { size, budget: ENUMERATION_BUDGET });
    }
    let sampler = SketchSampler::uniform(n, p)?;
    let mut r = rng::stream(0, rng::ESTIMATE);
    let value = (0..KAPPA_SAMPLES)
        .map(|_| ratio(sampler.sample(&mut r).as_slice()))
        .fold(f64::MIN, f64::max);
    Ok(KappaEff { value, exhaustive: false })
}

/// `(n/p)(β' + (1 − β')κ)` with `β' = (p − 1)/(n − 1)`.
pub fn nu_upper_bound(n: usize, p: usize, kappa: f64) -> f64 {
    let bp = (p as f64 - 1.0) / (n as f64 - 1.0);
    n as f64 / p as f64 * (bp + (1.0 - bp) * kappa)
}

/// `(n/p, (n/p)(β' + (1 − β')κ_eff,p))`.
pub fn nu_bounds(a: &SpdMatrix, p: usize) -> Result<(f64, f64)> {
    let n = a.n();
    ensure(p > 1 && p < n, || format!("nu bounds need 1 < p < n, got p = {p}, n = {n}"))?;
    let k = kappa_eff(a, p, false)?;
    Ok((n as f64 / p as f64, nu_upper_bound(n, p, k.value)))
}

/// Unit vector in the top eigenspace of `m` with the largest first
/// coordinate (positive); ties between coordinates go to the smallest index.
fn top_eigvec(m: &DMatrix<f64>) -> DVector<f64> {
    let eig = SortedEigen::new(m);
    let n = m.nrows();
    let top = eig.max();
    let scale = eig.values.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let cols: Vec<usize> = (0..n).filter(|&i| top - eig.values[i] <= 1e-10 * scale).collect();
    for coord in 0..n {
        let mut v = DVector::zeros(n);
        for &c in &cols {
            let col = eig.vectors.column(c);
            v.axpy(col[coord], &col, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            if v[coord] < 0.0 {
                v.neg_mut();
            }
            return v;
        }
    }
    unreachable!("an eigenspace always has a coordinate with non-zero projection")
}

/// The error `e₀ = A^{-1/2} v` with `v` the top unit eigenvector of
/// `I − A^{1/2} G A^{1/2}`; so `‖e₀‖_A = 1` and the exact mean error contracts
/// by exactly `1 − μ` per step.
pub fn adversarial_error_gs(a: &SpdMatrix, sampler: &SketchSampler) -> Result<DVector<f64>> {
    let g = compute_g(a, sampler)?;
    let half = linalg::sqrt_psd(a.matrix());
    let n = a.n();
    let m = DMatrix::identity(n, n) - linalg::symmetrized(&half * g.matrix() * &half);
    let v = top_eigvec(&m);
    Ok(linalg::inv_sqrt_pd(a.matrix()) * v)
}

/// `x₀ = x_* + e₀` for [`adversarial_error_gs`].
pub fn adversarial_start_gs(sys: &LinearSystem, sampler: &SketchSampler) -> Result<DVector<f64>> {
    Ok(&sys.x_star + adversarial_error_gs(&sys.a, sampler)?)
}

/// Output of the accelerated lower-bound construction.
#[derive(Debug, Clone)]
pub struct AccelAdversary {
    /// `y₀ − x_*`.
    pub ey: DVector<f64>,
    /// `z₀ − x_*`.
    pub ez: DVector<f64>,
    /// The `2n × 2n` mean-error propagator in `P^{1/2}` coordinates,
    /// `P = blkdiag(A, μG⁻¹)`.
    pub r: DMatrix<f64>,
    pub sigma_max_rk: f64,
}

/// Builds `R` for `Q = A^{1/2} G^{1/2}` and decodes the top right singular
/// vector `w` of `R^k` into `(e_y, e_z) = (A^{-1/2} w₁, μ^{-1/2} G^{1/2} w₂)`.
pub fn adversarial_error_accel(
    a: &SpdMatrix,
    sampler: &SketchSampler,
    consts: &AccelConstants,
    k: usize,
) -> Result<AccelAdversary> {
    ensure(k >= 1, || "accelerated adversarial start needs k >= 1".into())?;
    let g = compute_g(a, sampler)?;
    let n = a.n();
    let (mu, tau) = (consts.mu(), consts.tau());
    let a_half = linalg::sqrt_psd(a.matrix());
    let g_half = linalg::sqrt_psd(g.matrix());
    let q = &a_half * &g_half;
    let q_inv = linalg::sqrt_psd(&linalg::pinv_sym(g.matrix())) * linalg::inv_sqrt_pd(a.matrix());
    let qqt = &q * q.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let s = 1.0 / (1.0 + tau);
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    r.view_mut((0, 0), (n, n)).copy_from(&((&id - &qqt) * s));
    r.view_mut((0, n), (n, n)).copy_from(&((&q - &qqt * &q) * (s * tau / mu.sqrt())));
    r.view_mut((n, 0), (n, n)).copy_from(&((&q_inv - q.transpose() / mu) * (s * tau * mu.sqrt())));
    r.view_mut((n, n), (n, n)).copy_from(&((&id - q.transpose() * &q * (tau * tau / mu)) * s));
    let mut rk = r.clone();
    for _ in 1..k {
        rk = &rk * &r;
    }
    let gram = linalg::symmetrized(rk.transpose() * &rk);
    let sigma_max_rk = linalg::lambda_max(&gram).max(0.0).sqrt();
    let w = top_eigvec(&gram);
    let ey = linalg::inv_sqrt_pd(a.matrix()) * w.rows(0, n);
    let ez = &g_half * w.rows(n, n) / mu.sqrt();
    Ok(AccelAdversary { ey, ez, r, sigma_max_rk })
}

/// `(y₀, z₀)` for [`adversarial_error_accel`].
pub fn adversarial_start_accel(
    sys: &LinearSystem,
    sampler: &SketchSampler,
    consts: &AccelConstants,
    k: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let adv = adversarial_error_accel(&sys.a, sampler, consts, k)?;
    Ok((&sys.x_star + adv.ey, &sys.x_star + adv.ez))
}

/// Exact mean errors `E[e_k]`, `k = 0..=steps`, of plain Gauss-Seidel from
/// `e₀`, by averaging `e ↦ (I − H_J A)e` over the support at every step.
pub fn propagate_mean_error_gs(
    a: &SpdMatrix,
    sampler: &SketchSampler,
    e0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    check_sampler(a, sampler)?;
    let support = sampler.enumerate_support()?;
    let mut out = vec![e0.clone()];
    for _ in 0..steps {
        let e = out.last().expect("non-empty");
        let ae = a.matrix() * e;
        let mut next = e.clone();
        for (j, q) in &support {
            let step = solvers::block_step(a, &ae, j);
            next.axpy(-q, &step, 1.0);
        }
        out.push(next);
    }
    Ok(out)
}

/// Exact mean errors `(E[y_k − x_*], E[z_k − x_*])` of the accelerated
/// recurrence, propagated over the support.
pub fn propagate_mean_error_accel(
    a: &SpdMatrix,
    sampler: &SketchSampler,
    consts: &AccelConstants,
    ey0: &DVector<f64>,
    ez0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    check_sampler(a, sampler)?;
    let support = sampler.enumerate_support()?;
    let (mu, tau) = (consts.mu(), consts.tau());
    let mut out = vec![(ey0.clone(), ez0.clone())];
    for _ in 0..steps {
        let (ey, ez) = out.last().expect("non-empty").clone();
        let ex = (&ey + &ez * tau) / (1.0 + tau);
        let aex = a.matrix() * &ex;
        let mut mean_step = DVector::zeros(a.n());
        for (j, q) in &support {
            mean_step.axpy(*q, &solvers::block_step(a, &aex, j), 1.0);
        }
        let ey_next = &ex - &mean_step;
        let ez_next = &ez + (&ex - &ez) * tau - mean_step * (tau / mu);
        out.push((ey_next, ez_next));
    }
    Ok(out)
}

/// `E[V_{k+1} | y_k = y, z_k = z]` over the support.
pub fn expected_next_lyapunov(
    sys: &LinearSystem,
    sampler: &SketchSampler,
    consts: &AccelConstants,
    g_inverse: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<f64> {
    let support = sampler.enumerate_support()?;
    Ok(support
        .iter()
        .map(|(j, q)| {
            let (yn, zn) = solvers::accel_transition(sys, consts, y, z, j);
            q * solvers::lyapunov_value(sys, consts, g_inverse, &yn, &zn)
        })
        .sum())
}

/// `(λ_min(AᵀA)/m, m)` for uniform single-row sampling of an `m × n` matrix
/// with unit rows. With `unit_rows` set, every row norm must lie within
/// `1e-9` of one.
pub fn kaczmarz_constants(a: &DMatrix<f64>, unit_rows: bool) -> Result<(f64, f64)> {
    let m = a.nrows();
    ensure(m >= 1, || "empty matrix".into())?;
    if unit_rows {
        for (i, row) in a.row_iter().enumerate() {
            let norm = row.norm();
            ensure((norm - 1.0).abs() <= 1e-9, || format!("row {i} has norm {norm}, expected 1"))?;
        }
    }
    let gram = linalg::symmetrized(a.transpose() * a);
    Ok((linalg::lambda_min(&gram) / m as f64, m as f64))
}

/// `P_{A_J^T}` for the rows `J` of `a`.
fn row_projector(a: &DMatrix<f64>, j: &IndexSet) -> DMatrix<f64> {
    let rows = linalg::select_rows(a, j.as_slice());
    let inv = linalg::pinv_sym(&linalg::symmetrized(&rows * rows.transpose()));
    linalg::symmetrized(rows.transpose() * inv * rows)
}

/// Exact `(μ, ν)` for Kaczmarz with `H = P_{AᵀS}`, by enumerating the row
/// sampler's support.
pub fn kaczmarz_exact_constants(a: &DMatrix<f64>, sampler: &SketchSampler) -> Result<(f64, f64)> {
    ensure(sampler.n() == a.nrows(), || {
        format!("row sampler is over {} rows, matrix has {}", sampler.n(), a.nrows())
    })?;
    let support = sampler.enumerate_support()?;
    let n = a.ncols();
    let projs: Vec<(DMatrix<f64>, f64)> = support.iter().map(|(j, q)| (row_projector(a, j), *q)).collect();
    let mut g = DMatrix::zeros(n, n);
    for (p, q) in &projs {
        g += p * *q;
    }
    let g = linalg::symmetrized(g);
    let eig = SortedEigen::new(&g);
    ensure(eig.min() > 1e-10 * eig.max(), || "E[P] is singular: matrix lacks full column rank".into())?;
    let g_inv = eig.map(|v| 1.0 / v);
    let mut var = DMatrix::zeros(n, n);
    for (p, q) in &projs {
        var += p * &g_inv * p * *q;
    }
    Ok((eig.min(), nu_of(&g, &linalg::symmetrized(var))))
}

/// Checks `E[P_M] ⪰ E[M] (E[MᵀM])† E[Mᵀ]` with slack `1e-9` on `λ_min`.
pub fn check_semidef_jensen(samples: &[(DMatrix<f64>, f64)]) -> bool {
    let Some((first, _)) = samples.first() else {
        return true;
    };
    let (n, k) = first.shape();
    let mut e_p = DMatrix::zeros(n, n);
    let mut e_m = DMatrix::zeros(n, k);
    let mut e_mtm = DMatrix::zeros(k, k);
    for (m, q) in samples {
        assert_eq!(m.shape(), (n, k), "inconsistent sample dimensions");
        let mtm = linalg::symmetrized(m.transpose() * m);
        e_p += m * linalg::pinv_sym(&mtm) * m.transpose() * *q;
        e_m += m * *q;
        e_mtm += mtm * *q;
    }
    let rhs = &e_m * linalg::pinv_sym(&linalg::symmetrized(e_mtm)) * e_m.transpose();
    linalg::lambda_min(&linalg::symmetrized(e_p - rhs)) >= -1e-9
}

/// Where an accelerated run gets its `(μ, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstantsSource {
    /// Closed forms; needs `A = A_{α,β}`.
    ClosedForm,
    Exact,
    MonteCarlo { samples: usize },
    Explicit { mu: f64, nu: f64 },
}

impl ConstantsSource {
    pub fn name(&self) -> &'static str {
        match self {
            ConstantsSource::ClosedForm => "closed-form",
            ConstantsSource::Exact => "exact",
            ConstantsSource::MonteCarlo { .. } => "monte-carlo",
            ConstantsSource::Explicit { .. } => "explicit",
        }
    }
}

/// Resolves `source` into accelerated constants. `family` carries `(α, β)`
/// when `a` is known to be `A_{α,β}`; `seed` drives Monte-Carlo estimation.
pub fn resolve_constants(
    source: ConstantsSource,
    a: &SpdMatrix,
    sampler: &SketchSampler,
    family: Option<(f64, f64)>,
    seed: u64,
) -> Result<AccelConstants> {
    match source {
        ConstantsSource::Explicit { mu, nu } => AccelConstants::new(mu, nu),
        ConstantsSource::Exact => exact_report(a, sampler, false)?.accel_constants(),
        ConstantsSource::MonteCarlo { samples } => {
            estimate_mu_nu_mc(a, sampler, samples, seed)?.accel_constants()
        }
        ConstantsSource::ClosedForm => {
            let (alpha, beta) = family.ok_or_else(|| {
                Error::constraint("closed-form constants need an alpha-beta system")
            })?;
            let p = sampler.block_size().unwrap_or(0);
            let mode = match sampler.mode() {
                SamplerMode::FixedPartition(_) => ClosedFormMode::FixedPartition,
                SamplerMode::UniformRandom { .. } => ClosedFormMode::UniformRandom,
                SamplerMode::Weighted { .. } => {
                    return Err(Error::constraint("closed-form constants need fixed or random sampling"))
                }
            };
            let n = a.n();
            AccelConstants::new(
                closed_form_mu(n, p, alpha, beta, mode)?,
                closed_form_nu(n, p, alpha, beta, mode)?,
            )
        }
    }
}

/// True if the sampler is a fixed partition.
pub fn is_partition(sampler: &SketchSampler) -> bool {
    matches!(sampler.mode(), SamplerMode::FixedPartition(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrices::make_alpha_beta;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_constants() {
        let a = make_alpha_beta(6, 1.0, 0.0).unwrap();
        let s = SketchSampler::uniform(6, 2).unwrap();
        let g = compute_g(&a, &s).unwrap();
        assert!((g.matrix() - DMatrix::identity(6, 6) / 3.0).amax() < 1e-15);
        assert!(close(compute_mu(&a, &s).unwrap(), 1.0 / 3.0, 1e-12));
        assert!(close(compute_nu(&a, &s).unwrap(), 3.0, 1e-12));
    }

    #[test]
    fn small_alpha_beta_values() {
        let a = make_alpha_beta(4, 1.0, 2.0).unwrap();
        let u = SketchSampler::uniform(4, 2).unwrap();
        let f = SketchSampler::fixed_partition(4, 2).unwrap();
        assert!(close(compute_mu(&a, &u).unwrap(), 5.0 / 12.0, 1e-9));
        assert!(close(compute_mu(&a, &f).unwrap(), 0.25, 1e-9));
        let cu = closed_form_mu(4, 2, 1.0, 2.0, ClosedFormMode::UniformRandom).unwrap();
        let cf = closed_form_mu(4, 2, 1.0, 2.0, ClosedFormMode::FixedPartition).unwrap();
        assert!(close(cu, 5.0 / 12.0, 1e-15) && close(cf, 0.25, 1e-15));
    }

    #[test]
    fn closed_form_small_beta_limit() {
        let mu = closed_form_mu(10, 3, 1.0, 1e-12, ClosedFormMode::UniformRandom).unwrap();
        assert!(close(mu, 0.3, 1e-10));
        assert!(closed_form_mu(4, 4, 1.0, 1.0, ClosedFormMode::UniformRandom).is_err());
        assert!(closed_form_mu(4, 3, 1.0, 1.0, ClosedFormMode::FixedPartition).is_err());
        assert!(closed_form_mu(4, 2, 1.0, -1.0, ClosedFormMode::FixedPartition).is_err());
    }

    #[test]
    fn kappa_examples() {
        let id = make_alpha_beta(5, 1.0, 0.0).unwrap();
        assert_eq!(kappa_eff(&id, 2, false).unwrap().value, 1.0);
        let (lo, hi) = nu_bounds(&id, 2).unwrap();
        assert!(close(lo, 2.5, 1e-15) && close(hi, 2.5, 1e-12));
        let delta = make_alpha_beta(4, 5.0, -4.0).unwrap();
        assert!(close(kappa_eff(&delta, 2, false).unwrap().value, 4.0 / 3.0, 1e-12));
    }

    #[test]
    fn mc_precondition() {
        let a = make_alpha_beta(4, 1.0, 1.0).unwrap();
        let s = SketchSampler::uniform(4, 2).unwrap();
        assert!(estimate_mu_nu_mc(&a, &s, 10, 0).is_err());
    }

    #[test]
    fn jensen_examples() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(check_semidef_jensen(&[(m, 1.0)]));
        let e1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(check_semidef_jensen(&[(e1, 0.5), (e2, 0.5)]));
    }

    #[test]
    fn kaczmarz_constants_reject_non_unit_rows() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(kaczmarz_constants(&a, true).is_err());
        assert!(kaczmarz_constants(&a, false).is_ok());
    }
}
