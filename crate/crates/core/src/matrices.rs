//! Dense SPD matrices, the test ensembles built from them, linear systems with
//! known solutions, and the `spdmat` text format.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::{self, SortedEigen};
use crate::rng;

/// Relative eigenvalue floor used to accept a matrix as positive definite.
pub const PD_TOLERANCE: f64 = 1e-10;

/// A dense symmetric positive definite matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates exact symmetry and `λ_min > 1e-10 · λ_max`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        ensure(n >= 1, || "matrix must have n >= 1".into())?;
        ensure(entries.ncols() == n, || {
            format!("matrix must be square, got {}x{}", n, entries.ncols())
        })?;
        ensure(entries.iter().all(|v| v.is_finite()), || "matrix has non-finite entries".into())?;
        for i in 0..n {
            for j in (i + 1)..n {
                ensure(entries[(i, j)] == entries[(j, i)], || {
                    format!("matrix is not symmetric at ({i}, {j})")
                })?;
            }
        }
        let eig = SortedEigen::new(&entries);
        let (lo, hi) = (eig.min(), eig.max());
        ensure(hi > 0.0 && lo > PD_TOLERANCE * hi, || {
            format!("matrix is not positive definite: lambda_min = {lo:e}, lambda_max = {hi:e}")
        })?;
        Ok(Self { entries })
    }

    /// Symmetrizes `(M + Mᵀ)/2` before validating. Used for products that are
    /// symmetric only up to rounding.
    pub fn from_symmetrized(entries: DMatrix<f64>) -> Result<Self> {
        ensure(entries.is_square(), || "matrix must be square".into())?;
        Self::new(linalg::symmetrized(entries))
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn eigen(&self) -> SortedEigen {
        SortedEigen::new(&self.entries)
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.entries.clone())
            .ok_or_else(|| Error::numerical("Cholesky factorization failed"))
    }

    /// `‖v‖²_A`.
    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        linalg::quad_form(&self.entries, v)
    }

    /// `A + shift · I`.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        let n = self.n();
        Self::new(&self.entries + DMatrix::identity(n, n) * shift)
    }
}

/// `αI + (β/n)·11ᵀ`.
pub fn make_alpha_beta(n: usize, alpha: f64, beta: f64) -> Result<SpdMatrix> {
    ensure(n >= 1, || "alpha-beta family needs n >= 1".into())?;
    ensure(alpha > 0.0, || format!("alpha-beta family needs alpha > 0, got {alpha}"))?;
    ensure(alpha + beta > 0.0, || {
        format!("alpha-beta family needs alpha + beta > 0, got {}", alpha + beta)
    })?;
    let off = beta / n as f64;
    SpdMatrix::new(DMatrix::from_fn(n, n, |i, j| if i == j { alpha + off } else { off }))
}

/// Matrix families and their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnsembleKind {
    AlphaBeta { n: usize, alpha: f64, beta: f64 },
    /// `Q diag(linspace(1, κ_max, n)) Qᵀ` with a seeded orthogonal `Q`.
    LinspaceEig { n: usize, kappa_max: f64 },
    /// `BᵀB` with `B` an `m × n` standard Gaussian draw.
    Wishart { n: usize, m: usize },
    /// `A_ij = min(i, j)`, 1-based.
    Sobolev { n: usize },
    Circulant { n: usize },
    /// Unit diagonal, constant off-diagonal, smallest eigenvalue `δ`.
    Tridiagonal { n: usize, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(flatten)]
    pub kind: EnsembleKind,
    #[serde(default)]
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn n(&self) -> usize {
        match self.kind {
            EnsembleKind::AlphaBeta { n, .. }
            | EnsembleKind::LinspaceEig { n, .. }
            | EnsembleKind::Wishart { n, .. }
            | EnsembleKind::Sobolev { n }
            | EnsembleKind::Circulant { n }
            | EnsembleKind::Tridiagonal { n, .. } => n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        ensure(n >= 1, || "ensemble needs n >= 1".into())?;
        match self.kind {
            EnsembleKind::AlphaBeta { alpha, beta, .. } => {
                ensure(alpha > 0.0, || format!("alpha-beta needs alpha > 0, got {alpha}"))?;
                ensure(alpha + beta > 0.0, || "alpha-beta needs alpha + beta > 0".into())
            }
            EnsembleKind::LinspaceEig { kappa_max, .. } => ensure(kappa_max >= 1.0, || {
                format!("linspace-eig needs kappa_max >= 1, got {kappa_max}")
            }),
            EnsembleKind::Wishart { m, .. } => {
                ensure(m >= n, || format!("wishart needs m >= n, got m = {m}, n = {n}"))
            }
            EnsembleKind::Tridiagonal { delta, .. } => ensure(delta > 0.0 && delta < 1.0, || {
                format!("tridiagonal needs 0 < delta < 1, got {delta}")
            }),
            EnsembleKind::Sobolev { .. } | EnsembleKind::Circulant { .. } => Ok(()),
        }
    }
}

pub fn generate_ensemble(spec: &EnsembleSpec) -> Result<SpdMatrix> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::DATA);
    match spec.kind {
        EnsembleKind::AlphaBeta { n, alpha, beta } => make_alpha_beta(n, alpha, beta),
        EnsembleKind::LinspaceEig { n, kappa_max } => {
            let q = haar_orthogonal(n, &mut rng);
            let step = if n > 1 { (kappa_max - 1.0) / (n - 1) as f64 } else { 0.0 };
            let d = DVector::from_fn(n, |i, _| 1.0 + step * i as f64);
            SpdMatrix::from_symmetrized(&q * DMatrix::from_diagonal(&d) * q.transpose())
        }
        EnsembleKind::Wishart { n, m } => {
            let b = gaussian_matrix(m, n, &mut rng);
            SpdMatrix::from_symmetrized(b.transpose() * b)
        }
        EnsembleKind::Sobolev { n } => {
            SpdMatrix::new(DMatrix::from_fn(n, n, |i, j| (i.min(j) + 1) as f64))
        }
        EnsembleKind::Circulant { n } => circulant(n).map(|(a, _)| a),
        EnsembleKind::Tridiagonal { n, delta } => {
            let off = if n > 1 {
                let theta = std::f64::consts::PI * n as f64 / (n + 1) as f64;
                (delta - 1.0) / (2.0 * theta.cos())
            } else {
                0.0
            };
            SpdMatrix::new(DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
                0 => 1.0,
                1 => off,
                _ => 0.0,
            }))
        }
    }
}

/// Circulant `F diag(c) F*` with `c_j = 1/(min(j, n−j) + 1)`, together with the
/// largest imaginary magnitude discarded when taking the real part.
pub fn circulant(n: usize) -> Result<(SpdMatrix, f64)> {
    ensure(n >= 1, || "circulant needs n >= 1".into())?;
    let c = circulant_spectrum(n);
    let scale = 1.0 / (n as f64).sqrt();
    let f = DMatrix::from_fn(n, n, |j, k| {
        let angle = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
        Complex::from_polar(scale, angle)
    });
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| Complex::new(c[i], 0.0)));
    let full = &f * d * f.adjoint();
    let residue = full.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    let real = full.map(|z| z.re);
    Ok((SpdMatrix::from_symmetrized(real)?, residue))
}

pub fn circulant_spectrum(n: usize) -> Vec<f64> {
    (0..n).map(|j| 1.0 / (j.min(n - j) + 1) as f64).collect()
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut rng::Stream) -> DMatrix<f64> {
    // Filled row by row so the draw order does not depend on storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Orthogonal factor of a Gaussian QR with the signs of `R`'s diagonal made
/// positive, which makes `Q` Haar distributed and determined by the draw.
fn haar_orthogonal(n: usize, rng: &mut rng::Stream) -> DMatrix<f64> {
    let qr = gaussian_matrix(n, n, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Ax = b` together with its solution.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: SpdMatrix,
    pub b: DVector<f64>,
    pub x_star: DVector<f64>,
}

impl LinearSystem {
    /// Solves for `x_star` by Cholesky.
    pub fn new(a: SpdMatrix, b: DVector<f64>) -> Result<Self> {
        ensure(b.len() == a.n(), || {
            format!("rhs has length {}, matrix is {}x{}", b.len(), a.n(), a.n())
        })?;
        let x_star = a.cholesky()?.solve(&b);
        Ok(Self { a, b, x_star })
    }

    /// Uses a caller-supplied solution, checked to `1e-8` relative residual.
    pub fn with_solution(a: SpdMatrix, b: DVector<f64>, x_star: DVector<f64>) -> Result<Self> {
        ensure(b.len() == a.n() && x_star.len() == a.n(), || "dimension mismatch".into())?;
        let res = (a.matrix() * &x_star - &b).norm();
        ensure(res <= 1e-8 * b.norm(), || {
            format!("x_star residual {res:e} exceeds 1e-8 * |b|")
        })?;
        Ok(Self { a, b, x_star })
    }

    /// System with a standard Gaussian right-hand side drawn from the
    /// right-hand-side stream of `seed`.
    pub fn with_gaussian_rhs(a: SpdMatrix, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, rng::RHS);
        let b = DVector::from_fn(a.n(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::new(a, b)
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.matrix() * x - &self.b
    }

    /// `f(x) = ½xᵀAx − bᵀx`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.a.norm_sq(x) - self.b.dot(x)
    }

    /// `f(x_*)`.
    pub fn optimal_value(&self) -> f64 {
        -0.5 * self.b.dot(&self.x_star)
    }

    pub fn rel_err(&self, x: &DVector<f64>) -> Result<f64> {
        rel_err_a_norm(&self.a, x, &self.x_star)
    }
}

/// `‖x − x_*‖²_A / ‖x_*‖²_A`.
pub fn rel_err_a_norm(a: &SpdMatrix, x: &DVector<f64>, x_star: &DVector<f64>) -> Result<f64> {
    ensure(x.len() == a.n() && x_star.len() == a.n(), || "dimension mismatch".into())?;
    let denom = a.norm_sq(x_star);
    ensure(denom > 0.0, || "relative error undefined for x_star = 0".into())?;
    Ok((a.norm_sq(&(x - x_star)) / denom).max(0.0))
}

pub fn to_spdmat_string(a: &SpdMatrix) -> String {
    let n = a.n();
    let mut out = format!("spdmat 1 {n}\n");
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{:e}", a.get(i, j)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn parse_spdmat(text: &str) -> Result<SpdMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let n = match fields.as_slice() {
        ["spdmat", "1", n] => n
            .parse::<usize>()
            .map_err(|_| Error::parse(hline, format!("bad dimension `{n}`")))?,
        _ => return Err(Error::parse(hline, "expected header `spdmat 1 <n>`")),
    };
    if n == 0 {
        return Err(Error::parse(hline, "dimension must be positive"));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut row = 0;
    let mut last_line = hline;
    for (lineno, line) in lines {
        last_line = lineno;
        if line.is_empty() {
            continue;
        }
        if row == n {
            return Err(Error::parse(lineno, format!("more than {n} rows")));
        }
        let mut count = 0;
        for tok in line.split_whitespace() {
            if count == n {
                return Err(Error::parse(lineno, format!("row has more than {n} entries")));
            }
            m[(row, count)] = tok
                .parse::<f64>()
                .map_err(|_| Error::parse(lineno, format!("bad number `{tok}`")))?;
            count += 1;
        }
        if count != n {
            return Err(Error::parse(lineno, format!("row has {count} entries, expected {n}")));
        }
        for j in 0..row {
            if m[(row, j)] != m[(j, row)] {
                return Err(Error::parse(lineno, format!("asymmetric entry ({row}, {j})")));
            }
        }
        row += 1;
    }
    if row != n {
        return Err(Error::parse(last_line + 1, format!("found {row} rows, expected {n}")));
    }
    SpdMatrix::new(m)
}

pub fn write_matrix(path: impl AsRef<Path>, a: &SpdMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_spdmat_string(a)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<SpdMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spdmat(&text)
}
