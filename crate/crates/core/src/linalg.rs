//! Dense kernels over symmetric positive-definite matrices.
//!
//! Direct sums, Kronecker products, spectral whitening, Gaussian
//! conditioning, and the multivariate, matrix-variate normal and
//! inverse-Wishart densities and samplers used throughout the crate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const SYMMETRY_TOL: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-10;
const PSD_CLAMP_TOL: f64 = 1e-10;

/// Symmetric positive-definite matrix with a cached lower Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    l: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry (relative to the largest entry) and positive
    /// definiteness (every Cholesky pivot above `1e-10 * trace / dim`).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::NotSpd(format!("shape {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSpd(format!("asymmetry {asym:e}")));
        }
        let m = (&m + m.transpose()) * 0.5;
        let trace = m.trace();
        if trace <= 0.0 {
            return Err(Error::NotSpd("non-positive trace".into()));
        }
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotSpd("Cholesky factorisation failed".into()))?;
        let l = chol.unpack();
        let floor = PIVOT_TOL * trace / n as f64;
        if let Some(k) = (0..n).find(|&k| l[(k, k)] * l[(k, k)] <= floor) {
            return Err(Error::NotSpd(format!("pivot {k} below tolerance")));
        }
        Ok(Self { m, l })
    }

    pub fn identity(n: usize) -> Self {
        Self { m: DMatrix::identity(n, n), l: DMatrix::identity(n, n) }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Lower factor `L` with `L L' = S`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.l.solve_lower_triangular(b).expect("non-singular factor");
        self.l.tr_solve_lower_triangular(&y).expect("non-singular factor")
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.l.solve_lower_triangular(b).expect("non-singular factor");
        self.l.tr_solve_lower_triangular(&y).expect("non-singular factor")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.solve_matrix(&DMatrix::identity(self.dim(), self.dim()));
        (&inv + inv.transpose()) * 0.5
    }

    /// Quadratic form `x' S^{-1} x`.
    pub fn inv_quad_form(&self, x: &DVector<f64>) -> f64 {
        let y = self.l.solve_lower_triangular(x).expect("non-singular factor");
        y.norm_squared()
    }

    /// Draw from `N(0, S)`.
    pub fn sample_normal<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.l * z
    }

    pub fn max_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.m.clone()).eigenvalues.max()
    }
}

/// Block-diagonal covariance with telescoping block sizes: payment blocks of
/// dimension `J+1, J, ..., 1` and incurred blocks of dimension `J, ..., 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TelescopingBlockDiag {
    pub payment_blocks: Vec<SpdMatrix>,
    pub incurred_blocks: Vec<SpdMatrix>,
}

impl TelescopingBlockDiag {
    pub fn new(payment_blocks: Vec<SpdMatrix>, incurred_blocks: Vec<SpdMatrix>) -> Result<Self> {
        let n = payment_blocks.len();
        if n == 0 {
            return Err(Error::EmptyList);
        }
        let j = n - 1;
        if incurred_blocks.len() != j {
            return Err(Error::LengthMismatch { expected: j, got: incurred_blocks.len() });
        }
        for (i, b) in payment_blocks.iter().enumerate() {
            if b.dim() != j + 1 - i {
                return Err(Error::LengthMismatch { expected: j + 1 - i, got: b.dim() });
            }
        }
        for (i, b) in incurred_blocks.iter().enumerate() {
            if b.dim() != j - i {
                return Err(Error::LengthMismatch { expected: j - i, got: b.dim() });
            }
        }
        Ok(Self { payment_blocks, incurred_blocks })
    }

    pub fn identity(dev_max: usize) -> Self {
        Self {
            payment_blocks: (0..=dev_max).map(|i| SpdMatrix::identity(dev_max + 1 - i)).collect(),
            incurred_blocks: (0..dev_max).map(|i| SpdMatrix::identity(dev_max - i)).collect(),
        }
    }

    pub fn dev_max(&self) -> usize {
        self.payment_blocks.len() - 1
    }

    /// All blocks in storage order: payment blocks then incurred blocks.
    pub fn blocks(&self) -> impl Iterator<Item = &SpdMatrix> {
        self.payment_blocks.iter().chain(&self.incurred_blocks)
    }

    pub fn assemble(&self) -> SpdMatrix {
        let blocks: Vec<SpdMatrix> = self.blocks().cloned().collect();
        direct_sum(&blocks).expect("at least one block")
    }
}

/// Raw block-diagonal assembly without SPD validation.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn direct_sum(blocks: &[SpdMatrix]) -> Result<SpdMatrix> {
    if blocks.is_empty() {
        return Err(Error::EmptyList);
    }
    let ms: Vec<&DMatrix<f64>> = blocks.iter().map(|b| &b.m).collect();
    let ls: Vec<&DMatrix<f64>> = blocks.iter().map(|b| &b.l).collect();
    Ok(SpdMatrix { m: block_diag(&ms), l: block_diag(&ls) })
}

pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Rotation-dilation pair from `S = U diag(lambda) U'`.
#[derive(Clone, Debug)]
pub struct Whitening {
    /// `W = diag(lambda)^{-1/2} U'`, so that `W S W' = I`.
    pub transform: DMatrix<f64>,
    /// `W^{-1} = U diag(lambda)^{1/2}`.
    pub inverse_transform: DMatrix<f64>,
}

pub fn spectral_whiten(s: &SpdMatrix) -> Result<Whitening> {
    let eig = SymmetricEigen::new(s.m.clone());
    let tol = PIVOT_TOL * s.m.trace() / s.dim() as f64;
    if eig.eigenvalues.iter().any(|&l| !(l > tol)) {
        return Err(Error::NotSpd("eigenvalue below tolerance".into()));
    }
    let u = eig.eigenvectors;
    let mut transform = u.transpose();
    let mut inverse_transform = u;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let r = l.sqrt();
        transform.row_mut(k).scale_mut(1.0 / r);
        inverse_transform.column_mut(k).scale_mut(r);
    }
    Ok(Whitening { transform, inverse_transform })
}

/// Symmetric square root factor `F` with `F F' = M` for a PSD matrix,
/// negative eigenvalues clamped to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut f = eig.eigenvectors;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        f.column_mut(k).scale_mut(l.max(0.0).sqrt());
    }
    f
}

/// Distribution of the unobserved block of a Gaussian vector.
#[derive(Clone, Debug)]
pub struct GaussianConditional {
    pub unobserved: Vec<usize>,
    pub mean: DVector<f64>,
    /// Symmetrised Schur complement; PSD, with tiny negative eigenvalues
    /// clamped to zero.
    pub cov: DMatrix<f64>,
}

impl GaussianConditional {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + psd_factor(&self.cov) * z
    }
}

pub fn gaussian_condition(
    mu: &DVector<f64>,
    s: &SpdMatrix,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<GaussianConditional> {
    let n = s.dim();
    if mu.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: mu.len() });
    }
    if observed_vals.len() != observed_idx.len() {
        return Err(Error::LengthMismatch { expected: observed_idx.len(), got: observed_vals.len() });
    }
    let mut is_obs = vec![false; n];
    for &k in observed_idx {
        if k >= n || std::mem::replace(&mut is_obs[k], true) {
            return Err(Error::InvalidIndex(format!("observed index {k} repeated or out of range")));
        }
    }
    let unobserved: Vec<usize> = (0..n).filter(|&k| !is_obs[k]).collect();
    if unobserved.is_empty() {
        return Err(Error::InvalidIndex("observed set must be a strict subset".into()));
    }
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| s.m[(rows[r], cols[c])])
    };
    let mu1 = DVector::from_fn(unobserved.len(), |k, _| mu[unobserved[k]]);
    let s11 = sub(&unobserved, &unobserved);
    if observed_idx.is_empty() {
        return Ok(GaussianConditional { unobserved, mean: mu1, cov: s11 });
    }
    let s12 = sub(&unobserved, observed_idx);
    let s22 = SpdMatrix::new(sub(observed_idx, observed_idx))
        .map_err(|_| Error::SingularObservedBlock)?;
    let resid = DVector::from_fn(observed_idx.len(), |k, _| observed_vals[k] - mu[observed_idx[k]]);
    let mean = mu1 + &s12 * s22.solve(&resid);
    let schur = s11 - &s12 * s22.solve_matrix(&s12.transpose());
    let cov = clamp_psd((&schur + schur.transpose()) * 0.5);
    Ok(GaussianConditional { unobserved, mean, cov })
}

fn clamp_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let floor = PSD_CLAMP_TOL * m.diagonal().amax();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return m;
    }
    let clamped = eig.eigenvalues.map(|l| if l < floor { l.max(0.0) } else { l });
    let u = &eig.eigenvectors;
    let out = u * DMatrix::from_diagonal(&clamped) * u.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> Result<f64> {
    let n = cov.dim();
    if x.len() != n || mean.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: x.len().min(mean.len()) });
    }
    let r = x - mean;
    Ok(-0.5 * (n as f64 * LN_2PI + cov.log_det() + cov.inv_quad_form(&r)))
}

/// Matrix-variate normal `X ~ MN(M, Sigma, Psi)` with `X` of shape `p x n`,
/// row covariance `Sigma` (`p x p`) and column covariance `Psi` (`n x n`).
#[derive(Clone, Debug)]
pub struct MatrixNormalParams {
    pub m: DMatrix<f64>,
    pub sigma: SpdMatrix,
    pub psi: SpdMatrix,
}

impl MatrixNormalParams {
    pub fn new(m: DMatrix<f64>, sigma: SpdMatrix, psi: SpdMatrix) -> Result<Self> {
        if m.nrows() != sigma.dim() {
            return Err(Error::LengthMismatch { expected: sigma.dim(), got: m.nrows() });
        }
        if m.ncols() != psi.dim() {
            return Err(Error::LengthMismatch { expected: psi.dim(), got: m.ncols() });
        }
        Ok(Self { m, sigma, psi })
    }
}

/// Equal to the density of `Vec(X')` under `N(Vec(M'), Sigma (x) Psi)`.
pub fn matrix_normal_logpdf(x: &DMatrix<f64>, params: &MatrixNormalParams) -> Result<f64> {
    if x.shape() != params.m.shape() {
        return Err(Error::LengthMismatch { expected: params.m.len(), got: x.len() });
    }
    let (p, n) = x.shape();
    let r = x - &params.m;
    let a = params.sigma.solve_matrix(&r);
    let b = params.psi.solve_matrix(&r.transpose());
    let quad = (a.component_mul(&b.transpose())).sum();
    Ok(-0.5
        * ((n * p) as f64 * LN_2PI
            + n as f64 * params.sigma.log_det()
            + p as f64 * params.psi.log_det()
            + quad))
}

/// Inverse-Wishart `IW(Lambda, k)` with `E[S] = Lambda / (k - p - 1)`.
#[derive(Clone, Debug)]
pub struct InverseWishartParams {
    pub lambda: SpdMatrix,
    pub k: f64,
}

impl InverseWishartParams {
    pub fn new(lambda: SpdMatrix, k: f64) -> Result<Self> {
        let p = lambda.dim();
        if !(k > p as f64 - 1.0) || !k.is_finite() {
            return Err(Error::InvalidDof { k, p });
        }
        Ok(Self { lambda, k })
    }

    pub fn dim(&self) -> usize {
        self.lambda.dim()
    }

    pub fn mean(&self) -> Option<DMatrix<f64>> {
        let d = self.k - self.dim() as f64 - 1.0;
        (d > 0.0).then(|| self.lambda.matrix() / d)
    }

    pub fn mode(&self) -> DMatrix<f64> {
        self.lambda.matrix() / (self.k + self.dim() as f64 + 1.0)
    }
}

/// `ln Gamma_p(a)`.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln() + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

pub fn inverse_wishart_logpdf(s: &SpdMatrix, params: &InverseWishartParams) -> Result<f64> {
    let p = params.dim();
    if s.dim() != p {
        return Err(Error::LengthMismatch { expected: p, got: s.dim() });
    }
    let k = params.k;
    let pf = p as f64;
    let tr = s.solve_matrix(params.lambda.matrix()).trace();
    Ok(0.5 * k * params.lambda.log_det()
        - 0.5 * k * pf * std::f64::consts::LN_2
        - ln_multigamma(p, 0.5 * k)
        - 0.5 * (k + pf + 1.0) * s.log_det()
        - 0.5 * tr)
}

/// Bartlett-decomposition draw.
///
/// With `C C' = Lambda` and the Bartlett factor `A` of a standard Wishart,
/// `S = C A^{-T} A^{-1} C'` is `IW(Lambda, k)`.
pub fn inverse_wishart_sample<R: Rng + ?Sized>(
    params: &InverseWishartParams,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let p = params.dim();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(params.k - i as f64).map_err(|_| Error::InvalidDof { k: params.k, p })?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let a_inv = a
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::SingularTransform)?;
    let b = params.lambda.cholesky_factor() * a_inv.transpose();
    let s = &b * b.transpose();
    SpdMatrix::new((&s + s.transpose()) * 0.5)
}
