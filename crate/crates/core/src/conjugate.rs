//! Exact conjugate Gibbs blocks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{spectral_whiten, InverseWishartParams, SpdMatrix};
use crate::model::prior::{HyperDraws, HyperPriors, InvGamma};
use crate::model::{derived_scales, gaussian_groups, DependenceSpec, DevelopmentFactors};
use crate::triangle::LogDevelopmentRatios;

/// Gaussian full conditional of `theta = (Phi_0..Phi_J, Psi_0..Psi_{J-1})`.
#[derive(Clone, Debug)]
pub struct DevFactorPosterior {
    pub mean: DVector<f64>,
    pub precision: SpdMatrix,
}

impl DevFactorPosterior {
    fn from_linear(precision: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let precision = SpdMatrix::new(precision)?;
        let mean = precision.solve(&linear);
        Ok(Self { mean, precision })
    }

    pub fn cov(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    /// `mean + L^{-T} z` with `L L' = precision`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = self
            .precision
            .cholesky_factor()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + x
    }
}

fn prior_parts(hyper: &HyperPriors, draws: &HyperDraws) -> (DMatrix<f64>, DVector<f64>) {
    let var: Vec<f64> = draws.s2.iter().chain(&draws.t2).copied().collect();
    let mean: Vec<f64> = hyper.phi_mean.iter().chain(&hyper.psi_mean).copied().collect();
    let n = var.len();
    let prec = DMatrix::from_fn(n, n, |r, c| if r == c { 1.0 / var[r] } else { 0.0 });
    let lin = DVector::from_fn(n, |k, _| mean[k] / var[k]);
    (prec, lin)
}

/// Closed-form full conditional of the development factors under Model I.
pub fn dev_factor_full_conditional(
    r: &LogDevelopmentRatios,
    theta: &DevelopmentFactors,
    hyper: &HyperPriors,
    draws: &HyperDraws,
) -> Result<DevFactorPosterior> {
    let n = r.dev_max;
    if theta.dev_max() != n || hyper.dev_max() != n {
        return Err(Error::LengthMismatch { expected: n, got: theta.dev_max() });
    }
    let sc = derived_scales(theta)?;
    let s2 = theta.sigma2();
    let t2 = theta.tau2();
    // cumulative sums of 1/v_k and r_k/v_k over the diagonal ratios
    let inv_v: Vec<f64> = (0..n).map(|k| 1.0 / sc.diag_var(k)).collect();
    let rv: Vec<f64> = (0..n).map(|k| r.diagonal_ratio(n - k) * inv_v[k]).collect();
    let cum = |xs: &[f64], upto: usize| -> f64 { xs[..upto.min(xs.len())].iter().sum() };

    let (mut prec, mut lin) = prior_parts(hyper, draws);
    let nf = 2 * n + 1;
    for a in 0..=n {
        let sum_xi: f64 = (0..=n - a).map(|i| r.xi[i][a]).sum();
        prec[(a, a)] += (n - a + 1) as f64 / s2[a];
        lin[a] += sum_xi / s2[a] + cum(&rv, a);
        for b in 0..=n {
            prec[(a, b)] += cum(&inv_v, a.min(b));
        }
    }
    for a in 0..n {
        let pa = n + 1 + a;
        let sum_zeta: f64 = (0..n - a).map(|i| r.zeta[i][a]).sum();
        prec[(pa, pa)] += (n - a) as f64 / t2[a];
        lin[pa] += -sum_zeta / t2[a] - cum(&rv, a + 1);
        for b in 0..n {
            prec[(pa, n + 1 + b)] += cum(&inv_v, a.min(b) + 1);
        }
        for m in 0..=n {
            // Phi_m and Psi_a share the diagonal ratios k < m, k <= a
            let c = -cum(&inv_v, m.min(a + 1));
            prec[(m, pa)] += c;
            prec[(pa, m)] += c;
        }
    }
    debug_assert_eq!(prec.nrows(), nf);
    DevFactorPosterior::from_linear(prec, lin)
}

/// Full conditional of the development factors for any Gaussian dependence
/// structure, by whitening each observation group and solving the resulting
/// least-squares problem.
pub fn dev_factor_full_conditional_gls(
    r: &LogDevelopmentRatios,
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
    hyper: &HyperPriors,
    draws: &HyperDraws,
) -> Result<DevFactorPosterior> {
    let (mut prec, mut lin) = prior_parts(hyper, draws);
    for g in gaussian_groups(r, theta, dep)? {
        let w = spectral_whiten(&g.k)?.transform;
        let wg = &w * &g.g;
        let wy = &w * &g.y;
        prec += wg.transpose() * &wg;
        lin += wg.transpose() * wy;
    }
    DevFactorPosterior::from_linear(prec, lin)
}

/// Whitened coordinates `W x` with `W cov W' = I`.
pub fn transform_dev_factors(x: &DVector<f64>, cov: &SpdMatrix) -> Result<DVector<f64>> {
    if x.len() != cov.dim() {
        return Err(Error::LengthMismatch { expected: cov.dim(), got: x.len() });
    }
    Ok(spectral_whiten(cov)?.transform * x)
}

/// Inverse of [`transform_dev_factors`].
pub fn untransform_dev_factors(w: &DVector<f64>, cov: &SpdMatrix) -> Result<DVector<f64>> {
    if w.len() != cov.dim() {
        return Err(Error::LengthMismatch { expected: cov.dim(), got: w.len() });
    }
    Ok(spectral_whiten(cov)?.inverse_transform * w)
}

/// Inverse-Wishart posterior after Gaussian residual vectors with known mean:
/// `IW(Lambda + sum r r', k + n)`.
pub fn covariance_full_conditional(
    prior: &InverseWishartParams,
    residuals: &[DVector<f64>],
) -> Result<InverseWishartParams> {
    let p = prior.dim();
    let mut lambda = prior.lambda.matrix().clone();
    for r in residuals {
        if r.len() != p {
            return Err(Error::LengthMismatch { expected: p, got: r.len() });
        }
        lambda += r * r.transpose();
    }
    InverseWishartParams::new(SpdMatrix::new(lambda)?, prior.k + residuals.len() as f64)
}

/// Model III block posteriors from the current factors: one residual vector
/// per block (observed payment ratios of year `i` minus `Phi`, observed
/// incurred ratios plus `Psi`).
pub fn telescoping_residuals(
    r: &LogDevelopmentRatios,
    theta: &DevelopmentFactors,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = r.dev_max;
    let pay = (0..=n)
        .map(|i| DVector::from_fn(n + 1 - i, |j, _| r.xi[i][j] - theta.phi[j]))
        .collect();
    let inc = (0..n)
        .map(|i| DVector::from_fn(n - i, |j, _| r.zeta[i][j] + theta.psi[j]))
        .collect();
    (pay, inc)
}

/// `IG(a + n/2, b + sum resid^2 / 2)`.
pub fn hyper_variance_full_conditional(prior: &InvGamma, resid: &[f64]) -> InvGamma {
    prior.update(resid.len(), resid.iter().map(|x| x * x).sum())
}
