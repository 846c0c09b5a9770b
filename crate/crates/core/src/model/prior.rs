//! Priors: Gaussian on development factors, inverse-gamma on variances,
//! inverse-Wishart on covariance blocks and bounded priors on copula
//! parameters.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{normal_logpdf, DependenceSpec, DevelopmentFactors};
use crate::copula::Family;
use crate::error::{Error, Result};
use crate::linalg::{inverse_wishart_logpdf, InverseWishartParams};

/// `IG(shape, scale)` with density proportional to `x^{-shape-1} exp(-scale / x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::ParamOutOfDomain(format!("IG({shape}, {scale})")));
        }
        Ok(Self { shape, scale })
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("validated parameters");
        1.0 / g.sample(rng)
    }

    /// Posterior after `n` Gaussian residuals with sum of squares `ss`.
    pub fn update(&self, n: usize, ss: f64) -> Self {
        Self { shape: self.shape + n as f64 / 2.0, scale: self.scale + ss / 2.0 }
    }
}

/// Prior on each copula parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CopulaPrior {
    /// Uniform on the family domain truncated at `upper` (Clayton `[0, upper]`,
    /// Gumbel `[1, upper]`, Frank `(0, upper]`).
    Uniform { upper: f64 },
    /// Gaussian truncated to the same domain; the truncation constant is
    /// dropped since it does not depend on the parameter.
    Gaussian { mean: f64, sd: f64, upper: f64 },
}

impl Default for CopulaPrior {
    fn default() -> Self {
        CopulaPrior::Uniform { upper: 50.0 }
    }
}

impl CopulaPrior {
    fn upper(&self) -> f64 {
        match *self {
            CopulaPrior::Uniform { upper } | CopulaPrior::Gaussian { upper, .. } => upper,
        }
    }

    pub fn in_support(&self, family: Family, rho: f64) -> bool {
        let up = self.upper();
        match family {
            Family::Clayton => (0.0..=up).contains(&rho),
            Family::Gumbel => (1.0..=up).contains(&rho),
            Family::Frank => rho > 0.0 && rho <= up,
        }
    }

    pub fn logpdf(&self, family: Family, rho: f64) -> f64 {
        if !self.in_support(family, rho) {
            return f64::NEG_INFINITY;
        }
        match *self {
            CopulaPrior::Uniform { upper } => {
                let lower = if family == Family::Gumbel { 1.0 } else { 0.0 };
                -(upper - lower).ln()
            }
            CopulaPrior::Gaussian { mean, sd, .. } => normal_logpdf(rho, mean, sd * sd),
        }
    }
}

/// Inverse-Wishart priors on the dependence covariances.
#[derive(Clone, Debug)]
pub enum CovariancePrior {
    /// Model II: one prior shared by `Sigma` (or each per-year `Sigma_i`).
    Shared(InverseWishartParams),
    /// Model III: one prior per telescoping block.
    Blocks { payment: Vec<InverseWishartParams>, incurred: Vec<InverseWishartParams> },
}

/// Prior hyperparameters. Optional parts are active only when the
/// corresponding quantity is sampled.
#[derive(Clone, Debug)]
pub struct HyperPriors {
    pub phi_mean: Vec<f64>,
    pub psi_mean: Vec<f64>,
    /// Initial (or fixed) prior variances of `Phi` and `Psi`.
    pub s2: Vec<f64>,
    pub t2: Vec<f64>,
    pub s2_prior: Option<Vec<InvGamma>>,
    pub t2_prior: Option<Vec<InvGamma>>,
    pub sigma2_prior: Option<Vec<InvGamma>>,
    pub tau2_prior: Option<Vec<InvGamma>>,
    pub cov_prior: Option<CovariancePrior>,
    pub sigma_diag_prior: Option<Vec<InvGamma>>,
    pub copula_prior: CopulaPrior,
}

impl HyperPriors {
    /// Vague defaults: zero means, variances `s2`, `t2`, nothing sampled.
    pub fn vague(dev_max: usize, s2: f64, t2: f64) -> Self {
        Self {
            phi_mean: vec![0.0; dev_max + 1],
            psi_mean: vec![0.0; dev_max],
            s2: vec![s2; dev_max + 1],
            t2: vec![t2; dev_max],
            s2_prior: None,
            t2_prior: None,
            sigma2_prior: None,
            tau2_prior: None,
            cov_prior: None,
            sigma_diag_prior: None,
            copula_prior: CopulaPrior::default(),
        }
    }

    pub fn dev_max(&self) -> usize {
        self.phi_mean.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n1 = self.phi_mean.len();
        if n1 == 0 {
            return Err(Error::EmptyList);
        }
        let n = n1 - 1;
        let lens = [
            (self.psi_mean.len(), n),
            (self.s2.len(), n1),
            (self.t2.len(), n),
            (self.s2_prior.as_ref().map_or(n1, Vec::len), n1),
            (self.t2_prior.as_ref().map_or(n, Vec::len), n),
            (self.sigma2_prior.as_ref().map_or(n1, Vec::len), n1),
            (self.tau2_prior.as_ref().map_or(n, Vec::len), n),
            (self.sigma_diag_prior.as_ref().map_or(2 * n + 1, Vec::len), 2 * n + 1),
        ];
        for (got, expected) in lens {
            if got != expected {
                return Err(Error::LengthMismatch { expected, got });
            }
        }
        if self.s2.iter().chain(&self.t2).any(|v| !(*v > 0.0)) {
            return Err(Error::ParamOutOfDomain("prior variances must be positive".into()));
        }
        Ok(())
    }
}

/// Current values of the sampled hyper variances.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperDraws {
    pub s2: Vec<f64>,
    pub t2: Vec<f64>,
}

impl HyperDraws {
    pub fn from_priors(h: &HyperPriors) -> Self {
        Self { s2: h.s2.clone(), t2: h.t2.clone() }
    }
}

/// Joint log prior of the current state. Terms for quantities that are not
/// sampled are omitted.
pub fn log_prior(
    theta: &DevelopmentFactors,
    draws: &HyperDraws,
    hyper: &HyperPriors,
    dep: &DependenceSpec,
) -> Result<f64> {
    let mut lp = 0.0;
    for j in 0..theta.phi.len() {
        lp += normal_logpdf(theta.phi[j], hyper.phi_mean[j], draws.s2[j]);
    }
    for j in 0..theta.psi.len() {
        lp += normal_logpdf(theta.psi[j], hyper.psi_mean[j], draws.t2[j]);
    }
    let ig_sum = |pri: &Option<Vec<InvGamma>>, xs: &[f64]| -> f64 {
        pri.as_ref().map_or(0.0, |p| p.iter().zip(xs).map(|(g, x)| g.logpdf(*x)).sum())
    };
    lp += ig_sum(&hyper.s2_prior, &draws.s2);
    lp += ig_sum(&hyper.t2_prior, &draws.t2);
    lp += ig_sum(&hyper.sigma2_prior, &theta.sigma2());
    lp += ig_sum(&hyper.tau2_prior, &theta.tau2());
    match (dep, &hyper.cov_prior) {
        (DependenceSpec::ModelII { sigma, per_year, .. }, Some(CovariancePrior::Shared(iw))) => {
            match per_year {
                Some(py) => {
                    for s in py {
                        lp += inverse_wishart_logpdf(s, iw)?;
                    }
                }
                None => lp += inverse_wishart_logpdf(sigma, iw)?,
            }
        }
        (DependenceSpec::ModelIII { tele }, Some(CovariancePrior::Blocks { payment, incurred })) => {
            for (s, iw) in tele.payment_blocks.iter().zip(payment) {
                lp += inverse_wishart_logpdf(s, iw)?;
            }
            for (s, iw) in tele.incurred_blocks.iter().zip(incurred) {
                lp += inverse_wishart_logpdf(s, iw)?;
            }
        }
        (_, None) => {}
        _ => return Err(Error::config("priors.covariance", "prior does not match the model")),
    }
    if let DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } = dep {
        lp += ig_sum(&hyper.sigma_diag_prior, sigma_diag);
        for (_, p) in mix_p.components().iter().chain(mix_i.components()) {
            lp += hyper.copula_prior.logpdf(p.family, p.rho);
        }
    }
    Ok(lp)
}
