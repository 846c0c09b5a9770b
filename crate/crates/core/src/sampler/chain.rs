//! Chain state and the per-model Gibbs sweep.
//!
//! Stage 1 draws the development factors exactly (Models I to III) or by
//! adaptive Metropolis (Model IV), then the prior variances `s^2`, `t^2`.
//! Stage 2 updates the augmented cells (Model IV). Stage 3 updates the
//! dependence parameters: covariance blocks (Models II, III), copula
//! parameters and marginal variances (Model IV).

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::proposal::{AdaptiveBlock, AmConfig, ManifoldBlock};
use crate::conjugate::{
    covariance_full_conditional, dev_factor_full_conditional, dev_factor_full_conditional_gls,
    hyper_variance_full_conditional, telescoping_residuals,
};
use crate::copula::MixtureCopula;
use crate::error::{Error, Result};
use crate::linalg::{inverse_wishart_logpdf, inverse_wishart_sample, InverseWishartParams, SpdMatrix};
use crate::model::augmented::{row_means, year_loglik, year_row_with};
use crate::model::prior::{log_prior, CovariancePrior, HyperDraws, HyperPriors};
use crate::model::{
    derived_scales, log_level_jacobian, loglik_gaussian, loglik_independent, loglik_mixture_copula_full,
    normal_logpdf, AugmentedState, DependenceSpec, DevelopmentFactors,
};
use crate::triangle::{log_ratios, partition_observed_aux, ClaimsTriangle, LogDevelopmentRatios, LogLevels};

/// Covariance update for Model III blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovUpdate {
    /// Inverse-Wishart mixture Metropolis-Hastings on the SPD manifold.
    #[default]
    Manifold,
    /// Exact inverse-Wishart draw from the block residuals.
    Conjugate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    #[serde(flatten)]
    pub am: AmConfig,
    /// Sweeps after which adaptation freezes.
    pub burnin: usize,
    pub continue_adapting: bool,
    pub cov_update: CovUpdate,
    /// Update Model IV copula parameters (ignored for independence sides).
    pub sample_copula: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            am: AmConfig::default(),
            burnin: 0,
            continue_adapting: false,
            cov_update: CovUpdate::Manifold,
            sample_copula: true,
        }
    }
}

/// Current values of every sampled quantity.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: DevelopmentFactors,
    pub hyper: HyperDraws,
    pub dep: DependenceSpec,
    pub aux: Option<AugmentedState>,
    pub log_posterior: f64,
}

/// Immutable data shared by all chains.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub tri: ClaimsTriangle,
    pub ratios: LogDevelopmentRatios,
    pub levels: LogLevels,
    pub priors: HyperPriors,
    jacobian: f64,
}

impl ModelContext {
    pub fn new(tri: ClaimsTriangle, priors: HyperPriors) -> Result<Self> {
        priors.validate()?;
        if priors.dev_max() != tri.dev_max() {
            return Err(Error::LengthMismatch { expected: tri.dev_max(), got: priors.dev_max() });
        }
        Ok(Self {
            ratios: log_ratios(&tri),
            levels: tri.log_levels(),
            jacobian: log_level_jacobian(&tri),
            tri,
            priors,
        })
    }

    pub fn dev_max(&self) -> usize {
        self.tri.dev_max()
    }

    /// Data log likelihood of a state (log-level scale for Model IV, level
    /// scale otherwise).
    pub fn loglik(&self, s: &ChainState) -> Result<f64> {
        match &s.dep {
            DependenceSpec::ModelI => loglik_independent(&self.tri, &s.theta),
            DependenceSpec::ModelIV { .. } => {
                let aux = s.aux.as_ref().ok_or_else(|| Error::config("state.aux", "Model IV needs augmented cells"))?;
                loglik_mixture_copula_full(&aux.full_rows(&self.levels), &s.theta, &s.dep)
            }
            dep => Ok(loglik_gaussian(&self.ratios, &s.theta, dep)? - self.jacobian),
        }
    }

    pub fn log_posterior(&self, s: &ChainState) -> Result<f64> {
        Ok(self.loglik(s)? + log_prior(&s.theta, &s.hyper, &self.priors, &s.dep)?)
    }

    /// Starting state with augmented cells at their marginal means.
    pub fn initial_state(&self, theta: DevelopmentFactors, dep: DependenceSpec) -> Result<ChainState> {
        dep.validate(self.dev_max())?;
        let aux = match dep {
            DependenceSpec::ModelIV { .. } => Some(AugmentedState::at_means(partition_observed_aux(self.dev_max())?, &theta)?),
            _ => None,
        };
        let mut s = ChainState { theta, hyper: HyperDraws::from_priors(&self.priors), dep, aux, log_posterior: 0.0 };
        s.log_posterior = self.log_posterior(&s)?;
        if !s.log_posterior.is_finite() {
            return Err(Error::ParamOutOfDomain("initial state has non-finite log posterior".into()));
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Flags {
    s2: bool,
    t2: bool,
    scales: bool,
    cov: bool,
    sigma_diag: bool,
    rho_p: bool,
    rho_i: bool,
}

#[derive(Clone, Debug)]
struct Adaptive {
    theta: AdaptiveBlock,
    scales: AdaptiveBlock,
    aux: Vec<AdaptiveBlock>,
    rho: AdaptiveBlock,
    sigma_diag: AdaptiveBlock,
    cov: Vec<ManifoldBlock>,
}

/// Chain-local sampler: configuration, adaptive state and sweep counter.
#[derive(Clone, Debug)]
pub struct Sampler<'a> {
    pub ctx: &'a ModelContext,
    pub cfg: SamplerConfig,
    flags: Flags,
    adaptive: Adaptive,
    sweep: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(ctx: &'a ModelContext, cfg: SamplerConfig, init: &ChainState) -> Result<Self> {
        cfg.am.validate()?;
        let n = ctx.dev_max();
        let pr = &ctx.priors;
        init.dep.validate(n)?;
        let model = init.dep.model_name();
        let mut flags = Flags {
            s2: pr.s2_prior.is_some(),
            t2: pr.t2_prior.is_some(),
            scales: pr.sigma2_prior.is_some(),
            cov: pr.cov_prior.is_some(),
            sigma_diag: pr.sigma_diag_prior.is_some(),
            ..Flags::default()
        };
        if pr.sigma2_prior.is_some() != pr.tau2_prior.is_some() {
            return Err(Error::config("priors.tau2", "sigma2 and tau2 priors must be given together"));
        }
        if flags.scales && !matches!(model, "I" | "III") {
            return Err(Error::config("priors.sigma2", "observation scales are sampled only in Models I and III"));
        }
        if flags.sigma_diag && model != "IV" {
            return Err(Error::config("priors.sigma_diag", "marginal variances exist only in Model IV"));
        }
        let mut cov = Vec::new();
        match (&init.dep, &pr.cov_prior) {
            (_, None) => {}
            (DependenceSpec::ModelII { sigma, per_year, .. }, Some(CovariancePrior::Shared(iw))) => {
                if cfg.cov_update == CovUpdate::Conjugate {
                    return Err(Error::config(
                        "sampler.cov_update",
                        "Model II covariance has no conjugate update; use manifold",
                    ));
                }
                check_iw_dim(iw, sigma.dim())?;
                match per_year {
                    Some(py) => {
                        for s in py {
                            cov.push(ManifoldBlock::new(s, &cfg.am)?);
                        }
                    }
                    None => cov.push(ManifoldBlock::new(sigma, &cfg.am)?),
                }
            }
            (DependenceSpec::ModelIII { tele }, Some(CovariancePrior::Blocks { payment, incurred })) => {
                if payment.len() != tele.payment_blocks.len() || incurred.len() != tele.incurred_blocks.len() {
                    return Err(Error::config("priors.covariance", "one prior per telescoping block"));
                }
                for (s, iw) in tele.blocks().zip(payment.iter().chain(incurred)) {
                    check_iw_dim(iw, s.dim())?;
                    if cfg.cov_update == CovUpdate::Manifold {
                        cov.push(ManifoldBlock::new(s, &cfg.am)?);
                    }
                }
            }
            _ => return Err(Error::config("priors.covariance", "covariance prior does not match the model")),
        }
        let mut n_rho = 0;
        let mut aux = Vec::new();
        if let DependenceSpec::ModelIV { mix_p, mix_i, .. } = &init.dep {
            flags.rho_p = cfg.sample_copula && !mix_p.is_independence();
            flags.rho_i = cfg.sample_copula && !mix_i.is_independence();
            n_rho = usize::from(flags.rho_p) * mix_p.components().len()
                + usize::from(flags.rho_i) * mix_i.components().len();
            let st = init.aux.as_ref().ok_or_else(|| Error::config("state.aux", "Model IV needs augmented cells"))?;
            aux = (0..=n).map(|i| AdaptiveBlock::new(st.part.year_len(i))).collect();
        }
        let nf = 2 * n + 1;
        Ok(Self {
            ctx,
            cfg,
            flags,
            adaptive: Adaptive {
                theta: AdaptiveBlock::new(nf),
                scales: AdaptiveBlock::new(nf),
                aux,
                rho: AdaptiveBlock::new(n_rho),
                sigma_diag: AdaptiveBlock::new(nf),
                cov,
            },
            sweep: 0,
        })
    }

    fn adapting(&self) -> bool {
        self.sweep < self.cfg.burnin || self.cfg.continue_adapting
    }

    /// Names of the traced scalars, in the order of [`Sampler::trace_values`].
    pub fn trace_names(&self, s: &ChainState) -> Vec<String> {
        let n = self.ctx.dev_max();
        let mut v: Vec<String> = (0..=n).map(|j| format!("phi_{j}")).collect();
        v.extend((0..n).map(|j| format!("psi_{j}")));
        if self.flags.s2 {
            v.extend((0..=n).map(|j| format!("s2_{j}")));
        }
        if self.flags.t2 {
            v.extend((0..n).map(|j| format!("t2_{j}")));
        }
        if self.flags.scales {
            v.extend((0..=n).map(|j| format!("sigma_{j}")));
            v.extend((0..n).map(|j| format!("tau_{j}")));
        }
        if self.flags.cov {
            for (label, m) in cov_blocks(&s.dep) {
                let d = m.dim();
                for r in 0..d {
                    for c in r..d {
                        v.push(format!("{label}_{r}_{c}"));
                    }
                }
            }
        }
        if let DependenceSpec::ModelIV { mix_p, mix_i, .. } = &s.dep {
            if self.flags.rho_p {
                v.extend((0..mix_p.components().len()).map(|k| format!("rho_p{k}")));
            }
            if self.flags.rho_i {
                v.extend((0..mix_i.components().len()).map(|k| format!("rho_i{k}")));
            }
            if self.flags.sigma_diag {
                v.extend((0..=n).map(|j| format!("sd2_p{j}")));
                v.extend((0..n).map(|j| format!("sd2_i{j}")));
            }
            if let Some(a) = &s.aux {
                v.extend(a.part.aux_cells().iter().map(|c| format!("aux_{}_{}_{}", c.accident, c.development, c.source)));
            }
        }
        v
    }

    pub fn trace_values(&self, s: &ChainState) -> Vec<f64> {
        let mut v: Vec<f64> = s.theta.phi.iter().chain(&s.theta.psi).copied().collect();
        if self.flags.s2 {
            v.extend(&s.hyper.s2);
        }
        if self.flags.t2 {
            v.extend(&s.hyper.t2);
        }
        if self.flags.scales {
            v.extend(&s.theta.sigma);
            v.extend(&s.theta.tau);
        }
        if self.flags.cov {
            for (_, m) in cov_blocks(&s.dep) {
                let d = m.dim();
                for r in 0..d {
                    for c in r..d {
                        v.push(m.matrix()[(r, c)]);
                    }
                }
            }
        }
        if let DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } = &s.dep {
            if self.flags.rho_p {
                v.extend(mix_p.rhos());
            }
            if self.flags.rho_i {
                v.extend(mix_i.rhos());
            }
            if self.flags.sigma_diag {
                v.extend(sigma_diag);
            }
            if let Some(a) = &s.aux {
                v.extend(a.aux.iter());
            }
        }
        v
    }

    /// Acceptance rates of the Metropolis blocks that have been used.
    pub fn acceptance_rates(&self) -> Vec<(String, f64)> {
        let a = &self.adaptive;
        let mut out = Vec::new();
        let mut push = |name: String, blk_prop: u64, rate: f64| {
            if blk_prop > 0 {
                out.push((name, rate));
            }
        };
        push("theta".into(), a.theta.proposed, a.theta.acceptance_rate());
        push("scales".into(), a.scales.proposed, a.scales.acceptance_rate());
        push("rho".into(), a.rho.proposed, a.rho.acceptance_rate());
        push("sigma_diag".into(), a.sigma_diag.proposed, a.sigma_diag.acceptance_rate());
        for (i, b) in a.aux.iter().enumerate() {
            push(format!("aux_{i}"), b.proposed, b.acceptance_rate());
        }
        for (k, b) in a.cov.iter().enumerate() {
            push(format!("cov_{k}"), b.proposed, b.acceptance_rate());
        }
        out
    }

    /// One full sweep; on return `s.log_posterior` is current and finite.
    pub fn sweep<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        if matches!(s.dep, DependenceSpec::ModelIV { .. }) {
            self.sweep_model_iv(s, rng)?;
        } else {
            self.sweep_gaussian(s, rng)?;
        }
        self.sweep += 1;
        s.log_posterior = self.ctx.log_posterior(s)?;
        if !s.log_posterior.is_finite() {
            return Err(Error::ParamOutOfDomain("sweep produced a non-finite log posterior".into()));
        }
        Ok(())
    }

    fn hyper_variances<R: Rng + ?Sized>(&self, s: &mut ChainState, rng: &mut R) {
        let pr = &self.ctx.priors;
        if let Some(p) = &pr.s2_prior {
            for j in 0..s.hyper.s2.len() {
                let post = hyper_variance_full_conditional(&p[j], &[s.theta.phi[j] - pr.phi_mean[j]]);
                s.hyper.s2[j] = post.sample(rng);
            }
        }
        if let Some(p) = &pr.t2_prior {
            for j in 0..s.hyper.t2.len() {
                let post = hyper_variance_full_conditional(&p[j], &[s.theta.psi[j] - pr.psi_mean[j]]);
                s.hyper.t2[j] = post.sample(rng);
            }
        }
    }

    fn sweep_gaussian<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let pr = &ctx.priors;
        // Stage 1
        let post = match s.dep {
            DependenceSpec::ModelI => dev_factor_full_conditional(&ctx.ratios, &s.theta, pr, &s.hyper)?,
            _ => dev_factor_full_conditional_gls(&ctx.ratios, &s.theta, &s.dep, pr, &s.hyper)?,
        };
        let draw = post.sample(rng);
        s.theta.set_theta(&draw);
        self.hyper_variances(s, rng);
        if self.flags.scales {
            self.scale_update(s, rng)?;
        }
        // Stage 3
        if self.flags.cov {
            self.covariance_update(s, rng)?;
        }
        Ok(())
    }

    /// Log-scale adaptive Metropolis on `(sigma^2, tau^2)`.
    fn scale_update<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let pr = &ctx.priors;
        let (sp, tp) = (pr.sigma2_prior.as_ref().expect("flag"), pr.tau2_prior.as_ref().expect("flag"));
        let n1 = s.theta.sigma.len();
        let dep = s.dep.clone();
        let base = s.theta.clone();
        let target = |u: &DVector<f64>| -> Result<f64> {
            let var: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            let mut th = base.clone();
            th.sigma = var[..n1].iter().map(|v| v.sqrt()).collect();
            th.tau = var[n1..].iter().map(|v| v.sqrt()).collect();
            if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) || derived_scales(&th).is_err() {
                return Ok(f64::NEG_INFINITY);
            }
            let ll = match dep {
                DependenceSpec::ModelI => loglik_independent(&ctx.tri, &th)?,
                _ => loglik_gaussian(&ctx.ratios, &th, &dep)?,
            };
            let prior: f64 = sp.iter().chain(tp).zip(&var).map(|(g, v)| g.logpdf(*v)).sum();
            Ok(ll + prior + u.sum())
        };
        let mut u = DVector::from_iterator(
            2 * n1 - 1,
            s.theta.sigma.iter().chain(&s.theta.tau).map(|x| (x * x).ln()),
        );
        let mut lp = target(&u)?;
        let adapt = self.adapting();
        self.adaptive.scales.step(&mut u, &mut lp, &self.cfg.am, adapt, rng, target)?;
        s.theta.sigma = u.as_slice()[..n1].iter().map(|x| (x / 2.0).exp()).collect();
        s.theta.tau = u.as_slice()[n1..].iter().map(|x| (x / 2.0).exp()).collect();
        Ok(())
    }

    fn covariance_update<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let adapt = self.adapting();
        let am = self.cfg.am.clone();
        match (&mut s.dep, &ctx.priors.cov_prior) {
            (DependenceSpec::ModelII { sigma, omega, per_year }, Some(CovariancePrior::Shared(iw))) => {
                let theta = &s.theta;
                match per_year {
                    Some(py) => {
                        for i in 0..py.len() {
                            let mut cur = py[i].clone();
                            let eval = |m: &SpdMatrix, py: &[SpdMatrix]| -> Result<f64> {
                                let mut blocks = py.to_vec();
                                blocks[i] = m.clone();
                                let dep = DependenceSpec::ModelII { sigma: sigma.clone(), omega: None, per_year: Some(blocks) };
                                Ok(loglik_gaussian(&ctx.ratios, theta, &dep)? + inverse_wishart_logpdf(m, iw)?)
                            };
                            let snapshot = py.clone();
                            let mut lp = eval(&cur, &snapshot)?;
                            self.adaptive.cov[i].step(&mut cur, &mut lp, &am, adapt, rng, |m| eval(m, &snapshot))?;
                            py[i] = cur;
                        }
                    }
                    None => {
                        let om = omega.clone();
                        let eval = |m: &SpdMatrix| -> Result<f64> {
                            let dep = DependenceSpec::ModelII { sigma: m.clone(), omega: om.clone(), per_year: None };
                            Ok(loglik_gaussian(&ctx.ratios, theta, &dep)? + inverse_wishart_logpdf(m, iw)?)
                        };
                        let mut cur = sigma.clone();
                        let mut lp = eval(&cur)?;
                        self.adaptive.cov[0].step(&mut cur, &mut lp, &am, adapt, rng, eval)?;
                        *sigma = cur;
                    }
                }
            }
            (DependenceSpec::ModelIII { tele }, Some(CovariancePrior::Blocks { payment, incurred })) => {
                let priors: Vec<&InverseWishartParams> = payment.iter().chain(incurred).collect();
                let np = tele.payment_blocks.len();
                match self.cfg.cov_update {
                    CovUpdate::Conjugate => {
                        let (rp, ri) = telescoping_residuals(&ctx.ratios, &s.theta);
                        for (k, r) in rp.into_iter().chain(ri).enumerate() {
                            let post = covariance_full_conditional(priors[k], &[r])?;
                            let draw = inverse_wishart_sample(&post, rng)?;
                            if k < np {
                                tele.payment_blocks[k] = draw;
                            } else {
                                tele.incurred_blocks[k - np] = draw;
                            }
                        }
                    }
                    CovUpdate::Manifold => {
                        for k in 0..priors.len() {
                            let base = tele.clone();
                            let theta = &s.theta;
                            let eval = |m: &SpdMatrix| -> Result<f64> {
                                let mut t = base.clone();
                                if k < np {
                                    t.payment_blocks[k] = m.clone();
                                } else {
                                    t.incurred_blocks[k - np] = m.clone();
                                }
                                let dep = DependenceSpec::ModelIII { tele: t };
                                Ok(loglik_gaussian(&ctx.ratios, theta, &dep)? + inverse_wishart_logpdf(m, priors[k])?)
                            };
                            let mut cur = if k < np { base.payment_blocks[k].clone() } else { base.incurred_blocks[k - np].clone() };
                            let mut lp = eval(&cur)?;
                            self.adaptive.cov[k].step(&mut cur, &mut lp, &am, adapt, rng, eval)?;
                            if k < np {
                                tele.payment_blocks[k] = cur;
                            } else {
                                tele.incurred_blocks[k - np] = cur;
                            }
                        }
                    }
                }
            }
            _ => unreachable!("validated in Sampler::new"),
        }
        Ok(())
    }

    fn sweep_model_iv<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let pr = &ctx.priors;
        let adapt = self.adapting();
        let am = self.cfg.am.clone();
        // Stage 1: development factors
        {
            let rows = s.aux.as_ref().expect("validated").full_rows(&ctx.levels);
            let dep = &s.dep;
            let base = s.theta.clone();
            let hyper = &s.hyper;
            let target = |x: &DVector<f64>| -> Result<f64> {
                let mut th = base.clone();
                th.set_theta(x);
                Ok(loglik_mixture_copula_full(&rows, &th, dep)? + theta_gaussian_prior(&th, pr, hyper))
            };
            let mut x = s.theta.theta_vector();
            let mut lp = target(&x)?;
            self.adaptive.theta.step(&mut x, &mut lp, &am, adapt, rng, target)?;
            s.theta.set_theta(&x);
        }
        self.hyper_variances(s, rng);
        // Stage 2: augmented cells
        self.augmented_data_update(s, rng)?;
        // Stage 3: copula parameters and marginal variances
        if self.flags.rho_p || self.flags.rho_i {
            self.copula_update(s, rng)?;
        }
        if self.flags.sigma_diag {
            self.sigma_diag_update(s, rng)?;
        }
        Ok(())
    }

    /// Adaptive Metropolis over the augmented block of each accident year,
    /// targeting that year's full-data density.
    pub fn augmented_data_update<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let adapt = self.adapting();
        let am = self.cfg.am.clone();
        let (mix_p, mix_i, sd) = match &s.dep {
            DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } => (mix_p, mix_i, sigma_diag.as_slice()),
            _ => return Err(Error::config("dependence", "augmented-data update needs Model IV")),
        };
        let means = row_means(&derived_scales(&s.theta)?);
        let aux = s.aux.as_mut().ok_or_else(|| Error::config("state.aux", "Model IV needs augmented cells"))?;
        for i in 1..=ctx.dev_max() {
            let range = aux.part.year_block(i);
            let part = &aux.part;
            let target = |x: &DVector<f64>| -> Result<f64> {
                let row = year_row_with(part, &ctx.levels, i, x.as_slice());
                year_loglik(&row, &means, mix_p, mix_i, sd)
            };
            let mut x = DVector::from_column_slice(&aux.aux.as_slice()[range.clone()]);
            let mut lp = target(&x)?;
            self.adaptive.aux[i].step(&mut x, &mut lp, &am, adapt, rng, target)?;
            aux.aux.rows_mut(range.start, range.len()).copy_from(&x);
        }
        Ok(())
    }

    fn copula_update<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let adapt = self.adapting();
        let am = self.cfg.am.clone();
        let (fp, fi) = (self.flags.rho_p, self.flags.rho_i);
        let (mix_p, mix_i, sd) = match &s.dep {
            DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } => (mix_p.clone(), mix_i.clone(), sigma_diag.clone()),
            _ => unreachable!("Model IV sweep"),
        };
        let np = if fp { mix_p.components().len() } else { 0 };
        let rows = s.aux.as_ref().expect("validated").full_rows(&ctx.levels);
        let theta = &s.theta;
        let cp = ctx.priors.copula_prior;
        let build = |x: &DVector<f64>| -> Result<Option<(MixtureCopula, MixtureCopula)>> {
            let mut lp_ok = true;
            for (k, (_, p)) in mix_p.components().iter().enumerate().filter(|_| fp) {
                lp_ok &= cp.in_support(p.family, x[k]);
            }
            for (k, (_, p)) in mix_i.components().iter().enumerate().filter(|_| fi) {
                lp_ok &= cp.in_support(p.family, x[np + k]);
            }
            if !lp_ok {
                return Ok(None);
            }
            let a = if fp { mix_p.with_rhos(&x.as_slice()[..np])? } else { mix_p.clone() };
            let b = if fi { mix_i.with_rhos(&x.as_slice()[np..])? } else { mix_i.clone() };
            Ok(Some((a, b)))
        };
        let target = |x: &DVector<f64>| -> Result<f64> {
            let Some((a, b)) = build(x)? else { return Ok(f64::NEG_INFINITY) };
            let prior: f64 = a
                .components()
                .iter()
                .filter(|_| fp)
                .chain(b.components().iter().filter(|_| fi))
                .map(|(_, p)| cp.logpdf(p.family, p.rho))
                .sum();
            let dep = DependenceSpec::ModelIV { mix_p: a, mix_i: b, sigma_diag: sd.clone() };
            Ok(loglik_mixture_copula_full(&rows, theta, &dep)? + prior)
        };
        let mut rhos = Vec::new();
        if fp {
            rhos.extend(mix_p.rhos());
        }
        if fi {
            rhos.extend(mix_i.rhos());
        }
        let mut x = DVector::from_vec(rhos);
        let mut lp = target(&x)?;
        self.adaptive.rho.step(&mut x, &mut lp, &am, adapt, rng, &target)?;
        let (a, b) = build(&x)?.expect("accepted state lies in the support");
        s.dep = DependenceSpec::ModelIV { mix_p: a, mix_i: b, sigma_diag: sd };
        Ok(())
    }

    fn sigma_diag_update<R: Rng + ?Sized>(&mut self, s: &mut ChainState, rng: &mut R) -> Result<()> {
        let ctx = self.ctx;
        let adapt = self.adapting();
        let am = self.cfg.am.clone();
        let igs = ctx.priors.sigma_diag_prior.as_ref().expect("flag");
        let rows = s.aux.as_ref().expect("validated").full_rows(&ctx.levels);
        let means = row_means(&derived_scales(&s.theta)?);
        let DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } = &mut s.dep else {
            unreachable!("Model IV sweep")
        };
        if mix_p.is_independence() && mix_i.is_independence() {
            for (c, v) in sigma_diag.iter_mut().enumerate() {
                let resid: Vec<f64> = rows.iter().map(|r| r[c] - means[c]).collect();
                *v = hyper_variance_full_conditional(&igs[c], &resid).sample(rng);
            }
            return Ok(());
        }
        let theta = &s.theta;
        let (mp, mi) = (mix_p.clone(), mix_i.clone());
        let target = |u: &DVector<f64>| -> Result<f64> {
            let var: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Ok(f64::NEG_INFINITY);
            }
            let prior: f64 = igs.iter().zip(&var).map(|(g, v)| g.logpdf(*v)).sum();
            let dep = DependenceSpec::ModelIV { mix_p: mp.clone(), mix_i: mi.clone(), sigma_diag: var };
            Ok(loglik_mixture_copula_full(&rows, theta, &dep)? + prior + u.sum())
        };
        let mut u = DVector::from_iterator(sigma_diag.len(), sigma_diag.iter().map(|v| v.ln()));
        let mut lp = target(&u)?;
        self.adaptive.sigma_diag.step(&mut u, &mut lp, &am, adapt, rng, target)?;
        for (v, x) in sigma_diag.iter_mut().zip(u.iter()) {
            *v = x.exp();
        }
        Ok(())
    }
}

fn check_iw_dim(iw: &InverseWishartParams, dim: usize) -> Result<()> {
    if iw.dim() != dim {
        return Err(Error::LengthMismatch { expected: dim, got: iw.dim() });
    }
    Ok(())
}

fn theta_gaussian_prior(th: &DevelopmentFactors, pr: &HyperPriors, d: &HyperDraws) -> f64 {
    let a: f64 = (0..th.phi.len()).map(|j| normal_logpdf(th.phi[j], pr.phi_mean[j], d.s2[j])).sum();
    let b: f64 = (0..th.psi.len()).map(|j| normal_logpdf(th.psi[j], pr.psi_mean[j], d.t2[j])).sum();
    a + b
}

/// Covariance blocks of a state with their trace labels.
pub fn cov_blocks(dep: &DependenceSpec) -> Vec<(String, &SpdMatrix)> {
    match dep {
        DependenceSpec::ModelII { sigma, per_year: None, .. } => vec![("cov".into(), sigma)],
        DependenceSpec::ModelII { per_year: Some(py), .. } => {
            py.iter().enumerate().map(|(i, m)| (format!("cov{i}"), m)).collect()
        }
        DependenceSpec::ModelIII { tele } => tele
            .payment_blocks
            .iter()
            .enumerate()
            .map(|(i, m)| (format!("covp{i}"), m))
            .chain(tele.incurred_blocks.iter().enumerate().map(|(i, m)| (format!("covi{i}"), m)))
            .collect(),
        _ => Vec::new(),
    }
}

/// `gibbs_sweep` as a free function.
pub fn gibbs_sweep<R: Rng + ?Sized>(sampler: &mut Sampler<'_>, state: &mut ChainState, rng: &mut R) -> Result<()> {
    sampler.sweep(state, rng)
}

/// Per-chain generator: the run seed with the chain index as stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Trace of one chain plus the retained post-burn-in states.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub names: Vec<String>,
    /// One row per sweep.
    pub rows: Vec<Vec<f64>>,
    /// States after burn-in, every `keep_every`-th sweep.
    pub draws: Vec<ChainState>,
    pub acceptance: Vec<(String, f64)>,
}

pub fn run_chain(
    ctx: &ModelContext,
    cfg: &SamplerConfig,
    init: ChainState,
    n_sweeps: usize,
    keep_every: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    let mut sampler = Sampler::new(ctx, cfg.clone(), &init)?;
    let mut state = init;
    let names = sampler.trace_names(&state);
    let mut rows = Vec::with_capacity(n_sweeps);
    let mut draws = Vec::new();
    let keep_every = keep_every.max(1);
    for t in 0..n_sweeps {
        sampler.sweep(&mut state, rng)?;
        rows.push(sampler.trace_values(&state));
        if t >= cfg.burnin && (t - cfg.burnin) % keep_every == 0 {
            draws.push(state.clone());
        }
    }
    Ok(ChainOutput { names, rows, draws, acceptance: sampler.acceptance_rates() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{ArchimedeanParam, Family};
    use crate::linalg::TelescopingBlockDiag;
    use crate::model::prior::InvGamma;
    use crate::model::tests::{simulate_model_i, theta_j};

    fn setup(n: usize, seed: u64) -> (ModelContext, DevelopmentFactors) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = theta_j(n, &mut rng);
        let tri = simulate_model_i(&t, &mut rng);
        let mut h = HyperPriors::vague(n, 100.0, 100.0);
        h.phi_mean = t.phi.clone();
        h.psi_mean = t.psi.clone();
        (ModelContext::new(tri, h).unwrap(), t)
    }

    #[test]
    fn model_iii_identity_reproduces_model_i_trajectory() {
        let (ctx, t0) = setup(3, 1);
        let t = DevelopmentFactors::new(t0.phi.clone(), t0.psi.clone(), vec![1.0; 4], vec![1.0; 3]).unwrap();
        let cfg = SamplerConfig::default();
        let a = run_chain(&ctx, &cfg, ctx.initial_state(t.clone(), DependenceSpec::ModelI).unwrap(), 200, 1, &mut chain_rng(7, 0)).unwrap();
        let dep = DependenceSpec::ModelIII { tele: TelescopingBlockDiag::identity(3) };
        let b = run_chain(&ctx, &cfg, ctx.initial_state(t, dep).unwrap(), 200, 1, &mut chain_rng(7, 0)).unwrap();
        assert_eq!(a.names, b.names);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (ctx, t) = setup(2, 2);
        let cfg = SamplerConfig::default();
        let run = || {
            run_chain(&ctx, &cfg, ctx.initial_state(t.clone(), DependenceSpec::ModelI).unwrap(), 50, 1, &mut chain_rng(3, 1))
                .unwrap()
                .rows
        };
        assert_eq!(run(), run());
        let other = run_chain(&ctx, &cfg, ctx.initial_state(t.clone(), DependenceSpec::ModelI).unwrap(), 50, 1, &mut chain_rng(3, 2)).unwrap();
        assert_ne!(run(), other.rows);
    }

    #[test]
    fn model_i_stage1_matches_grid_posterior_mean() {
        // J = 1: exact Gibbs draws of theta with fixed scales are i.i.d. from
        // the closed-form posterior; the mean of Phi_0 must match a direct
        // grid integration of prior x likelihood.
        let (ctx, t) = setup(1, 3);
        let cfg = SamplerConfig::default();
        let out = run_chain(&ctx, &cfg, ctx.initial_state(t.clone(), DependenceSpec::ModelI).unwrap(), 100_000, 1, &mut chain_rng(9, 0)).unwrap();
        let xs: Vec<f64> = out.rows.iter().map(|r| r[0]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        // grid over Phi_0 with Phi_1, Psi_0 integrated on a coarse 3-d grid
        let post = crate::conjugate::dev_factor_full_conditional(
            &ctx.ratios, &t, &ctx.priors, &HyperDraws::from_priors(&ctx.priors)).unwrap();
        let cov = post.cov();
        let c = post.mean.clone();
        let sds: Vec<f64> = (0..3).map(|k| cov[(k, k)].sqrt()).collect();
        let g = 60;
        let lp_ref = post_ref_lp(&ctx, &c, &t);
        let (mut num, mut den) = (0.0, 0.0);
        let mut th = t.clone();
        for a in 0..g {
            for b in 0..g {
                for e in 0..g {
                    let x = DVector::from_vec(vec![
                        c[0] + sds[0] * (-6.0 + 12.0 * a as f64 / (g - 1) as f64),
                        c[1] + sds[1] * (-6.0 + 12.0 * b as f64 / (g - 1) as f64),
                        c[2] + sds[2] * (-6.0 + 12.0 * e as f64 / (g - 1) as f64),
                    ]);
                    th.set_theta(&x);
                    let lp = loglik_independent(&ctx.tri, &th).unwrap()
                        + theta_gaussian_prior(&th, &ctx.priors, &HyperDraws::from_priors(&ctx.priors));
                    let w = (lp - lp_ref).exp();
                    num += w * x[0];
                    den += w;
                }
            }
        }
        let grid_mean = num / den;
        assert!((m - grid_mean).abs() < 3.0 * sd / (xs.len() as f64).sqrt(), "{m} vs {grid_mean}");
    }

    fn post_ref_lp(ctx: &ModelContext, c: &DVector<f64>, t: &DevelopmentFactors) -> f64 {
        let mut th = t.clone();
        th.set_theta(c);
        loglik_independent(&ctx.tri, &th).unwrap() + theta_gaussian_prior(&th, &ctx.priors, &HyperDraws::from_priors(&ctx.priors))
    }

    #[test]
    fn stage1_draws_follow_full_conditional() {
        // chi-square check: Mahalanobis distances of exact draws from their
        // conditional are chi^2 with 2J+1 degrees of freedom
        let (ctx, t) = setup(2, 4);
        let mut rng = chain_rng(1, 0);
        let post = dev_factor_full_conditional(&ctx.ratios, &t, &ctx.priors, &HyperDraws::from_priors(&ctx.priors)).unwrap();
        let n = 10_000;
        let d2: Vec<f64> = (0..n)
            .map(|_| {
                let x = post.sample(&mut rng) - &post.mean;
                (x.transpose() * post.precision.matrix() * &x)[(0, 0)]
            })
            .collect();
        let mean = d2.iter().sum::<f64>() / n as f64;
        let var = d2.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 5.0).abs() < 4.0 * (10.0 / n as f64).sqrt());
        assert!((var / 10.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn full_model_i_with_sampled_scales_runs() {
        let (mut ctx, t) = setup(3, 5);
        ctx.priors.s2_prior = Some(vec![InvGamma::new(3.0, 2.0).unwrap(); 4]);
        ctx.priors.t2_prior = Some(vec![InvGamma::new(3.0, 2.0).unwrap(); 3]);
        ctx.priors.sigma2_prior = Some(vec![InvGamma::new(3.0, 0.02).unwrap(); 4]);
        ctx.priors.tau2_prior = Some(vec![InvGamma::new(3.0, 0.02).unwrap(); 3]);
        let cfg = SamplerConfig { burnin: 200, ..SamplerConfig::default() };
        let out = run_chain(&ctx, &cfg, ctx.initial_state(t, DependenceSpec::ModelI).unwrap(), 1000, 1, &mut chain_rng(1, 0)).unwrap();
        assert_eq!(out.names.len(), 7 + 7 + 7);
        assert!(out.names.contains(&"sigma_0".to_string()) && out.names.contains(&"s2_3".to_string()));
        let rate = out.acceptance.iter().find(|(n, _)| n == "scales").unwrap().1;
        assert!(rate > 0.02 && rate < 0.95, "{rate}");
        assert_eq!(out.draws.len(), 800);
    }

    #[test]
    fn model_iii_manifold_and_conjugate_run() {
        let (mut ctx, t) = setup(3, 6);
        let iw = |d: usize| InverseWishartParams::new(SpdMatrix::identity(d), d as f64 + 3.0).unwrap();
        ctx.priors.cov_prior = Some(CovariancePrior::Blocks {
            payment: (0..=3).map(|i| iw(4 - i)).collect(),
            incurred: (0..3).map(|i| iw(3 - i)).collect(),
        });
        let dep = DependenceSpec::ModelIII { tele: TelescopingBlockDiag::identity(3) };
        for mode in [CovUpdate::Manifold, CovUpdate::Conjugate] {
            let cfg = SamplerConfig { burnin: 100, cov_update: mode, ..SamplerConfig::default() };
            let out = run_chain(&ctx, &cfg, ctx.initial_state(t.clone(), dep.clone()).unwrap(), 400, 1, &mut chain_rng(2, 0)).unwrap();
            assert!(out.names.iter().any(|n| n == "covp0_0_3"));
            assert_eq!(out.names.len(), out.rows[0].len());
            if mode == CovUpdate::Manifold {
                for (_, r) in out.acceptance.iter().filter(|(n, _)| n.starts_with("cov")) {
                    assert!(*r > 0.0, "manifold block never accepted");
                }
            }
        }
    }

    #[test]
    fn model_ii_conjugate_is_rejected() {
        let (mut ctx, t) = setup(2, 7);
        ctx.priors.cov_prior = Some(CovariancePrior::Shared(
            InverseWishartParams::new(SpdMatrix::identity(5), 8.0).unwrap(),
        ));
        let dep = DependenceSpec::model_ii_matching(&t).unwrap();
        let init = ctx.initial_state(t, dep).unwrap();
        let cfg = SamplerConfig { cov_update: CovUpdate::Conjugate, ..SamplerConfig::default() };
        assert!(matches!(Sampler::new(&ctx, cfg, &init), Err(Error::Config { .. })));
    }

    #[test]
    fn model_iv_aux_matches_gaussian_conditional_j1() {
        // independence copula, J = 1, theta frozen by a tight prior: the single
        // augmented payment cell is N(eta_1, sigma_diag[1]) given the data
        let (mut ctx, t) = setup(1, 8);
        ctx.priors.s2 = vec![1e-12; 2];
        ctx.priors.t2 = vec![1e-12; 1];
        let sd = vec![0.04, 0.09, 0.05];
        let dep = DependenceSpec::ModelIV {
            mix_p: MixtureCopula::independence(2),
            mix_i: MixtureCopula::independence(1),
            sigma_diag: sd.clone(),
        };
        let cfg = SamplerConfig { burnin: 2000, ..SamplerConfig::default() };
        let out = run_chain(&ctx, &cfg, ctx.initial_state(t.clone(), dep).unwrap(), 60_000, 1, &mut chain_rng(4, 0)).unwrap();
        let k = out.names.iter().position(|n| n == "aux_1_1_P").unwrap();
        let xs: Vec<f64> = out.rows[2000..].iter().map(|r| r[k]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let eta1 = t.phi[0] + t.phi[1];
        let se = crate::diagnostics::batch_means_se(&xs, 50);
        assert!((m - eta1).abs() < 3.0 * se + 1e-4, "{m} vs {eta1} (se {se})");
        assert!((v / 0.09 - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn model_iv_with_copula_runs_and_traces_rho() {
        let (mut ctx, t) = setup(2, 9);
        ctx.priors.sigma_diag_prior = Some(vec![InvGamma::new(3.0, 0.1).unwrap(); 5]);
        let cl = ArchimedeanParam::new(Family::Clayton, 1.0).unwrap();
        let dep = DependenceSpec::ModelIV {
            mix_p: MixtureCopula::single(cl, 3).unwrap(),
            mix_i: MixtureCopula::single(ArchimedeanParam::new(Family::Gumbel, 1.5).unwrap(), 2).unwrap(),
            sigma_diag: crate::model::default_sigma_diag(&t).unwrap(),
        };
        let cfg = SamplerConfig { burnin: 200, ..SamplerConfig::default() };
        let out = run_chain(&ctx, &cfg, ctx.initial_state(t, dep).unwrap(), 600, 1, &mut chain_rng(5, 0)).unwrap();
        let k = out.names.iter().position(|n| n == "rho_i0").unwrap();
        assert!(out.rows.iter().all(|r| r[k] >= 1.0 && r[k] <= 50.0));
        assert!(out.names.iter().any(|n| n == "sd2_p2"));
        assert!(out.names.iter().any(|n| n == "aux_2_1_I") || out.names.iter().any(|n| n == "aux_2_2_P"));
    }
}
