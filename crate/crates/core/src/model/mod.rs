//! PIC model parameters, priors and likelihoods (Models I to IV).

pub mod augmented;
pub mod gaussian;
pub mod prior;

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::copula::MixtureCopula;
use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, TelescopingBlockDiag};
use crate::triangle::{log_ratios, ClaimsTriangle};

pub use augmented::{
    loglik_augmented_observed_independent, loglik_mixture_copula_full, observed_data_loglik_mc,
    AugmentedState, McEstimate,
};
pub use gaussian::{gaussian_groups, loglik_gaussian, loglik_gaussian_copula, GaussianGroup, YearDesign};
pub use prior::{log_prior, CopulaPrior, CovariancePrior, HyperDraws, HyperPriors, InvGamma};

/// `ln N(x; mean, var)`.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + r * r / var)
}

/// Development factors `Phi_0..Phi_J`, `Psi_0..Psi_{J-1}` and the
/// observation scales `sigma_0..sigma_J`, `tau_0..tau_{J-1}` (standard
/// deviations).
#[derive(Clone, Debug, PartialEq)]
pub struct DevelopmentFactors {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
}

impl DevelopmentFactors {
    pub fn new(phi: Vec<f64>, psi: Vec<f64>, sigma: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        let n = phi.len();
        if n == 0 {
            return Err(Error::EmptyList);
        }
        for (len, want) in [(psi.len(), n - 1), (sigma.len(), n), (tau.len(), n - 1)] {
            if len != want {
                return Err(Error::LengthMismatch { expected: want, got: len });
            }
        }
        if sigma.iter().chain(&tau).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::ParamOutOfDomain("sigma and tau must be positive".into()));
        }
        if phi.iter().chain(&psi).any(|x| !x.is_finite()) {
            return Err(Error::ParamOutOfDomain("non-finite development factor".into()));
        }
        Ok(Self { phi, psi, sigma, tau })
    }

    pub fn dev_max(&self) -> usize {
        self.phi.len() - 1
    }

    /// Number of development factors, `2J + 1`.
    pub fn n_factors(&self) -> usize {
        self.phi.len() + self.psi.len()
    }

    /// `(Phi_0..Phi_J, Psi_0..Psi_{J-1})`.
    pub fn theta_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_factors(), self.phi.iter().chain(&self.psi).copied())
    }

    pub fn set_theta(&mut self, v: &DVector<f64>) {
        let n = self.phi.len();
        self.phi.copy_from_slice(&v.as_slice()[..n]);
        self.psi.copy_from_slice(&v.as_slice()[n..]);
    }

    /// Mean of the full ratio vector `(xi_0..xi_J, zeta_0..zeta_{J-1})`,
    /// i.e. `(Phi, -Psi)`.
    pub fn ratio_mean(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_factors(),
            self.phi.iter().copied().chain(self.psi.iter().map(|p| -p)),
        )
    }

    pub fn sigma2(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn tau2(&self) -> Vec<f64> {
        self.tau.iter().map(|s| s * s).collect()
    }

    /// Diagonal ratio variances `(sigma^2, tau^2)`.
    pub fn ratio_variances(&self) -> Vec<f64> {
        self.sigma2().into_iter().chain(self.tau2()).collect()
    }
}

/// Cumulative scales and means of the log-level process.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedScales {
    /// `nu_j^2 = sum_{m<=J} sigma_m^2 + sum_{n=j}^{J-1} tau_n^2`.
    pub nu2: Vec<f64>,
    /// `omega_j^2 = sum_{m<=j} sigma_m^2`.
    pub omega2: Vec<f64>,
    /// `eta_j = sum_{m<=j} Phi_m`, mean of `log P(i,j)`.
    pub eta: Vec<f64>,
    /// `mu_j = sum_m Phi_m - sum_{n=j}^{J-1} Psi_n`, mean of `log I(i,j)`.
    pub mu: Vec<f64>,
}

impl DerivedScales {
    /// Variance of the diagonal ratio at development year `k < J`.
    pub fn diag_var(&self, k: usize) -> f64 {
        self.nu2[k] - self.omega2[k]
    }

    /// Mean of the diagonal ratio at development year `k`.
    pub fn diag_mean(&self, k: usize) -> f64 {
        self.mu[k] - self.eta[k]
    }
}

pub fn derived_scales(theta: &DevelopmentFactors) -> Result<DerivedScales> {
    let n = theta.dev_max();
    let s2 = theta.sigma2();
    let t2 = theta.tau2();
    let total_s2: f64 = s2.iter().sum();
    let total_phi: f64 = theta.phi.iter().sum();
    let mut omega2 = Vec::with_capacity(n + 1);
    let mut eta = Vec::with_capacity(n + 1);
    let (mut a, mut b) = (0.0, 0.0);
    for j in 0..=n {
        a += s2[j];
        b += theta.phi[j];
        omega2.push(a);
        eta.push(b);
    }
    let mut nu2 = vec![0.0; n + 1];
    let mut mu = vec![0.0; n + 1];
    let (mut tail_t2, mut tail_psi) = (0.0, 0.0);
    for j in (0..=n).rev() {
        if j < n {
            tail_t2 += t2[j];
            tail_psi += theta.psi[j];
        }
        nu2[j] = total_s2 + tail_t2;
        mu[j] = total_phi - tail_psi;
    }
    for j in 0..n {
        if !(nu2[j] > omega2[j]) {
            return Err(Error::ScaleOrderingViolated { j, nu2: nu2[j], omega2: omega2[j] });
        }
    }
    Ok(DerivedScales { nu2, omega2, eta, mu })
}

/// Independent lognormal likelihood: payment terms, diagonal incurred/paid
/// ratio terms for `i >= 1`, and incurred terms, each with its level
/// Jacobian.
pub fn loglik_independent(tri: &ClaimsTriangle, theta: &DevelopmentFactors) -> Result<f64> {
    let n = tri.dev_max();
    if theta.dev_max() != n {
        return Err(Error::LengthMismatch { expected: n, got: theta.dev_max() });
    }
    let sc = derived_scales(theta)?;
    let r = log_ratios(tri);
    let levels = tri.log_levels();
    let s2 = theta.sigma2();
    let t2 = theta.tau2();
    let mut ll = 0.0;
    for i in 0..=n {
        for j in 0..=n - i {
            ll += normal_logpdf(r.xi[i][j], theta.phi[j], s2[j]) - levels.log_p[i][j];
        }
    }
    for i in 1..=n {
        let k = n - i;
        ll += normal_logpdf(r.diagonal_ratio(i), sc.diag_mean(k), sc.diag_var(k))
            - levels.log_i[i][k];
    }
    for j in 0..n {
        for i in 0..n - j {
            ll += normal_logpdf(r.zeta[i][j], -theta.psi[j], t2[j]) - levels.log_i[i][j];
        }
    }
    Ok(ll)
}

/// Sum of `log P` and `log I` over the cells entering the independent
/// likelihood Jacobian (all observed cells except `I(0,J)`).
pub fn log_level_jacobian(tri: &ClaimsTriangle) -> f64 {
    let levels = tri.log_levels();
    let n = tri.dev_max();
    let p: f64 = levels.log_p.iter().flatten().sum();
    let i: f64 = levels.log_i.iter().flatten().sum::<f64>() - levels.log_i[0][n];
    p + i
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainLadderMoments {
    /// `E[P(i,j) | P(i,j-1)] = P(i,j-1) exp(Phi_j + sigma_j^2 / 2)`.
    pub cond_mean: f64,
    /// Mean of `log P(i,j)` given the previous cell.
    pub log_mean: f64,
    /// Variance of `log P(i,j)` given the previous cell.
    pub log_var: f64,
}

pub fn chain_ladder_moments(theta: &DevelopmentFactors, p_prev: f64, j: usize) -> ChainLadderMoments {
    let s2 = theta.sigma[j] * theta.sigma[j];
    ChainLadderMoments {
        cond_mean: p_prev * (theta.phi[j] + s2 / 2.0).exp(),
        log_mean: p_prev.ln() + theta.phi[j],
        log_var: s2,
    }
}

/// `exp(sum_m Phi_m + sigma_m^2 / 2)`, the expected ultimate of both
/// payments and incurred.
pub fn expected_ultimate(theta: &DevelopmentFactors) -> f64 {
    theta
        .phi
        .iter()
        .zip(&theta.sigma)
        .map(|(p, s)| p + s * s / 2.0)
        .sum::<f64>()
        .exp()
}

/// Dependence structure of the chosen PIC model.
#[derive(Clone, Debug)]
pub enum DependenceSpec {
    /// Independent lognormal ratios with scales `sigma`, `tau`.
    ModelI,
    /// Gaussian copula on the full ratio vector of each year with covariance
    /// `sigma` (`2J+1`), optionally per year, optionally correlated across
    /// years through `omega` (`J+1`, Kronecker structure).
    ModelII {
        sigma: SpdMatrix,
        omega: Option<SpdMatrix>,
        per_year: Option<Vec<SpdMatrix>>,
    },
    /// Telescoping block covariance over the observed ratios of each year.
    ModelIII { tele: TelescopingBlockDiag },
    /// Data-augmented mixture copula with diagonal Gaussian log-level
    /// marginals (`2J+1` variances: payments `0..=J`, incurred `0..J`).
    ModelIV { mix_p: MixtureCopula, mix_i: MixtureCopula, sigma_diag: Vec<f64> },
}

impl DependenceSpec {
    pub fn model_name(&self) -> &'static str {
        match self {
            DependenceSpec::ModelI => "I",
            DependenceSpec::ModelII { .. } => "II",
            DependenceSpec::ModelIII { .. } => "III",
            DependenceSpec::ModelIV { .. } => "IV",
        }
    }

    /// Model II with `Sigma = diag(sigma^2, tau^2)` and `Omega = I`.
    pub fn model_ii_matching(theta: &DevelopmentFactors) -> Result<Self> {
        Ok(DependenceSpec::ModelII {
            sigma: SpdMatrix::from_diagonal(&theta.ratio_variances())?,
            omega: None,
            per_year: None,
        })
    }

    pub fn validate(&self, dev_max: usize) -> Result<()> {
        let nf = 2 * dev_max + 1;
        match self {
            DependenceSpec::ModelI => Ok(()),
            DependenceSpec::ModelII { sigma, omega, per_year } => {
                if sigma.dim() != nf {
                    return Err(Error::LengthMismatch { expected: nf, got: sigma.dim() });
                }
                if let Some(o) = omega {
                    if o.dim() != dev_max + 1 {
                        return Err(Error::LengthMismatch { expected: dev_max + 1, got: o.dim() });
                    }
                    if per_year.is_some() {
                        return Err(Error::config(
                            "dependence.omega",
                            "cross-year omega requires a shared sigma",
                        ));
                    }
                }
                if let Some(py) = per_year {
                    if py.len() != dev_max + 1 {
                        return Err(Error::LengthMismatch { expected: dev_max + 1, got: py.len() });
                    }
                    if let Some(b) = py.iter().find(|b| b.dim() != nf) {
                        return Err(Error::LengthMismatch { expected: nf, got: b.dim() });
                    }
                }
                Ok(())
            }
            DependenceSpec::ModelIII { tele } => {
                if tele.dev_max() != dev_max {
                    return Err(Error::LengthMismatch { expected: dev_max, got: tele.dev_max() });
                }
                Ok(())
            }
            DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } => {
                if dev_max < 1 {
                    return Err(Error::InvalidIndex("Model IV needs J >= 1".into()));
                }
                if mix_p.dim() != dev_max + 1 {
                    return Err(Error::LengthMismatch { expected: dev_max + 1, got: mix_p.dim() });
                }
                if mix_i.dim() != dev_max {
                    return Err(Error::LengthMismatch { expected: dev_max, got: mix_i.dim() });
                }
                if sigma_diag.len() != nf {
                    return Err(Error::LengthMismatch { expected: nf, got: sigma_diag.len() });
                }
                if sigma_diag.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::ParamOutOfDomain("sigma_diag must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Model IV default marginal variances: the Model I log-level variances
/// `(omega_0^2..omega_J^2, nu_0^2..nu_{J-1}^2)`.
pub fn default_sigma_diag(theta: &DevelopmentFactors) -> Result<Vec<f64>> {
    let sc = derived_scales(theta)?;
    let n = theta.dev_max();
    Ok(sc.omega2.iter().copied().chain(sc.nu2[..n].iter().copied()).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::triangle::ClaimsTriangle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn theta_j(n: usize, rng: &mut ChaCha8Rng) -> DevelopmentFactors {
        DevelopmentFactors::new(
            (0..=n).map(|j| if j == 0 { 8.0 } else { 0.5 / j as f64 } + 0.1 * rng.random::<f64>()).collect(),
            (0..n).map(|j| 0.2 / (j + 1) as f64 + 0.05 * rng.random::<f64>()).collect(),
            (0..=n).map(|_| 0.05 + 0.1 * rng.random::<f64>()).collect(),
            (0..n).map(|_| 0.05 + 0.1 * rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    /// Draws a triangle from the Model I generative recursions.
    pub(crate) fn simulate_model_i(theta: &DevelopmentFactors, rng: &mut ChaCha8Rng) -> ClaimsTriangle {
        let n = theta.dev_max();
        let mut pay = Vec::new();
        let mut inc = Vec::new();
        for i in 0..=n {
            let mut lp = vec![0.0; n + 1];
            let mut acc = 0.0;
            for j in 0..=n {
                acc += theta.phi[j] + theta.sigma[j] * rng.sample::<f64, _>(StandardNormal);
                lp[j] = acc;
            }
            let mut li = vec![0.0; n + 1];
            li[n] = lp[n];
            for j in (0..n).rev() {
                li[j] = li[j + 1] - theta.psi[j] + theta.tau[j] * rng.sample::<f64, _>(StandardNormal);
            }
            pay.push(lp[..=n - i].iter().map(|x| x.exp()).collect::<Vec<_>>());
            inc.push(li[..=n - i].iter().map(|x| x.exp()).collect::<Vec<_>>());
        }
        inc[0][n] = pay[0][n];
        ClaimsTriangle::from_rows(&pay, &inc).unwrap()
    }

    #[test]
    fn derived_scale_examples() {
        let t = DevelopmentFactors::new(vec![0.0; 3], vec![0.0; 2], vec![1.0; 3], vec![1.0; 2]).unwrap();
        let s = derived_scales(&t).unwrap();
        assert_eq!(s.omega2, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.nu2, vec![5.0, 4.0, 3.0]);
        assert_eq!(s.eta, vec![0.0; 3]);
        assert_eq!(s.mu, vec![0.0; 3]);
        let t0 = DevelopmentFactors::new(vec![1.0], vec![], vec![0.7], vec![]).unwrap();
        let s0 = derived_scales(&t0).unwrap();
        assert_eq!(s0.nu2, s0.omega2);
        assert!((s0.nu2[0] - 0.49).abs() < 1e-15);
    }

    #[test]
    fn single_cell_likelihood() {
        let t = DevelopmentFactors::new(vec![2.0], vec![], vec![0.5], vec![]).unwrap();
        let tri = ClaimsTriangle::from_rows(&[vec![9.0]], &[vec![9.0]]).unwrap();
        let x = 9f64.ln();
        let lognormal = normal_logpdf(x, 2.0, 0.25) - x;
        assert!((loglik_independent(&tri, &t).unwrap() - lognormal).abs() < 1e-14);
    }

    #[test]
    fn centred_diagonal_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = theta_j(2, &mut rng);
        let sc = derived_scales(&t).unwrap();
        let mut tri = simulate_model_i(&t, &mut rng);
        // move I(2,0) onto the diagonal mean and compare with the zero-residual value
        let p = tri.payment(2, 0).unwrap();
        let mut inc: Vec<Vec<f64>> = (0..3).map(|i| (0..3 - i).map(|j| tri.incurred(i, j).unwrap()).collect()).collect();
        inc[2][0] = p * sc.diag_mean(0).exp();
        let pay: Vec<Vec<f64>> = (0..3).map(|i| (0..3 - i).map(|j| tri.payment(i, j).unwrap()).collect()).collect();
        tri = ClaimsTriangle::from_rows(&pay, &inc).unwrap();
        let r = log_ratios(&tri);
        assert!((r.diagonal_ratio(2) - sc.diag_mean(0)).abs() < 1e-12);
    }

    /// Straightforward re-implementation: enumerate every lognormal factor of
    /// the joint density of the observed cells directly on the level scale.
    fn loglik_by_hand(tri: &ClaimsTriangle, t: &DevelopmentFactors) -> f64 {
        let n = tri.dev_max();
        let lognormal = |x: f64, m: f64, v: f64| {
            -x.ln() - 0.5 * (2.0 * PI * v).ln() - (x.ln() - m).powi(2) / (2.0 * v)
        };
        let mut ll = 0.0;
        for i in 0..=n {
            for j in 0..=n - i {
                let prev = if j == 0 { 0.0 } else { tri.payment(i, j - 1).unwrap().ln() };
                ll += lognormal(tri.payment(i, j).unwrap(), prev + t.phi[j], t.sigma[j].powi(2));
            }
        }
        for i in 1..=n {
            let k = n - i;
            let v: f64 = (k + 1..=n).map(|m| t.sigma[m].powi(2)).sum::<f64>()
                + (k..n).map(|l| t.tau[l].powi(2)).sum::<f64>();
            let m: f64 = (k + 1..=n).map(|m| t.phi[m]).sum::<f64>() - (k..n).map(|l| t.psi[l]).sum::<f64>();
            let p = tri.payment(i, k).unwrap();
            ll += lognormal(tri.incurred(i, k).unwrap(), p.ln() + m, v);
        }
        for i in 0..n {
            for j in 0..n - i {
                let next = tri.incurred(i, j + 1).unwrap();
                ll += lognormal(tri.incurred(i, j).unwrap(), next.ln() - t.psi[j], t.tau[j].powi(2));
            }
        }
        ll
    }

    #[test]
    fn likelihood_matches_hand_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [1, 3, 5] {
            let t = theta_j(n, &mut rng);
            let tri = simulate_model_i(&t, &mut rng);
            let a = loglik_independent(&tri, &t).unwrap();
            let b = loglik_by_hand(&tri, &t);
            assert!((a - b).abs() < 1e-9 * a.abs(), "J={n}: {a} vs {b}");
        }
    }

    #[test]
    fn chain_ladder_and_ultimate() {
        let t = DevelopmentFactors::new(vec![1.0, 1.0], vec![0.1], vec![2f64.sqrt(), 2f64.sqrt()], vec![0.3]).unwrap();
        let m = chain_ladder_moments(&t, 1.0, 1);
        assert!((m.cond_mean - 2f64.exp()).abs() < 1e-12);
        assert!((expected_ultimate(&t) - 4f64.exp()).abs() < 1e-10);
        let tiny = DevelopmentFactors::new(vec![0.0, 0.0], vec![0.0], vec![1e-12; 2], vec![1e-12]).unwrap();
        assert!((chain_ladder_moments(&tiny, 5.0, 1).cond_mean - 5.0).abs() < 1e-12);
        assert!((expected_ultimate(&tiny) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ultimate_is_composed_chain_ladder() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = theta_j(5, &mut rng);
        let mut e = (t.phi[0] + t.sigma[0].powi(2) / 2.0).exp();
        for j in 1..=5 {
            e = chain_ladder_moments(&t, e, j).cond_mean;
        }
        assert!((e - expected_ultimate(&t)).abs() < 1e-10 * e);
    }

    #[test]
    fn chain_ladder_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = DevelopmentFactors::new(vec![0.0, 0.3], vec![0.1], vec![0.2, 0.4], vec![0.1]).unwrap();
        let m = chain_ladder_moments(&t, 50.0, 1);
        let n = 1_000_000;
        let mc: f64 = (0..n)
            .map(|_| (m.log_mean + m.log_var.sqrt() * rng.sample::<f64, _>(StandardNormal)).exp())
            .sum::<f64>()
            / n as f64;
        assert!((mc / m.cond_mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn validation_errors() {
        assert!(DevelopmentFactors::new(vec![0.0; 3], vec![0.0; 1], vec![1.0; 3], vec![1.0; 2]).is_err());
        assert!(DevelopmentFactors::new(vec![0.0; 2], vec![0.0], vec![1.0, -1.0], vec![1.0]).is_err());
    }
}
