//! Model IV: mixture-copula likelihood on the completed log-level rectangle.
//!
//! Each accident year carries log payments `P_0..P_J` and log incurred
//! `I_0..I_{J-1}` (`I_J` equals `P_J`). Marginals are Gaussian with means
//! `eta_j` / `mu_j` and variances from `sigma_diag`; payments and incurred of
//! a year are coupled through two mixture copulas. Densities are on the log
//! scale.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use super::{derived_scales, normal_logpdf, DependenceSpec, DerivedScales, DevelopmentFactors};
use crate::copula::{mixture_logdensity, MixtureCopula};
use crate::error::{Error, Result};
use crate::triangle::{AugmentationPartition, LogLevels};

/// Clamp applied to marginal CDF values before they reach a copula density.
pub const U_CLAMP: f64 = 1e-12;

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Augmented cells in the year-blocked order of [`AugmentationPartition`].
#[derive(Clone, Debug)]
pub struct AugmentedState {
    pub part: AugmentationPartition,
    pub aux: DVector<f64>,
}

impl AugmentedState {
    /// Augmented cells at their marginal means.
    pub fn at_means(part: AugmentationPartition, theta: &DevelopmentFactors) -> Result<Self> {
        let sc = derived_scales(theta)?;
        let mut aux = Vec::with_capacity(part.aux_len());
        for i in 0..=part.dev_max {
            aux.extend(part.aux_payment_range(i).map(|j| sc.eta[j]));
            aux.extend(part.aux_incurred_range(i).map(|j| sc.mu[j]));
        }
        Ok(Self { aux: DVector::from_vec(aux), part })
    }

    /// Completed row `(P_0..P_J, I_0..I_{J-1})` of accident year `i`.
    pub fn year_row(&self, levels: &LogLevels, i: usize) -> Vec<f64> {
        year_row_with(&self.part, levels, i, &self.aux.as_slice()[self.part.year_block(i)])
    }

    pub fn full_rows(&self, levels: &LogLevels) -> Vec<Vec<f64>> {
        (0..=self.part.dev_max).map(|i| self.year_row(levels, i)).collect()
    }
}

/// Completed row of year `i` with the given augmented block.
pub fn year_row_with(part: &AugmentationPartition, levels: &LogLevels, i: usize, block: &[f64]) -> Vec<f64> {
    let n = part.dev_max;
    let k = n - i;
    let np = part.aux_payment_range(i).len();
    let mut row = Vec::with_capacity(2 * n + 1);
    row.extend_from_slice(&levels.log_p[i]);
    row.extend_from_slice(&block[..np]);
    row.extend(levels.log_i[i].iter().take(n.min(k + 1)).copied());
    row.extend_from_slice(&block[np..]);
    row
}

/// Marginal mean of each cell of a completed row.
pub fn row_means(sc: &DerivedScales) -> Vec<f64> {
    let n = sc.eta.len() - 1;
    sc.eta.iter().chain(&sc.mu[..n]).copied().collect()
}

fn model_iv_parts(dep: &DependenceSpec) -> Result<(&MixtureCopula, &MixtureCopula, &[f64])> {
    match dep {
        DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } => Ok((mix_p, mix_i, sigma_diag)),
        _ => Err(Error::config("dependence", "expected Model IV")),
    }
}

fn copula_terms(z: &[f64], n: usize, mix_p: &MixtureCopula, mix_i: &MixtureCopula) -> Result<f64> {
    let u: Vec<f64> = z.iter().map(|&x| std_normal_cdf(x).clamp(U_CLAMP, 1.0 - U_CLAMP)).collect();
    Ok(mixture_logdensity(&u[..=n], mix_p)? + mixture_logdensity(&u[n + 1..], mix_i)?)
}

/// Full-data log density of one completed row.
pub fn year_loglik(
    row: &[f64],
    means: &[f64],
    mix_p: &MixtureCopula,
    mix_i: &MixtureCopula,
    sigma_diag: &[f64],
) -> Result<f64> {
    let n = mix_p.dim() - 1;
    let mut marg = 0.0;
    let mut z = Vec::with_capacity(row.len());
    for ((x, m), v) in row.iter().zip(means).zip(sigma_diag) {
        marg += normal_logpdf(*x, *m, *v);
        z.push((x - m) / v.sqrt());
    }
    if mix_p.is_independence() && mix_i.is_independence() {
        return Ok(marg);
    }
    Ok(marg + copula_terms(&z, n, mix_p, mix_i)?)
}

/// Full-data log likelihood of the completed rectangle (`J+1` rows of
/// length `2J+1`).
pub fn loglik_mixture_copula_full(
    x_full: &[Vec<f64>],
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
) -> Result<f64> {
    let n = theta.dev_max();
    dep.validate(n)?;
    let (mix_p, mix_i, sd) = model_iv_parts(dep)?;
    if x_full.len() != n + 1 {
        return Err(Error::LengthMismatch { expected: n + 1, got: x_full.len() });
    }
    let means = row_means(&derived_scales(theta)?);
    let mut ll = 0.0;
    for row in x_full {
        if row.len() != 2 * n + 1 {
            return Err(Error::LengthMismatch { expected: 2 * n + 1, got: row.len() });
        }
        ll += year_loglik(row, &means, mix_p, mix_i, sd)?;
    }
    Ok(ll)
}

/// Indices within a completed row that are observed for year `i`.
fn observed_slots(n: usize, i: usize) -> impl Iterator<Item = usize> {
    let k = n - i;
    (0..=k).chain((0..=k.min(n - 1)).map(move |j| n + 1 + j))
}

/// Observed-data log likelihood under the independence copula: the Gaussian
/// log-marginals of the observed cells.
pub fn loglik_augmented_observed_independent(
    levels: &LogLevels,
    theta: &DevelopmentFactors,
    sigma_diag: &[f64],
) -> Result<f64> {
    let n = theta.dev_max();
    let means = row_means(&derived_scales(theta)?);
    let mut ll = 0.0;
    for i in 0..=n {
        let obs: Vec<f64> = levels.log_p[i].iter().chain(levels.log_i[i].iter().take(n)).copied().collect();
        for (slot, x) in observed_slots(n, i).zip(obs) {
            ll += normal_logpdf(x, means[slot], sigma_diag[slot]);
        }
    }
    Ok(ll)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub log_lik: f64,
    pub std_err: f64,
}

/// Observed-data log likelihood with the augmented cells integrated out by
/// Monte Carlo from their marginals.
pub fn observed_data_loglik_mc<R: Rng + ?Sized>(
    levels: &LogLevels,
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    let n = theta.dev_max();
    dep.validate(n)?;
    let (mix_p, mix_i, sd) = model_iv_parts(dep)?;
    if n_samples < 2 {
        return Err(Error::TooShort { need: 2, got: n_samples });
    }
    let mut ll = loglik_augmented_observed_independent(levels, theta, sd)?;
    if mix_p.is_independence() && mix_i.is_independence() {
        return Ok(McEstimate { log_lik: ll, std_err: 0.0 });
    }
    let means = row_means(&derived_scales(theta)?);
    let mut var = 0.0;
    let mut z = vec![0.0; 2 * n + 1];
    for i in 0..=n {
        let obs: Vec<f64> = levels.log_p[i].iter().chain(levels.log_i[i].iter().take(n)).copied().collect();
        let slots: Vec<usize> = observed_slots(n, i).collect();
        let mut is_obs = vec![false; 2 * n + 1];
        for (&s, x) in slots.iter().zip(&obs) {
            is_obs[s] = true;
            z[s] = (x - means[s]) / sd[s].sqrt();
        }
        if slots.len() == 2 * n + 1 {
            ll += copula_terms(&z, n, mix_p, mix_i)?;
            continue;
        }
        let mut logs = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            for (s, zs) in z.iter_mut().enumerate() {
                if !is_obs[s] {
                    *zs = rng.sample(StandardNormal);
                }
            }
            logs.push(copula_terms(&z, n, mix_p, mix_i)?);
        }
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
        let m = w.iter().sum::<f64>() / n_samples as f64;
        let v = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_samples - 1) as f64;
        ll += mx + m.ln();
        var += v / (n_samples as f64 * m * m);
    }
    Ok(McEstimate { log_lik: ll, std_err: var.sqrt() })
}
