//! MCMC engines: Welford moments, Euclidean and SPD-manifold adaptive
//! Metropolis, and the per-model Gibbs sweep.

pub mod chain;
pub mod moments;
pub mod proposal;

use rand::Rng;

use crate::error::{Error, Result};

pub use chain::{
    chain_rng, cov_blocks, gibbs_sweep, run_chain, ChainOutput, ChainState, CovUpdate, ModelContext, Sampler, SamplerConfig,
};
pub use moments::{running_moments_update, RunningMoments};
pub use proposal::{
    adaptive_iw_component, euclidean_am_logdensity, euclidean_am_propose, manifold_iw_propose, AdaptiveBlock,
    AmConfig, IwProposal, ManifoldBlock,
};

/// Metropolis-Hastings acceptance with probability
/// `min(1, exp(lp_new - lp_old + log_q_bwd - log_q_fwd))`.
pub fn mh_accept<R: Rng + ?Sized>(
    log_post_new: f64,
    log_post_old: f64,
    log_q_fwd: f64,
    log_q_bwd: f64,
    rng: &mut R,
) -> Result<bool> {
    if [log_post_new, log_post_old, log_q_fwd, log_q_bwd].iter().any(|x| x.is_nan()) {
        return Err(Error::NanInput);
    }
    if log_post_new == f64::NEG_INFINITY {
        return Ok(false);
    }
    let log_ratio = log_post_new - log_post_old + log_q_bwd - log_q_fwd;
    if log_ratio >= 0.0 {
        return Ok(true);
    }
    let u: f64 = rng.random();
    Ok(u.ln() < log_ratio)
}
