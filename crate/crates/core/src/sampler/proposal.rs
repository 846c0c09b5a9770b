//! Adaptive Metropolis proposals: Euclidean Gaussian mixture and the
//! moment-matched inverse-Wishart mixture on the SPD manifold.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::moments::RunningMoments;
use super::mh_accept;
use crate::error::{Error, Result};
use crate::linalg::{inverse_wishart_logpdf, inverse_wishart_sample, mvn_logpdf, InverseWishartParams, SpdMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmConfig {
    /// Weight of the adaptive component.
    pub w1: f64,
    /// Fixed component covariance is `(fixed_scale^2 / d) I`.
    pub fixed_scale: f64,
    /// Adaptive component covariance is `(adapt_scale^2 / d) Cov`.
    pub adapt_scale: f64,
    /// Samples before the adaptive component is used (default `2 d`).
    pub warmup: Option<usize>,
    /// Inverse-Wishart proposal degrees of freedom (default `dim + 10`).
    pub iw_dof: Option<f64>,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self { w1: 0.95, fixed_scale: 0.1, adapt_scale: 2.38, warmup: None, iw_dof: None }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w1 > 0.0 && self.w1 <= 1.0) {
            return Err(Error::config("sampler.w1", "must lie in (0, 1]"));
        }
        if !(self.fixed_scale > 0.0 && self.adapt_scale > 0.0) {
            return Err(Error::config("sampler.fixed_scale", "proposal scales must be positive"));
        }
        Ok(())
    }

    pub fn warmup_for(&self, dim: usize) -> usize {
        self.warmup.unwrap_or(2 * dim)
    }

    pub fn iw_dof_for(&self, dim: usize) -> f64 {
        self.iw_dof.unwrap_or(dim as f64 + 10.0)
    }
}

/// Adaptive covariance `(adapt^2/d) Cov + 1e-10 I` when usable.
fn adaptive_cov(rm: &RunningMoments, cfg: &AmConfig) -> Option<SpdMatrix> {
    let d = rm.dim();
    if rm.n < cfg.warmup_for(d).max(2) {
        return None;
    }
    let c = rm.cov() * (cfg.adapt_scale * cfg.adapt_scale / d as f64) + DMatrix::identity(d, d) * 1e-10;
    SpdMatrix::new(c).ok()
}

/// Draw from `w1 N(x, (2.38^2/d) Cov) + (1 - w1) N(x, (0.1^2/d) I)`. The
/// proposal is symmetric, so the returned log q-ratio is zero.
pub fn euclidean_am_propose<R: Rng + ?Sized>(
    x: &DVector<f64>,
    rm: &RunningMoments,
    cfg: &AmConfig,
    rng: &mut R,
) -> (DVector<f64>, f64) {
    let d = x.len();
    let u: f64 = rng.random();
    if let Some(c) = adaptive_cov(rm, cfg) {
        if u < cfg.w1 {
            return (x + c.sample_normal(rng), 0.0);
        }
    }
    let s = cfg.fixed_scale / (d as f64).sqrt();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (x + z * s, 0.0)
}

/// `log q(y | x)` of [`euclidean_am_propose`] for a frozen accumulator.
pub fn euclidean_am_logdensity(x: &DVector<f64>, y: &DVector<f64>, rm: &RunningMoments, cfg: &AmConfig) -> f64 {
    let d = x.len();
    let s2 = cfg.fixed_scale * cfg.fixed_scale / d as f64;
    let fixed = SpdMatrix::from_diagonal(&vec![s2; d]).expect("positive diagonal");
    let lf = mvn_logpdf(y, x, &fixed).expect("matching dimensions");
    match adaptive_cov(rm, cfg) {
        Some(c) => {
            let la = mvn_logpdf(y, x, &c).expect("matching dimensions");
            log_add(cfg.w1.ln() + la, (1.0 - cfg.w1).ln() + lf)
        }
        None => lf,
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `IW(history_mean (p - dim - 1), p)`, whose mean is `history_mean`.
pub fn adaptive_iw_component(history_mean: &SpdMatrix, p: f64) -> Result<InverseWishartParams> {
    let dim = history_mean.dim();
    if !(p > dim as f64 + 1.0) {
        return Err(Error::InvalidDof { k: p, p: dim });
    }
    let lambda = SpdMatrix::new(history_mean.matrix() * (p - dim as f64 - 1.0))?;
    InverseWishartParams::new(lambda, p)
}

#[derive(Clone, Debug)]
pub struct IwProposal {
    pub proposal: SpdMatrix,
    /// `log q(proposal)`.
    pub log_q_forward: f64,
    /// `log q(current)`.
    pub log_q_backward: f64,
}

fn iw_mixture_logpdf(
    s: &SpdMatrix,
    adaptive: Option<&InverseWishartParams>,
    fixed: &InverseWishartParams,
    w1: f64,
) -> Result<f64> {
    let lf = inverse_wishart_logpdf(s, fixed)?;
    Ok(match adaptive {
        Some(a) if w1 < 1.0 => log_add(w1.ln() + inverse_wishart_logpdf(s, a)?, (1.0 - w1).ln() + lf),
        Some(a) => inverse_wishart_logpdf(s, a)?,
        None => lf,
    })
}

/// Independence-type proposal `w1 IW(Lambda_adap, p) + (1 - w1) IW(Lambda, p)`
/// where `Lambda_adap` matches the mean to `history_mean`. Without a history
/// mean only the fixed component is used.
pub fn manifold_iw_propose<R: Rng + ?Sized>(
    current: &SpdMatrix,
    history_mean: Option<&SpdMatrix>,
    fixed_lambda: &SpdMatrix,
    cfg: &AmConfig,
    rng: &mut R,
) -> Result<IwProposal> {
    let dim = current.dim();
    let p = cfg.iw_dof_for(dim);
    if !(p > dim as f64 + 1.0) {
        return Err(Error::InvalidDof { k: p, p: dim });
    }
    let fixed = InverseWishartParams::new(fixed_lambda.clone(), p)?;
    let adaptive = history_mean.map(|m| adaptive_iw_component(m, p)).transpose()?;
    let use_adaptive = match &adaptive {
        Some(_) => rng.random::<f64>() < cfg.w1,
        None => false,
    };
    let proposal = match (&adaptive, use_adaptive) {
        (Some(a), true) => inverse_wishart_sample(a, rng)?,
        _ => inverse_wishart_sample(&fixed, rng)?,
    };
    Ok(IwProposal {
        log_q_forward: iw_mixture_logpdf(&proposal, adaptive.as_ref(), &fixed, cfg.w1)?,
        log_q_backward: iw_mixture_logpdf(current, adaptive.as_ref(), &fixed, cfg.w1)?,
        proposal,
    })
}

/// Euclidean adaptive Metropolis state for one parameter block.
#[derive(Clone, Debug)]
pub struct AdaptiveBlock {
    pub rm: RunningMoments,
    pub accepted: u64,
    pub proposed: u64,
}

impl AdaptiveBlock {
    pub fn new(dim: usize) -> Self {
        Self { rm: RunningMoments::new(dim), accepted: 0, proposed: 0 }
    }

    /// One Metropolis step on `x` with cached log target `lp`.
    pub fn step<R, F>(
        &mut self,
        x: &mut DVector<f64>,
        lp: &mut f64,
        cfg: &AmConfig,
        adapt: bool,
        rng: &mut R,
        mut target: F,
    ) -> Result<bool>
    where
        R: Rng + ?Sized,
        F: FnMut(&DVector<f64>) -> Result<f64>,
    {
        let (y, _) = euclidean_am_propose(x, &self.rm, cfg, rng);
        let lpy = target(&y)?;
        self.proposed += 1;
        let acc = mh_accept(lpy, *lp, 0.0, 0.0, rng)?;
        if acc {
            *x = y;
            *lp = lpy;
            self.accepted += 1;
        }
        if adapt {
            self.rm.update(x)?;
        }
        Ok(acc)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }
}

/// Manifold adaptive Metropolis state for one covariance block.
#[derive(Clone, Debug)]
pub struct ManifoldBlock {
    sum: DMatrix<f64>,
    n: usize,
    pub fixed_lambda: SpdMatrix,
    pub accepted: u64,
    pub proposed: u64,
}

impl ManifoldBlock {
    /// The fixed component is centred on `initial`.
    pub fn new(initial: &SpdMatrix, cfg: &AmConfig) -> Result<Self> {
        let d = initial.dim();
        let p = cfg.iw_dof_for(d);
        if !(p > d as f64 + 1.0) {
            return Err(Error::InvalidDof { k: p, p: d });
        }
        Ok(Self {
            sum: DMatrix::zeros(d, d),
            n: 0,
            fixed_lambda: SpdMatrix::new(initial.matrix() * (p - d as f64 - 1.0))?,
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn history_mean(&self, cfg: &AmConfig) -> Option<SpdMatrix> {
        if self.n == 0 || self.n < cfg.warmup_for(self.sum.nrows()) {
            return None;
        }
        SpdMatrix::new(&self.sum / self.n as f64).ok()
    }

    pub fn step<R, F>(
        &mut self,
        current: &mut SpdMatrix,
        lp: &mut f64,
        cfg: &AmConfig,
        adapt: bool,
        rng: &mut R,
        mut target: F,
    ) -> Result<bool>
    where
        R: Rng + ?Sized,
        F: FnMut(&SpdMatrix) -> Result<f64>,
    {
        let hm = self.history_mean(cfg);
        let prop = manifold_iw_propose(current, hm.as_ref(), &self.fixed_lambda, cfg, rng)?;
        let lpy = target(&prop.proposal)?;
        self.proposed += 1;
        let acc = mh_accept(lpy, *lp, prop.log_q_forward, prop.log_q_backward, rng)?;
        if acc {
            *current = prop.proposal;
            *lp = lpy;
            self.accepted += 1;
        }
        if adapt {
            self.sum += current.matrix();
            self.n += 1;
        }
        Ok(acc)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.proposed as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::prior::InvGamma;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empirical_cov(xs: &[DVector<f64>]) -> DMatrix<f64> {
        let n = xs.len() as f64;
        let d = xs[0].len();
        let m = xs.iter().fold(DVector::zeros(d), |a, x| a + x) / n;
        xs.iter().fold(DMatrix::zeros(d, d), |a, x| a + (x - &m) * (x - &m).transpose()) / (n - 1.0)
    }

    #[test]
    fn pre_warmup_uses_fixed_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 4;
        let rm = RunningMoments::new(d);
        let cfg = AmConfig::default();
        let x = DVector::zeros(d);
        let draws: Vec<DVector<f64>> = (0..100_000).map(|_| euclidean_am_propose(&x, &rm, &cfg, &mut rng).0).collect();
        let c = empirical_cov(&draws);
        let target = 0.01 / d as f64;
        for r in 0..d {
            assert!((c[(r, r)] / target - 1.0).abs() < 0.02);
            for s in 0..r {
                assert!(c[(r, s)].abs() < 0.02 * target);
            }
        }
    }

    #[test]
    fn adaptive_scale_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rm = RunningMoments::new(1);
        // stream with unit sample variance
        for k in 0..1000 {
            rm.update(&DVector::from_vec(vec![if k % 2 == 0 { 1.0 } else { -1.0 }])).unwrap();
        }
        let scale = rm.cov()[(0, 0)];
        let cfg = AmConfig { w1: 1.0, ..AmConfig::default() };
        let x = DVector::zeros(1);
        let n = 100_000;
        let v: f64 = (0..n).map(|_| euclidean_am_propose(&x, &rm, &cfg, &mut rng).0[0].powi(2)).sum::<f64>() / n as f64;
        assert!((v / (2.38f64.powi(2) * scale) - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn euclidean_density_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rm = RunningMoments::new(3);
        for _ in 0..50 {
            rm.update(&DVector::from_fn(3, |_, _| rng.random::<f64>())).unwrap();
        }
        let cfg = AmConfig::default();
        let x = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let y = DVector::from_vec(vec![0.15, 0.1, -0.2]);
        let a = euclidean_am_logdensity(&x, &y, &rm, &cfg);
        let b = euclidean_am_logdensity(&y, &x, &rm, &cfg);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn manifold_proposals_are_spd_with_matched_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hm = SpdMatrix::new(DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.3, 0.6, 1.0, -0.2, 0.3, -0.2, 0.5])).unwrap();
        let cfg = AmConfig::default();
        let comp = adaptive_iw_component(&hm, cfg.iw_dof_for(3)).unwrap();
        let n = 100_000;
        let mut sum = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let s = inverse_wishart_sample(&comp, &mut rng).unwrap();
            sum += s.matrix();
        }
        let mean = sum / n as f64;
        for r in 0..3 {
            for c in 0..3 {
                assert!((mean[(r, c)] - hm.matrix()[(r, c)]).abs() <= 0.03 * hm.matrix()[(r, c)].abs(), "({r},{c})");
            }
        }
        let fixed = SpdMatrix::identity(3);
        for _ in 0..1000 {
            let p = manifold_iw_propose(&hm, Some(&hm), &fixed, &cfg, &mut rng).unwrap();
            assert!(p.proposal.matrix().clone().cholesky().is_some());
            assert!(p.log_q_forward.is_finite() && p.log_q_backward.is_finite());
        }
    }

    #[test]
    fn invalid_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AmConfig { iw_dof: Some(3.0), ..AmConfig::default() };
        let s = SpdMatrix::identity(2);
        assert!(matches!(manifold_iw_propose(&s, None, &s, &cfg, &mut rng), Err(Error::InvalidDof { .. })));
    }

    #[test]
    fn scalar_iw_is_inverse_gamma() {
        // IW(lambda, p) in one dimension is IG(p/2, lambda/2); the matched
        // adaptive component has mean equal to the history mean
        let hm = SpdMatrix::from_diagonal(&[0.7]).unwrap();
        let comp = adaptive_iw_component(&hm, 11.0).unwrap();
        let ig = InvGamma::new(5.5, comp.lambda.matrix()[(0, 0)] / 2.0).unwrap();
        assert!((ig.scale / (ig.shape - 1.0) - 0.7).abs() < 1e-12);
        for x in [0.2, 0.7, 1.9] {
            let s = SpdMatrix::from_diagonal(&[x]).unwrap();
            assert!((inverse_wishart_logpdf(&s, &comp).unwrap() - ig.logpdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn manifold_kernel_detailed_balance_1d() {
        // frozen history: the MH acceptance identity pi(x) q(y) a(x,y) = pi(y) q(x) a(y,x)
        let cfg = AmConfig::default();
        let hm = SpdMatrix::from_diagonal(&[1.3]).unwrap();
        let fixed = SpdMatrix::from_diagonal(&[9.0]).unwrap();
        let target = InvGamma::new(3.0, 2.0).unwrap();
        let p = cfg.iw_dof_for(1);
        let a = adaptive_iw_component(&hm, p).unwrap();
        let f = InverseWishartParams::new(fixed, p).unwrap();
        let q = |x: f64| iw_mixture_logpdf(&SpdMatrix::from_diagonal(&[x]).unwrap(), Some(&a), &f, cfg.w1).unwrap();
        let alpha = |x: f64, y: f64| (target.logpdf(y) - target.logpdf(x) + q(x) - q(y)).min(0.0).exp();
        for (x, y) in [(0.5, 1.2), (2.0, 0.3), (1.0, 1.0001)] {
            let lhs = target.logpdf(x).exp() * q(y).exp() * alpha(x, y);
            let rhs = target.logpdf(y).exp() * q(x).exp() * alpha(y, x);
            assert!((lhs - rhs).abs() < 1e-12 * lhs.max(rhs));
        }
    }

    #[test]
    fn adaptive_block_targets_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut blk = AdaptiveBlock::new(2);
        let cfg = AmConfig::default();
        let target = |x: &DVector<f64>| Ok(-0.5 * (x[0] * x[0] / 4.0 + (x[1] - 1.0).powi(2)));
        let mut x = DVector::zeros(2);
        let mut lp = target(&x).unwrap();
        let mut sum = DVector::zeros(2);
        let n = 200_000;
        for _ in 0..n {
            blk.step(&mut x, &mut lp, &cfg, true, &mut rng, target).unwrap();
            sum += &x;
        }
        let m = sum / n as f64;
        assert!(m[0].abs() < 0.05 && (m[1] - 1.0).abs() < 0.05, "{m}");
        let c = blk.rm.cov();
        assert!((c[(0, 0)] / 4.0 - 1.0).abs() < 0.1 && (c[(1, 1)] - 1.0).abs() < 0.1);
        let rate = blk.acceptance_rate();
        assert!(rate > 0.1 && rate < 0.9);
    }
}
